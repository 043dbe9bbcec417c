import numpy as np
import pytest

from ldmma.data import gen_sgl, gen_svm
from ldmma.models import ElasticNet, MatrixCompletion, SparseGroupLasso, SvmCv, UnsupportedVariantError
from ldmma.reformulation import assemble_subproblem, duality_gap_value
from ldmma.algorithm import initialize
from ldmma.solver import SolverSettings, solve

SUB = SolverSettings(tol_gap=1e-9, tol_primal=1e-9, tol_dual=1e-9)


def identity_en(b):
    n = b.size
    return ElasticNet(np.eye(n), b, np.eye(n), np.zeros(n))


def test_ridge_closed_form(rng):
    b = rng.normal(size=7)
    for lam2 in (0.1, 1.0, 4.0):
        x = identity_en(b).ll_solve([0.0, lam2]).x
        assert np.allclose(x, b / (1 + lam2), atol=1e-6)


def test_soft_threshold_closed_form(rng):
    b = rng.normal(scale=2, size=9)
    for lam1 in (0.2, 0.9, 2.5):
        x = identity_en(b).ll_solve([lam1, 0.0]).x
        assert np.allclose(x, np.sign(b) * np.maximum(np.abs(b) - lam1, 0), atol=1e-6)


def test_large_l1_weight_gives_zero(rng):
    A, b = rng.normal(size=(10, 5)), rng.normal(size=10)
    model = ElasticNet(A, b, A, b)
    x = model.ll_solve([1.01 * np.abs(A.T @ b).max(), 0.3]).x
    assert np.allclose(x, 0.0, atol=1e-8)


def test_single_group_block_soft_threshold(rng):
    b = rng.normal(size=6)
    model = SparseGroupLasso(np.eye(6), b, np.eye(6), np.zeros(6), groups=[np.arange(6)])
    nb = np.linalg.norm(b)
    for lam in (0.3 * nb, 0.8 * nb, 1.2 * nb):
        x = model.ll_solve([lam, 0.0]).x
        assert np.allclose(x, max(1 - lam / nb, 0.0) * b, atol=1e-6)


def test_regression_errors():
    model = ElasticNet(np.eye(2), [1.0, 1.0], np.eye(3)[:, :2], [1.0, 2.0, 3.0], np.eye(2), [0.0, 2.0])
    assert model.val_error(np.zeros(2)) == pytest.approx(0.5 * 14 / 3)
    assert model.val_error(np.array([1.0, 2.0])) == pytest.approx(0.5 * 9 / 3)
    assert model.test_error(np.array([0.0, 2.0])) == 0.0
    perfect = ElasticNet(np.eye(2), [1.0, 1.0], np.eye(2), [1.0, -1.0])
    assert perfect.val_error(np.array([1.0, -1.0])) == 0.0
    with pytest.raises(ValueError):
        perfect.test_error(np.zeros(2))


def test_shape_and_hyperparameter_checks(rng):
    with pytest.raises(ValueError):
        ElasticNet(np.eye(3), np.zeros(2), np.eye(3), np.zeros(3))
    model = identity_en(np.ones(3))
    with pytest.raises(ValueError):
        model.ll_solve([-0.1, 1.0])
    with pytest.raises(ValueError):
        model.ll_solve([0.1])
    with pytest.raises(ValueError):
        SparseGroupLasso(np.eye(3), np.zeros(3), np.eye(3), np.zeros(3), groups=[[0, 1], [1, 2]])


@pytest.mark.parametrize("lam", [(0.01, 0.01), (0.5, 0.0), (0.0, 0.5), (3.0, 3.0)])
def test_elastic_net_certificate(lam, rng):
    A = rng.normal(size=(15, 25))
    model = ElasticNet(A, A[:, :3].sum(1) + rng.normal(size=15), A[:5], np.zeros(5))
    z = model.ll_solve(lam).point
    assert -1e-9 <= duality_gap_value(model, z) <= 1e-6


def test_sgl_certificate():
    ds = gen_sgl(0, 30, 30, 3)
    model = SparseGroupLasso.from_dataset(ds)
    for lam in (np.full(4, 0.1), np.array([0.0, 1.0, 2.0, 0.0]), np.full(4, 5.0)):
        z = model.ll_solve(lam).point
        assert -1e-9 <= duality_gap_value(model, z) <= 1e-6


def test_svm_certificate_and_refit_box():
    model = SvmCv.from_dataset(gen_svm(3, 60, 5), K=3, seed=1)
    for lam in (0.1, 2.0):
        hyper = np.concatenate([[lam], np.full(5, 0.05)])
        z = model.ll_solve(hyper).point
        assert -1e-9 <= duality_gap_value(model, z) <= 1e-6
        w, _ = model.refit(hyper)
        assert np.all(np.abs(w) <= 0.05 + 1e-8)


def _separable_svm():
    A = np.array([[2.0, 0.0], [3.0, 1.0], [-2.0, 0.5], [-3.0, -1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    return SvmCv(A, y, folds=[0, 1, 0, 1], K=2, test_A=A, test_labels=y)


def test_svm_separable_validation_hinge_zero():
    model = _separable_svm()
    w, c = np.array([1.0, 0.0]), 0.0  # margin y (a'w - c) >= 2
    x = np.concatenate([w, [c], w, [c]])
    assert model.val_error(x) == 0.0
    # the refit on all four points separates them with unit margin
    assert model.test_error(None, np.array([1e-3, 10.0, 10.0])) == pytest.approx(0.0, abs=1e-7)


def test_svm_validation():
    A = np.eye(3)
    with pytest.raises(ValueError):
        SvmCv(A, [1, 0, 1], [0, 1, 0], 2)
    with pytest.raises(ValueError):
        SvmCv(A, [1, -1, 1], [0, 1, 0], 2, wbar_lb=0.0)
    with pytest.raises(ValueError):
        SvmCv(A, [1, -1, 1], [0, 0, 0], 2)


def test_svm_search_maps_to_upper_box():
    model = _separable_svm()
    assert np.array_equal(model.search_to_lam([0.5]), [0.5, 10.0, 10.0])


def test_svm_subproblem_keeps_gap_and_box():
    model = SvmCv.from_dataset(gen_svm(0, 60, 4), K=3, seed=0)
    anchor = initialize(model, np.full(5, 0.1))
    sub = model.build_subproblem(anchor, 1.0, 1e-3)
    sol = solve(sub.program, SUB)
    z = sub.point(sol.z)
    assert duality_gap_value(model, z) <= 1.0 + 1e-6
    assert model.epigraph_violation(z) <= 1e-8
    assert model.ul_objective(z.x) <= model.ul_objective(anchor.x) + 1e-8


def test_matrix_completion_unsupported():
    with pytest.raises(UnsupportedVariantError):
        MatrixCompletion()


def test_specialized_matches_generic_sgl():
    model = SparseGroupLasso.from_dataset(gen_sgl(2, 30, 30, 3))
    anchor = initialize(model, np.full(4, 0.1))
    a = solve(model.build_subproblem(anchor, 1.0, 1e-3).program, SUB)
    b = solve(assemble_subproblem(model, anchor, 1.0, 1e-3).program, SUB)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)
