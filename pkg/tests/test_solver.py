import numpy as np
import pytest
import scipy.sparse as sp

from ldmma.conic import Cone, ConicProgram, ProgramBuilder, product_distance
from ldmma.solver import Solution, SolverSettings, Status, kkt_residuals, solve

TIGHT = SolverSettings(tol_gap=1e-10, tol_primal=1e-10, tol_dual=1e-10)
# epigraph forms of quadratics recover x only to about sqrt(gap), so closed-form checks run tight
ORACLE = SolverSettings(tol_gap=1e-12, tol_primal=1e-12, tol_dual=1e-12)


def program(c, A, b, cones):
    return ConicProgram(np.asarray(c, float), sp.csc_matrix(np.atleast_2d(np.asarray(A, float))),
                        np.asarray(b, float), cones)


def unit_ball():
    # variables (t, z1, z2); s = b - A z: row 0 pins t = 1, rows 1..3 put (t, z1, z2) in SOC(3)
    A = np.vstack([[1.0, 0.0, 0.0], -np.eye(3)])
    return program([0, 3, 4], A, [1, 0, 0, 0], [Cone.zero(1), Cone.soc(3)])


def ridge_program(b, lam, alpha=1.0):
    n = b.size
    B = ProgramBuilder()
    x, t1, t2 = B.var("x", n), B.var("t1", 1), B.var("t2", 1)
    B.sq_le("fit", x.e - b, 2.0 * t1.e)
    B.sq_le("reg", x, 2.0 * t2.e)
    B.minimize(alpha * (t1.e + lam * t2.e))
    return B.build()


def soft_threshold_program(b, lam):
    n = b.size
    B = ProgramBuilder()
    x, u, v, t = B.var("x", n), B.var("u", n), B.var("v", n), B.var("t", 1)
    B.zero("split", x.e - u.e + v.e)
    B.nonneg("u", u)
    B.nonneg("v", v)
    B.sq_le("fit", x.e - b, 2.0 * t.e)
    B.minimize(t.e + lam * (u.e.sum() + v.e.sum()))
    return B.build()


def test_nonneg_scalar():
    sol = solve(program([1.0], [[-1.0]], [0.0], [Cone.nonneg(1)]))
    assert sol.status == Status.OPTIMAL
    assert sol.z[0] == pytest.approx(0.0, abs=1e-8)
    assert sol.objective == pytest.approx(0.0, abs=1e-8)


def test_unit_ball_linear_objective():
    sol = solve(unit_ball())
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(-5.0, abs=1e-7)
    assert np.allclose(sol.z, [1.0, -0.6, -0.8], atol=1e-7)


def test_unit_ball_matches_grid_search():
    th = np.linspace(0, 2 * np.pi, 200_001)
    r = np.linspace(0, 1, 11)[:, None]
    vals = 3 * r * np.cos(th) + 4 * r * np.sin(th)
    assert solve(unit_ball()).objective == pytest.approx(vals.min(), abs=1e-6)


def test_objective_constant_on_feasible_set():
    A = [[1, 1], [-1, 0], [0, -1]]
    sol = solve(program([1, 1], A, [1, 0, 0], [Cone.zero(1), Cone.nonneg(2)]))
    assert sol.status == Status.OPTIMAL
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_obj_offset_is_reported():
    prog = ConicProgram([1.0], sp.csc_matrix([[-1.0]]), [0.0], [Cone.nonneg(1)], obj_offset=2.5)
    assert solve(prog).objective == pytest.approx(2.5, abs=1e-8)


def test_kkt_residuals_at_analytic_optimum():
    prog = unit_ball()
    z = np.array([1.0, -0.6, -0.8])
    s = prog.b - prog.A @ z
    # A'y + c = 0 gives y_soc = (y0, 3, 4); complementarity with s fixes y0 = 5
    y = np.array([5.0, 5.0, 3.0, 4.0])
    sol = Solution(Status.OPTIMAL, z, s, y, -5.0, 0, ())
    assert max(kkt_residuals(prog, sol)) <= 1e-10
    assert product_distance(y, prog.cones, dual=True) == 0.0


def test_kkt_dual_residual_at_zero_point():
    prog = unit_ball()
    sol = Solution(Status.OPTIMAL, np.zeros(3), prog.b.copy(), np.zeros(4), 0.0, 0, ())
    _, dual, _ = kkt_residuals(prog, sol)
    assert dual == pytest.approx(5.0 / 6.0)


def test_kkt_primal_residual_grows_with_perturbation():
    prog = unit_ball()
    z = np.array([1.0, -0.6, -0.8])
    s = prog.b - prog.A @ z
    y = np.array([5.0, 5.0, 3.0, 4.0])
    norm_b = np.linalg.norm(prog.b)
    for delta in (1e-6, 1e-4, 1e-2):
        d = np.array([0.0, delta, 0.0])
        p, _, _ = kkt_residuals(prog, Solution(Status.OPTIMAL, z + d, s, y, 0.0, 0, ()))
        assert p == pytest.approx(np.linalg.norm(prog.A @ d) / (1 + norm_b), rel=1e-9)


def test_kkt_residuals_dimension_mismatch():
    with pytest.raises(ValueError):
        kkt_residuals(unit_ball(), Solution(Status.OPTIMAL, np.zeros(2), np.zeros(4), np.zeros(4), 0, 0, ()))


def test_ridge_closed_form(rng):
    for lam in (0.0, 0.3, 5.0):
        b = rng.normal(size=8)
        prog, layout = ridge_program(b, lam)
        sol = solve(prog, ORACLE)
        assert sol.status == Status.OPTIMAL
        assert np.allclose(layout.value("x", sol.z), b / (1 + lam), atol=1e-6)


def test_soft_threshold_closed_form(rng):
    for lam in (0.1, 0.7, 3.0):
        b = rng.normal(size=10)
        prog, layout = soft_threshold_program(b, lam)
        sol = solve(prog, ORACLE)
        assert sol.status == Status.OPTIMAL
        expect = np.sign(b) * np.maximum(np.abs(b) - lam, 0.0)
        assert np.allclose(layout.value("x", sol.z), expect, atol=1e-6)


def test_argmin_invariant_under_cost_scaling(rng):
    b = rng.normal(size=6)
    prog, layout = ridge_program(b, 0.5)
    base = layout.value("x", solve(prog, ORACLE).z)
    for alpha in (1e-3, 7.0, 1e3):
        scaled, lay2 = ridge_program(b, 0.5, alpha)
        assert np.allclose(lay2.value("x", solve(scaled, ORACLE).z), base, atol=1e-6)


def random_socp(rng, n=6):
    """Random SOCP with a known strictly complementary primal-dual optimum."""
    cones = [Cone.zero(2), Cone.nonneg(5), Cone.soc(4), Cone.soc(3)]
    m = sum(c.dim for c in cones)
    A = rng.normal(size=(m, n))
    z = rng.normal(size=n)
    s, y = np.zeros(m), np.zeros(m)
    s_parts, y_parts = [], []
    y_parts.append(rng.normal(size=2))
    s_parts.append(np.zeros(2))
    active = rng.random(5) < 0.5
    s_parts.append(np.where(active, 0.0, rng.uniform(0.5, 2, 5)))
    y_parts.append(np.where(active, rng.uniform(0.5, 2, 5), 0.0))
    for dim in (4, 3):
        d = rng.normal(size=dim - 1)
        d /= np.linalg.norm(d)
        a, g = rng.uniform(0.5, 2, 2)
        s_parts.append(a * np.concatenate([[1.0], d]))
        y_parts.append(g * np.concatenate([[1.0], -d]))
    s, y = np.concatenate(s_parts), np.concatenate(y_parts)
    b = A @ z + s
    c = -A.T @ y
    return program(c, A, b, cones), z, float(c @ z)


def test_random_socps_match_constructed_optimum(rng):
    for _ in range(20):
        prog, z_star, obj = random_socp(rng)
        sol = solve(prog, TIGHT)
        assert sol.status == Status.OPTIMAL
        assert sol.objective == pytest.approx(obj, abs=1e-6 * (1 + abs(obj)))
        assert np.allclose(sol.z, z_star, atol=1e-6 * (1 + np.abs(z_star).max()))
        assert max(sol.residuals) <= 1e-10
        assert product_distance(sol.s, prog.cones) <= 1e-9
        assert product_distance(sol.y, prog.cones, dual=True) <= 1e-9


def test_random_socps_agree_with_reference_solver(rng):
    cp = pytest.importorskip("cvxpy")
    for _ in range(5):
        prog, _, _ = random_socp(rng)
        A, b = prog.A.toarray(), prog.b
        z = cp.Variable(prog.n)
        s = b - A @ z
        cons = [s[0:2] == 0, s[2:7] >= 0, cp.SOC(s[7], s[8:11]), cp.SOC(s[11], s[12:14])]
        ref = cp.Problem(cp.Minimize(prog.c @ z), cons)
        ref.solve(solver=cp.CLARABEL)
        assert solve(prog, TIGHT).objective == pytest.approx(ref.value, abs=1e-6)


def test_optimal_solutions_meet_tolerances(rng):
    for _ in range(10):
        prog, _, _ = random_socp(rng)
        settings = SolverSettings()
        sol = solve(prog, settings)
        assert sol.status == Status.OPTIMAL
        p, d, g = kkt_residuals(prog, sol)
        assert p <= settings.tol_primal and d <= settings.tol_dual and g <= settings.tol_gap
        assert max(kkt_residuals(prog, sol)) <= 1e-8


def test_primal_infeasible():
    # z >= 1 and z <= 0
    sol = solve(program([1.0], [[-1.0], [1.0]], [-1.0, 0.0], [Cone.nonneg(2)]))
    assert sol.status == Status.PRIMAL_INFEASIBLE


def test_dual_infeasible():
    sol = solve(program([-1.0], [[-1.0]], [0.0], [Cone.nonneg(1)]))
    assert sol.status == Status.DUAL_INFEASIBLE


def test_iteration_cap(rng):
    prog, _, _ = random_socp(rng)
    sol = solve(prog, SolverSettings(max_iter=1))
    assert sol.status == Status.MAX_ITER
    assert sol.iterations == 1


def test_deterministic(rng):
    prog, _, _ = random_socp(rng)
    a, b = solve(prog), solve(prog)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.y, b.y) and a.iterations == b.iterations


def test_invalid_program_rejected():
    bad = program([1.0], [[1.0], [1.0]], [0.0, 0.0], [Cone.nonneg(1)])
    with pytest.raises(ValueError, match="cone/row mismatch"):
        solve(bad)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(max_iter=0)
    with pytest.raises(ValueError):
        SolverSettings(tol_gap=0.0)
