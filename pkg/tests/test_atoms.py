import numpy as np
import pytest

from conftest import feasible, set_vars
from ldmma.atoms import (Atom, SlotCollisionError, conjugate, epigraph_rows, evaluate, perspective_conjugate,
                         perspective_conjugate_rows)
from ldmma.conic import ConeDimensionError, ProgramBuilder

DIM = 6
GROUPS = [np.arange(0, 2), np.arange(2, 5), np.arange(5, 6)]


def make_atoms(rng):
    A = rng.normal(size=(4, DIM))
    return {"l1": Atom.l1(DIM), "group": Atom.group_l2(GROUPS, 1), "half": Atom.half_sq_l2(DIM),
            "ls": Atom.least_squares(A, rng.normal(size=4))}


def dual_sample(atom, rng):
    """A random y in the conjugate's domain."""
    kind = atom.kind.value
    if kind == "l1":
        return rng.uniform(-1, 1, DIM)
    if kind == "group_l2":
        y = np.zeros(DIM)
        g = rng.normal(size=atom.group.size)
        y[atom.group] = g / np.linalg.norm(g) * rng.uniform(0, 1)
        return y
    if kind == "half_sq_l2":
        return rng.normal(scale=2, size=DIM)
    return atom.A.T @ rng.normal(size=atom.A.shape[0])


def subgradient(atom, x):
    kind = atom.kind.value
    if kind == "l1":
        return np.sign(x)
    if kind == "group_l2":
        y = np.zeros(DIM)
        y[atom.group] = x[atom.group] / np.linalg.norm(x[atom.group])
        return y
    if kind == "half_sq_l2":
        return x.copy()
    return atom.A.T @ (atom.A @ x - atom.b)


def test_eval_examples():
    assert evaluate(Atom.l1(3), [1, -2, 3]) == 6
    assert evaluate(Atom.half_sq_l2(2), [3, 4]) == 12.5
    assert evaluate(Atom.least_squares(np.eye(2), [1, 1]), [0, 0]) == 1.0
    assert evaluate(Atom.group_l2([[0, 1], [2]], 0), [3, 4, 7]) == 5.0


def test_conjugate_examples():
    assert conjugate(Atom.l1(2), [0.5, -0.9])[0] == 0.0
    assert conjugate(Atom.l1(2), [1.2, 0.0])[0] == np.inf
    assert conjugate(Atom.group_l2([[0, 1]], 0), [0.6, 0.8])[0] == 0.0
    assert conjugate(Atom.group_l2([[0, 1]], 0), [0.9, 0.8])[0] == np.inf
    assert conjugate(Atom.half_sq_l2(2), [3, 4])[0] == 12.5


def test_least_squares_conjugate_identity_data(rng):
    atom = Atom.least_squares(np.eye(4), np.zeros(4))
    y = rng.normal(size=4)
    value, cert = conjugate(atom, y)
    assert value == pytest.approx(0.5 * y @ y, abs=1e-12)
    assert np.allclose(cert["w"], y)


def test_least_squares_conjugate_outside_range():
    # A' has range span{e1}; y with a second component is not attainable
    atom = Atom.least_squares(np.array([[1.0, 0.0], [2.0, 0.0]]), [1.0, 0.0])
    assert conjugate(atom, [0.0, 1.0])[0] == np.inf
    value, cert = conjugate(atom, [1.0, 0.0])
    assert np.isfinite(value)
    assert np.allclose(atom.A.T @ cert["w"], [1.0, 0.0])


def test_least_squares_conjugate_matches_sup_definition(rng):
    A, b = rng.normal(size=(5, 3)), rng.normal(size=5)
    atom = Atom.least_squares(A, b)
    y = rng.normal(size=3)
    # sup_x y'x - 1/2 |Ax - b|^2 is attained at A'A x = A'b + y
    x = np.linalg.solve(A.T @ A, A.T @ b + y)
    assert conjugate(atom, y)[0] == pytest.approx(y @ x - evaluate(atom, x), abs=1e-10)


def test_dimension_mismatch():
    with pytest.raises(ConeDimensionError):
        evaluate(Atom.l1(3), [1.0, 2.0])
    with pytest.raises(ConeDimensionError):
        conjugate(Atom.half_sq_l2(2), [1.0])


def test_group_partition_checked():
    with pytest.raises(ValueError):
        Atom.group_l2([[0, 1], [1, 2]], 0)


@pytest.mark.parametrize("name", ["l1", "group", "half", "ls"])
def test_fenchel_young(name, rng):
    atom = make_atoms(rng)[name]
    for _ in range(10_000):
        x = rng.normal(scale=2, size=DIM)
        y = dual_sample(atom, rng)
        value, _ = conjugate(atom, y)
        assert evaluate(atom, x) + value >= x @ y - 1e-10


@pytest.mark.parametrize("name", ["l1", "group", "half", "ls"])
def test_fenchel_young_equality_at_subgradients(name, rng):
    atom = make_atoms(rng)[name]
    for _ in range(1000):
        x = rng.normal(scale=2, size=DIM)
        y = subgradient(atom, x)
        value, _ = conjugate(atom, y)
        assert evaluate(atom, x) + value == pytest.approx(x @ y, abs=1e-8)


def test_half_square_is_self_conjugate(rng):
    atom = Atom.half_sq_l2(DIM)
    for _ in range(100):
        x = rng.normal(size=DIM)
        y_star = x  # maximizer of x'y - 1/2 |y|^2
        biconj = x @ y_star - conjugate(atom, y_star)[0]
        assert biconj == pytest.approx(evaluate(atom, x), abs=1e-10)
        assert conjugate(atom, x)[0] == pytest.approx(evaluate(atom, x), abs=1e-10)


# --- encodings

def epigraph_program(atom):
    B = ProgramBuilder()
    x, r = B.var("x", atom.dim), B.var("r", 1)
    epigraph_rows(atom, B, x, r, name="epi")
    return B.build()


def epigraph_point(atom, layout, prog, x, r):
    values = {"x": x, "r": r}
    if atom.kind.value == "l1":
        # the cheapest split; any feasible split implies this one is feasible
        values["epi.pos"] = np.maximum(x, 0)
        values["epi.neg"] = np.maximum(-x, 0)
    return set_vars(layout, prog.n, **values)


def perspective_program(atom):
    B = ProgramBuilder()
    rho, lam, s = B.var("rho", atom.dim), B.var("lam", 1), B.var("s", 1)
    perspective_conjugate_rows(atom, B, rho, lam, s, name="conj")
    return B.build()


def test_epigraph_examples():
    half = Atom.half_sq_l2(2)
    prog, lay = epigraph_program(half)
    assert feasible(prog, epigraph_point(half, lay, prog, np.array([3.0, 4.0]), 12.5))
    assert not feasible(prog, epigraph_point(half, lay, prog, np.array([3.0, 4.0]), 12.4))
    group = Atom.group_l2([[0, 1]], 0)
    prog, lay = epigraph_program(group)
    assert feasible(prog, epigraph_point(group, lay, prog, np.array([3.0, 4.0]), 5.0))
    assert not feasible(prog, epigraph_point(group, lay, prog, np.array([3.0, 4.0]), 4.99))
    l1 = Atom.l1(2)
    prog, lay = epigraph_program(l1)
    assert feasible(prog, epigraph_point(l1, lay, prog, np.array([1.0, -1.0]), 2.0))
    assert not feasible(prog, epigraph_point(l1, lay, prog, np.array([1.0, -1.0]), 1.99))


def test_perspective_examples():
    l1 = Atom.l1(2)
    prog, lay = perspective_program(l1)
    assert feasible(prog, set_vars(lay, prog.n, rho=[0, 0], lam=0, s=0))
    assert not feasible(prog, set_vars(lay, prog.n, rho=[1e-3, 0], lam=0, s=0))
    half = Atom.half_sq_l2(2)
    prog, lay = perspective_program(half)
    assert feasible(prog, set_vars(lay, prog.n, rho=[1, 0], lam=2, s=0.25))
    assert not feasible(prog, set_vars(lay, prog.n, rho=[1, 0], lam=2, s=0.24))
    group = Atom.group_l2([[0, 1]], 0)
    prog, lay = perspective_program(group)
    assert feasible(prog, set_vars(lay, prog.n, rho=[0.6, 0.8], lam=1, s=0))


@pytest.mark.parametrize("name", ["l1", "group", "half", "ls"])
def test_epigraph_soundness(name, rng):
    atom = make_atoms(rng)[name]
    prog, lay = epigraph_program(atom)
    for _ in range(1000):
        x = rng.normal(size=DIM)
        val = evaluate(atom, x)
        r = val + rng.choice([-1, 1]) * 10 ** rng.uniform(-6, 0)
        direct = val <= r
        assert feasible(prog, epigraph_point(atom, lay, prog, x, r)) == direct


@pytest.mark.parametrize("name", ["l1", "group", "half"])
def test_perspective_soundness(name, rng):
    atom = make_atoms(rng)[name]
    prog, lay = perspective_program(atom)
    for _ in range(1000):
        lam = rng.uniform(0, 2) if rng.random() > 0.1 else 0.0
        rho = rng.normal(size=DIM)
        if atom.kind.value == "group_l2":
            rho[atom.off_group] = 0.0 if rng.random() < 0.8 else rho[atom.off_group]
        scale = rng.uniform(0.2, 1.5)
        if lam > 0:
            rho *= scale * lam / max(np.abs(rho).max(), 1e-12)
        if atom.kind.value == "half_sq_l2":
            val = perspective_conjugate(atom, rho, lam)
            if not np.isfinite(val):
                continue
            s = val + rng.choice([-1, 1]) * 10 ** rng.uniform(-6, 0)
        else:
            s = 0.0
            if lam == 0 and rng.random() < 0.5:
                rho[:] = 0.0
        if abs(_margin(atom, rho, lam)) < 1e-6:
            continue  # too close to the domain boundary to call
        direct = perspective_conjugate(atom, rho, lam, tol=0.0) <= s
        assert feasible(prog, set_vars(lay, prog.n, rho=rho, lam=lam, s=s)) == direct


def _margin(atom, rho, lam):
    kind = atom.kind.value
    if kind == "l1":
        return lam - np.abs(rho).max()
    if kind == "group_l2":
        return min(lam - np.linalg.norm(rho[atom.group]), -np.abs(rho[atom.off_group]).max(initial=0.0) + 1e-3)
    return 1.0


def test_slot_collision():
    B = ProgramBuilder()
    x = B.var("x", 2)
    with pytest.raises(SlotCollisionError):
        epigraph_rows(Atom.l1(2), B, x, x[0])
    with pytest.raises(SlotCollisionError):
        perspective_conjugate_rows(Atom.half_sq_l2(1), B, x[0], x[0], x[1])


def test_slot_size_mismatch():
    B = ProgramBuilder()
    x, r = B.var("x", 3), B.var("r", 1)
    with pytest.raises(ConeDimensionError):
        epigraph_rows(Atom.l1(2), B, x, r)
