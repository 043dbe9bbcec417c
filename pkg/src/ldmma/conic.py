"""Standard-form conic programs and cone geometry.

A program is stored as

    minimize    c'z + obj_offset
    subject to  A z + s = b,   s in K_1 x ... x K_q

where each K_i is a zero cone, a nonnegative orthant or a second-order
cone.  Second-order cone blocks are laid out as ``(t, x)`` with ``t`` first,
so ``(t, x)`` is a member when ``||x|| <= t``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class ConeKind(str, enum.Enum):
    ZERO = "zero"
    NONNEG = "nonneg"
    SOC = "soc"


@dataclass(frozen=True)
class Cone:
    kind: ConeKind
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConeKind(self.kind))

    @classmethod
    def zero(cls, dim):
        return cls(ConeKind.ZERO, int(dim))

    @classmethod
    def nonneg(cls, dim):
        return cls(ConeKind.NONNEG, int(dim))

    @classmethod
    def soc(cls, dim):
        return cls(ConeKind.SOC, int(dim))


@dataclass(frozen=True)
class ConicProgram:
    """Immutable standard-form conic program.

    ``A`` is kept in compressed-column form; ``c`` and ``b`` are dense.
    """

    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple
    obj_offset: float = 0.0

    def __post_init__(self):
        c = np.array(self.c, dtype=float).ravel()
        b = np.array(self.b, dtype=float).ravel()
        A = sp.csc_matrix(self.A, dtype=float)
        c.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "cones", tuple(self.cones))
        object.__setattr__(self, "obj_offset", float(self.obj_offset))

    @property
    def n(self):
        return self.c.size

    @property
    def m(self):
        return self.b.size


class ConeDimensionError(ValueError):
    pass


def validate(program):
    """Return a list of dimension errors; an empty list means the program is valid."""
    errors = []
    m_rows, n_cols = program.A.shape
    total = 0
    for i, cone in enumerate(program.cones):
        if cone.kind == ConeKind.SOC and cone.dim < 2:
            errors.append(f"cone {i}: SOC dim < 2")
        elif cone.dim < 1:
            errors.append(f"cone {i}: dim < 1")
        total += cone.dim
    if total != program.b.size:
        errors.append(f"cone/row mismatch: cones sum to {total}, |b| = {program.b.size}")
    if m_rows != program.b.size:
        errors.append(f"A has {m_rows} rows but |b| = {program.b.size}")
    if n_cols != program.c.size:
        errors.append(f"A has {n_cols} columns but |c| = {program.c.size}")
    if not (np.all(np.isfinite(program.c)) and np.all(np.isfinite(program.b))
            and np.all(np.isfinite(program.A.data))):
        errors.append("non-finite data")
    return errors


def _check_dim(s, cone):
    s = np.asarray(s, dtype=float)
    if s.shape != (cone.dim,):
        raise ConeDimensionError(f"vector of shape {s.shape} does not match {cone.kind.value} cone of dim {cone.dim}")
    return s


def project_onto_cone(s, cone):
    """Euclidean projection of ``s`` onto ``cone``."""
    s = _check_dim(s, cone)
    if cone.kind == ConeKind.ZERO:
        return np.zeros_like(s)
    if cone.kind == ConeKind.NONNEG:
        return np.maximum(s, 0.0)
    t, x = s[0], s[1:]
    nx = np.linalg.norm(x)
    if nx <= t:
        return s.copy()
    if nx <= -t:
        return np.zeros_like(s)
    a = 0.5 * (t + nx)
    out = np.empty_like(s)
    out[0] = a
    out[1:] = (a / nx) * x
    return out


def project_onto_polar(s, cone):
    """Projection onto the polar cone, i.e. ``-K*``."""
    s = _check_dim(s, cone)
    if cone.kind == ConeKind.ZERO:
        return s.copy()
    return -project_onto_cone(-s, cone)


def cone_distance(s, cone):
    s = _check_dim(s, cone)
    return float(np.linalg.norm(s - project_onto_cone(s, cone)))


def dual_cone_distance(y, cone):
    """Distance of ``y`` to the dual cone (free space for the zero cone)."""
    y = _check_dim(y, cone)
    if cone.kind == ConeKind.ZERO:
        return 0.0
    return cone_distance(y, cone)


def cone_slices(cones):
    out = []
    start = 0
    for cone in cones:
        out.append(slice(start, start + cone.dim))
        start += cone.dim
    return out


def product_distance(s, cones, dual=False):
    """Largest per-block distance of ``s`` to the cone product (or its dual)."""
    worst = 0.0
    dist = dual_cone_distance if dual else cone_distance
    for sl, cone in zip(cone_slices(cones), cones):
        worst = max(worst, dist(s[sl], cone))
    return worst


def dump(program):
    """Plain-text dump: one line per nonzero of A, then cones, c and b."""
    lines = [f"program n={program.n} m={program.m} offset={program.obj_offset!r}"]
    coo = program.A.tocoo()
    order = np.lexsort((coo.col, coo.row))
    for k in order:
        lines.append(f"A {coo.row[k]} {coo.col[k]} {float(coo.data[k])!r}")
    for cone in program.cones:
        lines.append(f"cone {cone.kind.value} {cone.dim}")
    for j, v in enumerate(program.c):
        if v != 0.0:
            lines.append(f"c {j} {float(v)!r}")
    for i, v in enumerate(program.b):
        if v != 0.0:
            lines.append(f"b {i} {float(v)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Modeling helpers used to lower the structured subproblems to standard form.


@dataclass(frozen=True)
class Var:
    name: str
    offset: int
    size: int

    @property
    def cols(self):
        return np.arange(self.offset, self.offset + self.size)

    @property
    def e(self):
        return Expr({self: sp.identity(self.size, format="csr")}, np.zeros(self.size))

    def __getitem__(self, idx):
        return self.e[idx]

    __array_ufunc__ = None

    def __rmatmul__(self, M):
        M = sp.csr_matrix(M)
        if M.shape[1] != self.size:
            raise ConeDimensionError(f"matrix with {M.shape[1]} columns applied to {self.name} of size {self.size}")
        return Expr({self: M}, np.zeros(M.shape[0]))

    def value(self, z):
        return np.asarray(z)[self.offset:self.offset + self.size]


class Expr:
    """Vector-valued affine expression ``sum_v M_v v + const``."""

    __array_ufunc__ = None

    def __init__(self, terms, const):
        self.terms = dict(terms)
        self.const = np.asarray(const, dtype=float).ravel()

    @property
    def size(self):
        return self.const.size

    @staticmethod
    def constant(vec):
        return Expr({}, np.atleast_1d(np.asarray(vec, dtype=float)))

    def _coerce(self, other):
        if isinstance(other, Expr):
            return other
        if isinstance(other, Var):
            return other.e
        const = np.asarray(other, dtype=float).ravel()
        if const.size == 1:
            const = np.repeat(const, self.size)
        return Expr.constant(const)

    def broadcast(self, n):
        """Repeat a scalar expression ``n`` times."""
        if self.size == n:
            return self
        if self.size != 1:
            raise ConeDimensionError(f"cannot broadcast size {self.size} to {n}")
        ones = sp.csr_matrix(np.ones((n, 1)))
        return Expr({v: sp.csr_matrix(ones @ M) for v, M in self.terms.items()}, np.repeat(self.const, n))

    def __add__(self, other):
        other = self._coerce(other)
        if other.size == 1 and self.size > 1:
            other = other.broadcast(self.size)
        elif self.size == 1 and other.size > 1:
            return self.broadcast(other.size) + other
        if other.size != self.size:
            raise ConeDimensionError(f"adding expressions of size {self.size} and {other.size}")
        terms = dict(self.terms)
        for v, M in other.terms.items():
            terms[v] = terms[v] + M if v in terms else M
        return Expr(terms, self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return Expr({v: -M for v, M in self.terms.items()}, -self.const)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, alpha):
        alpha = float(alpha)
        return Expr({v: alpha * M for v, M in self.terms.items()}, alpha * self.const)

    __rmul__ = __mul__

    def __rmatmul__(self, M):
        M = sp.csr_matrix(M)
        return Expr({v: sp.csr_matrix(M @ T) for v, T in self.terms.items()}, M @ self.const)

    def __getitem__(self, idx):
        rows = np.arange(self.size)[idx]
        rows = np.atleast_1d(rows)
        return Expr({v: M[rows] for v, M in self.terms.items()}, self.const[rows])

    def sum(self):
        return Expr({v: sp.csr_matrix(M.sum(axis=0)) for v, M in self.terms.items()},
                    [self.const.sum()])

    def value(self, z):
        out = self.const.copy()
        for v, M in self.terms.items():
            out += M @ v.value(z)
        return out

    def columns(self):
        cols = set()
        for v, M in self.terms.items():
            used = np.unique(sp.csc_matrix(M).nonzero()[1])
            cols.update((v.offset + used).tolist())
        return cols


def vstack(exprs):
    exprs = [e.e if isinstance(e, Var) else e for e in exprs]
    size = sum(e.size for e in exprs)
    terms = {}
    start = 0
    for e in exprs:
        for v, M in e.terms.items():
            pad = sp.vstack([sp.csr_matrix((start, v.size)), sp.csr_matrix(M),
                             sp.csr_matrix((size - start - e.size, v.size))], format="csr")
            terms[v] = terms[v] + pad if v in terms else pad
        start += e.size
    return Expr(terms, np.concatenate([e.const for e in exprs]) if exprs else np.zeros(0))


@dataclass
class Constraint:
    name: str
    kind: ConeKind
    expr: Expr
    rows: slice = None

    @property
    def cone(self):
        return Cone(self.kind, self.expr.size)

    def violation(self, z):
        return cone_distance(self.expr.value(z), self.cone)


@dataclass
class Layout:
    """Where named variables and constraints live inside a lowered program."""

    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)

    def value(self, name, z):
        return self.variables[name].value(z)

    def dual(self, name, y):
        return [np.asarray(y)[c.rows] for c in self.constraints if c.name == name]


class ProgramBuilder:
    """Incrementally declare variables and conic constraints, then lower."""

    def __init__(self):
        self.variables = {}
        self.constraints = []
        self._n = 0
        self._cost = None

    def var(self, name, size):
        if name in self.variables:
            raise ValueError(f"variable {name!r} already declared")
        v = Var(name, self._n, int(size))
        self._n += int(size)
        self.variables[name] = v
        return v

    def add(self, name, kind, expr):
        expr = expr.e if isinstance(expr, Var) else expr
        kind = ConeKind(kind)
        if kind == ConeKind.SOC and expr.size < 2:
            raise ConeDimensionError(f"constraint {name!r}: SOC dim < 2")
        if expr.size == 0:
            return None
        con = Constraint(name, kind, expr)
        self.constraints.append(con)
        return con

    def zero(self, name, expr):
        return self.add(name, ConeKind.ZERO, expr)

    def nonneg(self, name, expr):
        return self.add(name, ConeKind.NONNEG, expr)

    def soc(self, name, t, x):
        """Add ``||x|| <= t`` for scalar expression ``t``."""
        return self.add(name, ConeKind.SOC, vstack([t, x]))

    def sq_le(self, name, u, rhs):
        """Add ``||u||^2 <= rhs`` for scalar affine ``rhs`` as a rotated cone."""
        return self.soc(name, 0.5 * (rhs + 1.0), vstack([u, 0.5 * (rhs - 1.0)]))

    def minimize(self, expr):
        expr = expr.e if isinstance(expr, Var) else expr
        if expr.size != 1:
            raise ConeDimensionError("objective must be scalar")
        self._cost = expr

    def build(self):
        n = self._n
        c = np.zeros(n)
        offset = 0.0
        if self._cost is not None:
            for v, M in self._cost.terms.items():
                c[v.offset:v.offset + v.size] += np.asarray(sp.csr_matrix(M).todense()).ravel()
            offset = float(self._cost.const[0])
        blocks = []
        b_parts = []
        cones = []
        start = 0
        for con in self.constraints:
            m = con.expr.size
            F = sp.csr_matrix((m, n))
            for v, M in con.expr.terms.items():
                M = sp.coo_matrix(M)
                F = F + sp.csr_matrix((M.data, (M.row, M.col + v.offset)), shape=(m, n))
            # s = F z + g  <=>  (-F) z + s = g
            blocks.append(-F)
            b_parts.append(con.expr.const)
            cones.append(con.cone)
            con.rows = slice(start, start + m)
            start += m
        A = sp.vstack(blocks, format="csc") if blocks else sp.csc_matrix((0, n))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        program = ConicProgram(c, A, b, cones, offset)
        layout = Layout(dict(self.variables), list(self.constraints))
        return program, layout
