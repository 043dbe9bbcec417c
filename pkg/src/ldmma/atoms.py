"""Loss and regularizer atoms, their conjugates, and conic encodings.

Each atom knows how to evaluate itself, evaluate its Fenchel conjugate, and
emit cone constraints for its epigraph ``P(x) <= r`` and for the perspective
of its conjugate ``lam * P*(rho / lam) <= s``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .conic import ConeDimensionError, Expr, Var, vstack

SQRT2 = np.sqrt(2.0)


class AtomKind(str, enum.Enum):
    L1 = "l1"
    GROUP_L2 = "group_l2"
    HALF_SQ_L2 = "half_sq_l2"
    LEAST_SQUARES = "least_squares"


class SlotCollisionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Atom:
    kind: AtomKind
    dim: int
    groups: tuple = None
    index: int = None
    A: np.ndarray = None
    b: np.ndarray = None

    def __post_init__(self):
        if self.kind == AtomKind.GROUP_L2:
            seen = np.sort(np.concatenate([np.asarray(g, dtype=int) for g in self.groups]))
            if seen.size != self.dim or np.any(seen != np.arange(self.dim)):
                raise ValueError("groups must partition range(dim)")
            if not 0 <= self.index < len(self.groups):
                raise ValueError("group index out of range")
        if self.kind == AtomKind.LEAST_SQUARES:
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            b = np.asarray(self.b, dtype=float).ravel()
            if A.shape != (b.size, self.dim):
                raise ConeDimensionError("least-squares data has inconsistent shape")
            U, S, Vt = np.linalg.svd(A, full_matrices=False)
            rank = int(np.sum(S > S.max(initial=0.0) * max(A.shape) * np.finfo(float).eps))
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "_svd", (U[:, :rank], S[:rank], Vt[:rank]))

    @classmethod
    def l1(cls, dim):
        return cls(AtomKind.L1, int(dim))

    @classmethod
    def group_l2(cls, groups, index):
        groups = tuple(np.asarray(g, dtype=int) for g in groups)
        dim = int(sum(g.size for g in groups))
        return cls(AtomKind.GROUP_L2, dim, groups=groups, index=int(index))

    @classmethod
    def half_sq_l2(cls, dim):
        return cls(AtomKind.HALF_SQ_L2, int(dim))

    @classmethod
    def least_squares(cls, A, b):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(AtomKind.LEAST_SQUARES, A.shape[1], A=A, b=b)

    @property
    def group(self):
        return self.groups[self.index]

    @property
    def off_group(self):
        mask = np.ones(self.dim, dtype=bool)
        mask[self.group] = False
        return np.flatnonzero(mask)


def _vec(atom, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (atom.dim,):
        raise ConeDimensionError(f"expected a vector of length {atom.dim}, got shape {v.shape}")
    return v


def evaluate(atom, x):
    x = _vec(atom, x)
    if atom.kind == AtomKind.L1:
        return float(np.abs(x).sum())
    if atom.kind == AtomKind.GROUP_L2:
        return float(np.linalg.norm(x[atom.group]))
    if atom.kind == AtomKind.HALF_SQ_L2:
        return 0.5 * float(x @ x)
    r = atom.A @ x - atom.b
    return 0.5 * float(r @ r)


def conjugate(atom, y, tol=1e-9):
    """Return ``(value, certificate)`` for the Fenchel conjugate at ``y``.

    The value is ``inf`` outside the domain.  Domain membership is tested with
    relative slack ``tol``.  For least squares the certificate is the ``w``
    attaining the minimum in ``min {1/2 |w + b|^2 - 1/2 |b|^2 : A'w = y}``;
    for the other atoms it is ``None``.
    """
    y = _vec(atom, y)
    if atom.kind == AtomKind.L1:
        ok = np.abs(y).max(initial=0.0) <= 1.0 + tol
        return (0.0 if ok else np.inf), None
    if atom.kind == AtomKind.GROUP_L2:
        off = atom.off_group
        ok = (np.linalg.norm(y[atom.group]) <= 1.0 + tol
              and np.abs(y[off]).max(initial=0.0) <= tol)
        return (0.0 if ok else np.inf), None
    if atom.kind == AtomKind.HALF_SQ_L2:
        return 0.5 * float(y @ y), None
    U, S, Vt = atom._svd
    coef = Vt @ y
    if np.linalg.norm(y - Vt.T @ coef) > tol * max(1.0, np.linalg.norm(y)):
        return np.inf, None
    w_ln = U @ (coef / S)
    w = w_ln - (atom.b - U @ (U.T @ atom.b))
    value = 0.5 * float((w + atom.b) @ (w + atom.b)) - 0.5 * float(atom.b @ atom.b)
    return value, {"w": w}


def perspective_conjugate(atom, rho, lam, tol=1e-9):
    """``lam * P*(rho / lam)`` with the closure convention at ``lam = 0``."""
    rho = _vec(atom, rho)
    lam = float(lam)
    if lam < -tol:
        return np.inf
    if lam <= 0.0:
        return 0.0 if np.abs(rho).max(initial=0.0) <= tol else np.inf
    if atom.kind == AtomKind.HALF_SQ_L2:
        return 0.5 * float(rho @ rho) / lam
    if atom.kind == AtomKind.L1:
        return 0.0 if np.abs(rho).max(initial=0.0) <= lam + tol * max(1.0, lam) else np.inf
    if atom.kind == AtomKind.GROUP_L2:
        ok = (np.linalg.norm(rho[atom.group]) <= lam + tol * max(1.0, lam)
              and np.abs(rho[atom.off_group]).max(initial=0.0) <= tol * max(1.0, lam))
        return 0.0 if ok else np.inf
    raise ValueError("perspective of the least-squares conjugate is not used")


def _as_expr(slot):
    return slot.e if isinstance(slot, Var) else slot


def _check_disjoint(*slots):
    seen = set()
    for slot in slots:
        cols = slot.columns()
        if seen & cols:
            raise SlotCollisionError("slots share variables")
        seen |= cols


def epigraph_rows(atom, builder, x, r, name="epi"):
    """Add constraints encoding ``P(x) <= r``; returns the constraints added.

    ``x`` is a vector expression of length ``dim`` and ``r`` a scalar expression.
    """
    x, r = _as_expr(x), _as_expr(r)
    if x.size != atom.dim or r.size != 1:
        raise ConeDimensionError("epigraph slot sizes do not match the atom")
    _check_disjoint(x, r)
    out = []
    if atom.kind == AtomKind.L1:
        u = builder.var(f"{name}.pos", atom.dim)
        v = builder.var(f"{name}.neg", atom.dim)
        out.append(builder.zero(f"{name}.split", x - u.e + v.e))
        out.append(builder.nonneg(f"{name}.parts", vstack([u, v])))
        out.append(builder.nonneg(f"{name}.sum", r - u.e.sum() - v.e.sum()))
    elif atom.kind == AtomKind.GROUP_L2:
        out.append(builder.soc(name, r, x[atom.group]))
    elif atom.kind == AtomKind.HALF_SQ_L2:
        out.append(builder.sq_le(name, x, 2.0 * r))
    else:
        out.append(builder.sq_le(name, atom.A @ x - atom.b, 2.0 * r))
    return [c for c in out if c is not None]


def perspective_conjugate_rows(atom, builder, rho, lam, s, name="conj"):
    """Add constraints encoding ``lam * P*(rho / lam) <= s``."""
    rho, lam, s = _as_expr(rho), _as_expr(lam), _as_expr(s)
    if rho.size != atom.dim or lam.size != 1 or s.size != 1:
        raise ConeDimensionError("perspective slot sizes do not match the atom")
    _check_disjoint(rho, lam, s)
    out = []
    if atom.kind == AtomKind.L1:
        out.append(builder.nonneg(f"{name}.box", vstack([lam - rho, lam + rho])))
        out.append(builder.zero(f"{name}.s", s))
    elif atom.kind == AtomKind.GROUP_L2:
        out.append(builder.soc(name, lam, rho[atom.group]))
        off = atom.off_group
        if off.size:
            out.append(builder.zero(f"{name}.off", rho[off]))
        out.append(builder.zero(f"{name}.s", s))
    elif atom.kind == AtomKind.HALF_SQ_L2:
        out.append(builder.soc(name, s + lam, vstack([SQRT2 * rho, s - lam])))
    else:
        raise ValueError("perspective of the least-squares conjugate is not used")
    return [c for c in out if c is not None]
