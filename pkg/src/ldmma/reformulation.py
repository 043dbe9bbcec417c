"""Single-level reformulation, bilinear majorization and subproblem assembly.

The lower-level optimality of ``x`` is replaced by the duality-gap constraint

    F(x, lam, rho) + sum_i lam_i r_i <= eps,     P_i(x) <= r_i,  lam >= 0,

with ``F(x, lam, rho) = l(x) + l*(-sum_i rho_i) + sum_i lam_i P_i*(rho_i / lam_i)``.
Each bilinear term ``lam_i r_i`` is replaced by a convex majorant anchored at
the current iterate, which gives a convex conic subproblem per iteration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .atoms import Atom, conjugate, epigraph_rows, evaluate, perspective_conjugate, perspective_conjugate_rows
from .conic import ProgramBuilder, vstack

# Anchors at or below this value are treated as zero when choosing a majorant.
ANCHOR_FLOOR = 1e-8


class MajorizationKind(str, enum.Enum):
    CAUCHY = "cauchy"
    SQUARE_LINEARIZED = "square_linearized"


class AnchorError(ValueError):
    """Raised when the Cauchy majorant is requested at a non-positive anchor."""


def _check_anchor(kind, xi_bar, zeta_bar):
    if kind == MajorizationKind.CAUCHY and not (xi_bar > 0 and zeta_bar > 0):
        raise AnchorError(f"Cauchy majorant needs positive anchors, got ({xi_bar}, {zeta_bar})")


def majorize(kind, xi, zeta, xi_bar, zeta_bar):
    """Convex majorant of ``xi * zeta`` that is exact at ``(xi_bar, zeta_bar)``."""
    kind = MajorizationKind(kind)
    _check_anchor(kind, xi_bar, zeta_bar)
    if kind == MajorizationKind.CAUCHY:
        return 0.5 * (xi_bar * (zeta / zeta_bar) * zeta + zeta_bar * (xi / xi_bar) * xi)
    # 1/4 (xi+zeta)^2 + 1/4 (xb-zb)^2 - 1/2 (xb-zb)(xi-zeta), rearranged
    return xi * zeta + 0.25 * ((xi - zeta) - (xi_bar - zeta_bar)) ** 2


def majorize_gradient(kind, xi, zeta, xi_bar, zeta_bar):
    kind = MajorizationKind(kind)
    _check_anchor(kind, xi_bar, zeta_bar)
    if kind == MajorizationKind.CAUCHY:
        return zeta_bar * (xi / xi_bar), xi_bar * (zeta / zeta_bar)
    return (0.5 * (xi - xi_bar) + 0.5 * (zeta + zeta_bar),
            0.5 * (zeta - zeta_bar) + 0.5 * (xi + xi_bar))


def majorizer_terms(kind, xi_bar, zeta_bar):
    """Write the majorant as ``sum_k (a_k xi + b_k zeta)^2 + l_xi xi + l_zeta zeta + c0``.

    Returns ``(squares, (l_xi, l_zeta), c0)`` with ``squares`` a list of ``(a_k, b_k)``.
    """
    kind = MajorizationKind(kind)
    _check_anchor(kind, xi_bar, zeta_bar)
    if kind == MajorizationKind.CAUCHY:
        return ([(np.sqrt(zeta_bar / (2.0 * xi_bar)), 0.0), (0.0, np.sqrt(xi_bar / (2.0 * zeta_bar)))],
                (0.0, 0.0), 0.0)
    d = xi_bar - zeta_bar
    return [(0.5, 0.5)], (-0.5 * d, 0.5 * d), 0.25 * d * d


def resolve_kind(policy, xi_bar, zeta_bar):
    """Pick the majorant for one pair under ``policy`` ('auto' or a kind)."""
    if policy in (None, "auto"):
        if xi_bar > ANCHOR_FLOOR and zeta_bar > ANCHOR_FLOOR:
            return MajorizationKind.CAUCHY
        return MajorizationKind.SQUARE_LINEARIZED
    kind = MajorizationKind(policy)
    _check_anchor(kind, xi_bar, zeta_bar)
    return kind


def majorizer_exprs(kind, xi, zeta, xi_bar, zeta_bar):
    """Affine pieces of the majorant for expressions ``xi``/``zeta``.

    Returns ``(u, lin)`` with the majorant equal to ``|u|^2 + lin``.
    """
    squares, (lx, lz), c0 = majorizer_terms(kind, xi_bar, zeta_bar)
    u = vstack([a * xi + b * zeta for a, b in squares])
    return u, lx * xi + lz * zeta + c0


@dataclass
class IteratePoint:
    x: np.ndarray
    lam: np.ndarray
    r: np.ndarray
    rho: list
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.lam = np.asarray(self.lam, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        self.rho = [np.asarray(v, dtype=float) for v in self.rho]

    def stacked(self):
        return np.concatenate([self.x, self.lam, self.r, *self.rho])

    def distance(self, other):
        return float(np.linalg.norm(self.stacked() - other.stacked()))

    def to_dict(self):
        return {"x": self.x.tolist(), "lam": self.lam.tolist(), "r": self.r.tolist(),
                "rho": [v.tolist() for v in self.rho],
                "aux": {k: np.asarray(v).tolist() for k, v in self.aux.items()}}


@dataclass
class Subproblem:
    """A lowered subproblem plus the map back to an :class:`IteratePoint`."""

    program: object
    layout: object
    kinds: tuple
    extract: object

    def point(self, z):
        return self.extract(self.layout, z)


def duality_gap_value(model, z, tol=1e-7):
    """Evaluate ``F(x, lam, rho) + sum_i lam_i r_i`` at ``z`` (``inf`` off-domain)."""
    if hasattr(model, "duality_gap_value"):
        return model.duality_gap_value(z, tol=tol)
    regs = model.regularizers
    if len(z.rho) != len(regs) or z.lam.size != len(regs) or z.r.size != len(regs):
        raise ValueError("iterate does not match the model's regularizers")
    loss = model.train_loss
    y = -np.sum(z.rho, axis=0)
    lconj, _ = conjugate(loss, y, tol=tol)
    if not np.isfinite(lconj):
        return np.inf
    total = evaluate(loss, z.x) + lconj
    for atom, lam, r, rho in zip(regs, z.lam, z.r, z.rho):
        pc = perspective_conjugate(atom, rho, lam, tol=tol)
        if not np.isfinite(pc):
            return np.inf
        total += pc + lam * r
    return float(total)


def prox_rows(builder, anchor, blocks, beta):
    """Epigraph ``beta/2 |blocks - anchor|^2 <= q``; returns ``q`` or ``None`` for beta = 0."""
    if beta <= 0:
        return None
    q = builder.var("prox", 1)
    diff = vstack([blk - ref for blk, ref in zip(blocks, anchor)])
    builder.sq_le("prox", diff, (2.0 / beta) * q.e)
    return q


def _extract_generic(layout, z):
    tau = layout.variables["lam"].size
    rho = [layout.value(f"rho{i}", z) for i in range(tau)]
    aux = {"w": layout.value("w", z), "s": layout.value("s", z)}
    return IteratePoint(layout.value("x", z), layout.value("lam", z), layout.value("r", z), rho, aux)


def assemble_subproblem(model, anchor, eps, beta, kind="auto"):
    """Lower the majorized, proximal subproblem for ``model`` at ``anchor``.

    Regression models are assembled term by term from their atoms: one
    epigraph per loss/regularizer/conjugate and per majorant.  Models without
    an atom description supply their own builder.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if not hasattr(model, "regularizers"):
        return model.build_subproblem(anchor, eps, beta, kind)
    regs = model.regularizers
    tau = len(regs)
    A_tr, b_tr = model.A_tr, model.b_tr
    p = A_tr.shape[1]
    B = ProgramBuilder()
    x = B.var("x", p)
    lam = B.var("lam", tau)
    r = B.var("r", tau)
    rho = [B.var(f"rho{i}", p) for i in range(tau)]
    w = B.var("w", A_tr.shape[0])
    s = B.var("s", tau)
    e_loss = B.var("e_loss", 1)
    e_conj = B.var("e_conj", 1)
    e_maj = B.var("e_maj", tau)
    t = B.var("t", 1)

    B.nonneg("lam", lam)
    B.nonneg("r", r)
    for i, atom in enumerate(regs):
        epigraph_rows(atom, B, x, r[i], name=f"epi{i}")
        perspective_conjugate_rows(atom, B, rho[i], lam[i], s[i], name=f"conj{i}")
    epigraph_rows(Atom.least_squares(A_tr, b_tr), B, x, e_loss, name="loss")
    stat = A_tr.T @ w
    for v in rho:
        stat = stat + v.e
    B.zero("stationarity", stat)
    # l*(A'w) = 1/2 |w|^2 + b'w; e_conj carries the quadratic part
    B.sq_le("loss_conj", w, 2.0 * e_conj.e)
    kinds = []
    for i in range(tau):
        k = resolve_kind(kind, anchor.lam[i], anchor.r[i])
        kinds.append(k)
        u, lin = majorizer_exprs(k, lam[i], r[i], anchor.lam[i], anchor.r[i])
        B.sq_le(f"maj{i}", u, e_maj[i] - lin)
    B.nonneg("gap", eps - e_loss.e - e_conj.e - (b_tr.reshape(1, -1) @ w) - s.e.sum() - e_maj.e.sum())
    B.sq_le("ul", model.A_val @ x - model.b_val, 2.0 * t.e)
    q = prox_rows(B, [anchor.x, anchor.lam, anchor.r, *anchor.rho], [x.e, lam.e, r.e] + [v.e for v in rho], beta)
    B.minimize(t.e + q.e if q is not None else t.e)
    program, layout = B.build()
    return Subproblem(program, layout, tuple(kinds), _extract_generic)
