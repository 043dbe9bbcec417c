"""Primal-dual interior-point solver for zero/nonnegative/second-order cone programs.

The method works on the homogeneous self-dual embedding of

    minimize c'x  subject to  A x = b,  G x + s = h,  s in K

(the zero-cone rows of a :class:`~ldmma.conic.ConicProgram` form ``A x = b``,
the remaining rows form ``G x + s = h``).  Search directions use
Nesterov-Todd scaling and a Mehrotra predictor-corrector.  The reduced KKT
system is kept sparse by expanding each rank-one update of a second-order
cone scaling block into one extra row and column, and is factored by a
sparse LDL' (QDLDL) under a small static regularization followed by
iterative refinement against the unregularized matrix.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import qdldl
import scipy.sparse.linalg as spla

from .conic import ConeKind, ConicProgram, validate


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"
    MAX_ITER = "max_iter_reached"
    NUMERICAL_ERROR = "numerical_error"


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 200
    tol_gap: float = 1e-8
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    time_limit_seconds: float | None = None
    tol_infeas: float = 1e-8
    regularization: float = 1e-8
    refine_steps: int = 8
    step_fraction: float = 0.99

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        for name in ("tol_gap", "tol_primal", "tol_dual", "tol_infeas"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.step_fraction < 1:
            raise ValueError("step_fraction must lie in (0, 1)")

    def loosened(self, factor):
        return SolverSettings(self.max_iter, self.tol_gap * factor, self.tol_primal * factor,
                              self.tol_dual * factor, self.time_limit_seconds, self.tol_infeas,
                              self.regularization, self.refine_steps, self.step_fraction)


@dataclass
class Solution:
    status: Status
    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    objective: float
    iterations: int
    residuals: tuple
    solve_time: float = 0.0

    @property
    def ok(self):
        return self.status == Status.OPTIMAL


def kkt_residuals(program, solution):
    """Relative primal, dual and gap residuals, recomputed from the raw data."""
    z = np.asarray(solution.z, dtype=float)
    s = np.asarray(solution.s, dtype=float)
    y = np.asarray(solution.y, dtype=float)
    if z.shape != (program.n,) or s.shape != (program.m,) or y.shape != (program.m,):
        raise ValueError("solution vectors do not match program dimensions")
    A, b, c = program.A, program.b, program.c
    primal = np.linalg.norm(A @ z + s - b) / (1.0 + np.linalg.norm(b))
    dual = np.linalg.norm(A.T @ y + c) / (1.0 + np.linalg.norm(c))
    cz = float(c @ z)
    gap = abs(cz + float(b @ y)) / (1.0 + abs(cz))
    return float(primal), float(dual), float(gap)




# iterations without a 10% improvement of the best residual score before giving up
STALL_ITERS = 10
# iterates keep every cone's complementarity above this fraction of the mean
NEIGHBORHOOD = 1e-4
# linear slacks with s/z below this take their step from the complementarity row
ACTIVE_RATIO = 1e-4


class _ConeOps:
    """Jordan-algebra helpers on an inequality slack ordered as [nonneg | soc blocks]."""

    def __init__(self, n_lin, soc_dims):
        self.nl = n_lin
        self.dims = np.asarray(soc_dims, dtype=int)
        self.nsoc = self.dims.size
        self.m = n_lin + int(self.dims.sum())
        starts = np.concatenate([[0], np.cumsum(self.dims)[:-1]]).astype(int) if self.nsoc else np.zeros(0, int)
        self.starts = starts
        self.heads = n_lin + starts
        self.degree = n_lin + self.nsoc
        self.block_of = np.repeat(np.arange(self.nsoc), self.dims)
        self.e = np.zeros(self.m)
        self.e[:n_lin] = 1.0
        self.e[self.heads] = 1.0

    def bsum(self, v):
        return np.add.reduceat(v[self.nl:], self.starts) if self.nsoc else np.zeros(0)

    def expand(self, v):
        return v[self.block_of]

    def jdot(self, u, v):
        """Per-block u'Jv for the second-order blocks."""
        return 2.0 * u[self.heads] * v[self.heads] - self.bsum(u * v)

    def jnorm2(self, v):
        """Per-block v'Jv in the factored form (v0 - |v1|)(v0 + |v1|)."""
        v0 = v[self.heads]
        tail = np.sqrt(np.maximum(self.bsum(v * v) - v0 * v0, 0.0))
        return (v0 - tail) * (v0 + tail)

    def J(self, v):
        out = -v
        out[:self.nl] = v[:self.nl]
        out[self.heads] = v[self.heads]
        return out

    def prod(self, u, v):
        out = u * v
        if self.nsoc:
            uh = self.expand(u[self.heads])
            vh = self.expand(v[self.heads])
            out[self.nl:] = uh * v[self.nl:] + vh * u[self.nl:]
            out[self.heads] = self.bsum(u * v)
        return out

    def div(self, x, d):
        """Solve x o u = d for u (non-finite entries signal a breakdown to the caller)."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self._div(x, d)

    def _div(self, x, d):
        out = np.empty_like(d)
        out[:self.nl] = d[:self.nl] / x[:self.nl]
        if self.nsoc:
            x0 = x[self.heads]
            det = self.jnorm2(x)
            u0 = (2.0 * x0 * d[self.heads] - self.bsum(x * d)) / det
            x0e = self.expand(x0)
            out[self.nl:] = d[self.nl:] / x0e - self.expand(u0 / x0) * x[self.nl:]
            out[self.heads] = u0
        return out

    def min_eig(self, v):
        vals = [np.inf]
        if self.nl:
            vals.append(v[:self.nl].min())
        if self.nsoc:
            tail = np.sqrt(np.maximum(self.bsum(v * v) - v[self.heads] ** 2, 0.0))
            vals.append((v[self.heads] - tail).min())
        return float(min(vals))

    def min_comp(self, s, z):
        """Smallest per-cone complementarity product (geometric mean form for SOC blocks)."""
        vals = [np.inf]
        if self.nl:
            vals.append((s[:self.nl] * z[:self.nl]).min())
        if self.nsoc:
            vals.append(np.sqrt(np.maximum(self.jnorm2(s), 0.0) * np.maximum(self.jnorm2(z), 0.0)).min())
        return float(min(vals))

    def max_step(self, x, d):
        """Largest alpha with x + alpha d in the cone (x interior)."""
        alpha = np.inf
        if self.nl:
            dl = d[:self.nl]
            neg = dl < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-x[:self.nl][neg] / dl[neg])))
        if self.nsoc:
            a = self.jdot(d, d)
            b = self.jdot(x, d)
            c = np.maximum(self.jnorm2(x), 0.0)
            for k in range(self.nsoc):
                alpha = min(alpha, _soc_step(a[k], b[k], c[k], x[self.heads[k]], d[self.heads[k]]))
        return alpha


def _soc_step(a, b, c, x0, d0):
    # smallest positive root of a t^2 + 2 b t + c = 0
    if c <= 0.0:
        return 0.0
    roots = []
    if a == 0.0:
        if b < 0.0:
            roots.append(-c / (2.0 * b))
    else:
        disc = b * b - a * c
        if disc >= 0.0:
            q = -(b + np.copysign(np.sqrt(disc), b))
            if q != 0.0:
                roots.extend([q / a, c / q])
    pos = [r for r in roots if r > 0.0]
    if not pos:
        # no boundary crossing through the cone surface; guard the head
        if d0 < 0.0:
            return -x0 / d0
        return np.inf
    return min(pos)


class _Scaling:
    """Nesterov-Todd scaling point for the current (s, z)."""

    def __init__(self, ops, s, z):
        self.ops = ops
        nl = ops.nl
        self.d = np.sqrt(s[:nl] / z[:nl])
        if ops.nsoc:
            ss = ops.jnorm2(s)
            zz = ops.jnorm2(z)
            if np.any(ss <= 0.0) or np.any(zz <= 0.0):
                raise FloatingPointError("iterate left the cone interior")
            sb = s[nl:] / ops.expand(np.sqrt(ss))
            zb = z[nl:] / ops.expand(np.sqrt(zz))
            full_sb = np.concatenate([np.zeros(nl), sb])
            full_zb = np.concatenate([np.zeros(nl), zb])
            sz = ops.bsum(full_sb * full_zb)
            gamma = np.sqrt(np.maximum(0.5 * (1.0 + sz), 1e-300))
            jz = ops.J(full_zb)[nl:]
            self.w = (sb + jz) / ops.expand(2.0 * gamma)
            self.beta = (ss / zz) ** 0.25
            self.w0 = self.w[ops.starts]
        self.lam = self.apply(z)

    def _soc_apply(self, v, inverse):
        ops = self.ops
        nl = ops.nl
        vs = v[nl:]
        w = self.w
        w0 = self.w0
        v0 = vs[ops.starts]
        w1v1 = ops.bsum(np.concatenate([np.zeros(nl), w * vs])) - w0 * v0
        if inverse:
            head = w0 * v0 - w1v1
            a = -v0 + w1v1 / (1.0 + w0)
            scale = 1.0 / self.beta
        else:
            head = w0 * v0 + w1v1
            a = v0 + w1v1 / (1.0 + w0)
            scale = self.beta
        out = vs + ops.expand(a) * w
        out[ops.starts] = head
        return ops.expand(scale) * out

    def apply(self, v):
        out = np.empty_like(v)
        out[:self.ops.nl] = self.d * v[:self.ops.nl]
        if self.ops.nsoc:
            out[self.ops.nl:] = self._soc_apply(v, inverse=False)
        return out

    def apply_inv(self, v):
        out = np.empty_like(v)
        out[:self.ops.nl] = v[:self.ops.nl] / self.d
        if self.ops.nsoc:
            out[self.ops.nl:] = self._soc_apply(v, inverse=True)
        return out

    def w2_blocks(self):
        """Diagonal part of -W^2 and the columns of its rank-one corrections."""
        ops = self.ops
        diag = np.empty(ops.m)
        diag[:ops.nl] = -self.d ** 2
        cols = None
        if ops.nsoc:
            b2 = ops.expand(self.beta ** 2)
            jd = -b2
            jd[ops.starts] = b2[ops.starts]
            diag[ops.nl:] = jd
            cols = np.sqrt(2.0) * ops.expand(self.beta) * self.w
        return diag, cols


class _Problem:
    """Split and equilibrated form of a ConicProgram."""

    def __init__(self, program):
        rows_eq, rows_lin, soc_rows, soc_dims = [], [], [], []
        start = 0
        for cone in program.cones:
            idx = np.arange(start, start + cone.dim)
            if cone.kind == ConeKind.ZERO:
                rows_eq.append(idx)
            elif cone.kind == ConeKind.NONNEG:
                rows_lin.append(idx)
            else:
                soc_rows.append(idx)
                soc_dims.append(cone.dim)
            start += cone.dim
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, int)
        self.eq_rows = cat(rows_eq)
        self.in_rows = np.concatenate([cat(rows_lin), cat(soc_rows)]).astype(int)
        self.ops = _ConeOps(cat(rows_lin).size, soc_dims)
        A = program.A.tocsr()
        self.A0 = A[self.eq_rows].tocsc()
        self.G0 = A[self.in_rows].tocsc()
        self.b0 = program.b[self.eq_rows]
        self.h0 = program.b[self.in_rows]
        self.c0 = program.c.copy()
        self._equilibrate()

    def _equilibrate(self, passes=15):
        # Ruiz scaling on the stacked [A; G] in coordinate form; SOC rows share one factor
        ops = self.ops
        A, G = self.A0.tocoo(), self.G0.tocoo()
        p, n = A.shape
        rows = np.concatenate([A.row, G.row + p])
        cols = np.concatenate([A.col, G.col])
        vals = np.abs(np.concatenate([A.data, G.data]))
        nrow = p + G.shape[0]
        # rows of one SOC block map to a single group
        group = np.arange(nrow)
        if ops.nsoc:
            group[p + ops.nl:] = p + ops.nl + ops.block_of
        D = np.ones(n)
        E = np.ones(nrow)
        for _ in range(passes):
            scaled = vals * E[rows] * D[cols]
            cmax = np.zeros(n)
            np.maximum.at(cmax, cols, scaled)
            gmax = np.zeros(nrow)
            np.maximum.at(gmax, group[rows], scaled)
            rmax = gmax[group]
            cmax[cmax == 0] = 1.0
            rmax[rmax == 0] = 1.0
            D /= np.sqrt(cmax)
            E /= np.sqrt(rmax)
        E1, E2 = E[:p], E[p:]
        self.A = sp.csc_matrix((A.data * E1[A.row] * D[A.col], (A.row, A.col)), shape=A.shape)
        self.G = sp.csc_matrix((G.data * E2[G.row] * D[G.col], (G.row, G.col)), shape=G.shape)
        self.D, self.E1, self.E2 = D, E1, E2
        self.b = E1 * self.b0
        self.h = E2 * self.h0
        # cost scaling keeps primal and dual iterates of similar magnitude
        rhs = np.concatenate([self.b, self.h])
        self.sigma = 1.0 / max(1.0, float(np.abs(rhs).max(initial=0.0)))
        self.c = self.sigma * D * self.c0
        self.AT = self.A.T.tocsc()
        self.GT = self.G.T.tocsc()


class _KKT:
    """Quasi-definite KKT matrix with a fixed sparsity pattern.

    Only the scaling diagonal and the expanded SOC columns change between
    iterations, so the pattern (and the symbolic LDL' analysis) is built once.
    """

    def __init__(self, prob, reg, refine):
        ops = prob.ops
        n, p, m, q = prob.c.size, prob.b.size, ops.m, ops.nsoc
        self.n, self.p, self.m, self.q = n, p, m, q
        N = n + p + m + q
        A, G = prob.A.tocoo(), prob.G.tocoo()
        soc_rows = np.arange(ops.nl, m)
        rows = [np.arange(n), n + np.arange(p), A.row + n, A.col, G.row + n + p, G.col,
                n + p + np.arange(m), n + p + soc_rows, n + p + m + ops.block_of, n + p + m + np.arange(q)]
        cols = [np.arange(n), n + np.arange(p), A.col, A.row + n, G.col, G.row + n + p,
                n + p + np.arange(m), n + p + m + ops.block_of, n + p + soc_rows, n + p + m + np.arange(q)]
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        order = np.arange(rows.size, dtype=float)
        K = sp.csc_matrix((order, (rows, cols)), shape=(N, N))
        K.sort_indices()
        self.perm = K.data.astype(int)
        self.K = K
        upper = rows <= cols
        U = sp.csc_matrix((order[upper], (rows[upper], cols[upper])), shape=(N, N))
        U.sort_indices()
        self.perm_upper = U.data.astype(int)
        self.Kreg = U
        nstat = n + p + 2 * A.nnz + 2 * G.nnz
        self.static = np.concatenate([np.zeros(n + p), A.data, A.data, G.data, G.data])
        self.reg_static = np.concatenate([np.full(n, reg), np.full(p, -reg), np.zeros(nstat - n - p)])
        self.reg = reg
        self.refine = refine
        self._ldl = None

    def factor(self, diag, cols):
        q = self.q
        tail = [diag] if not q else [diag, cols, cols, np.ones(q)]
        vals = np.concatenate([self.static] + tail)
        self.K.data = vals[self.perm]
        vals = vals + np.concatenate([self.reg_static, np.full(self.m, -self.reg),
                                      np.zeros(vals.size - self.reg_static.size - self.m)])
        self.Kreg.data = vals[self.perm_upper]
        try:
            if self._ldl is None:
                self._ldl = qdldl.Solver(self.Kreg, upper=True)
            else:
                self._ldl.update(self.Kreg, upper=True)
            self._solve = self._ldl.solve
        except (ValueError, RuntimeError):
            # zero pivot in the fixed order: fall back to pivoted LU
            self._ldl = None
            full = self.Kreg + sp.triu(self.Kreg, k=1).T
            self._solve = spla.splu(full.tocsc(), permc_spec="MMD_AT_PLUS_A").solve
        return self

    def solve(self, rx, ry, rz):
        rhs = np.concatenate([rx, ry, rz, np.zeros(self.q)])
        u = self._solve(rhs)
        scale = 1.0 + np.abs(rhs).max()
        r = rhs - self.K @ u
        err = np.abs(r).max()
        for _ in range(self.refine):
            if err <= 1e-14 * scale:
                break
            u_new = u + self._solve(r)
            r_new = rhs - self.K @ u_new
            err_new = np.abs(r_new).max()
            if not err_new < err:
                break
            u, r, done = u_new, r_new, err_new > 0.5 * err
            err = err_new
            if done:
                break
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("KKT solve produced non-finite values")
        n, p, m = self.n, self.p, self.m
        return u[:n], u[n:n + p], u[n + p:n + p + m]


def _fail(program, status, start, it):
    n, m = program.n, program.m
    nan = float("nan")
    return Solution(status, np.full(n, nan), np.full(m, nan), np.full(m, nan), nan, it,
                    (nan, nan, nan), time.perf_counter() - start)


def solve(program, settings=None):
    """Solve ``program``; see :class:`Solution` for the status contract."""
    settings = settings or SolverSettings()
    errors = validate(program)
    if errors:
        raise ValueError("invalid program: " + "; ".join(errors))
    start = time.perf_counter()
    prob = _Problem(program)
    ops = prob.ops
    n, p, m = prob.c.size, prob.b.size, ops.m
    c, b, h = prob.c, prob.b, prob.h
    reg = settings.regularization

    def unscale(x, y, z, s):
        zf = np.empty(program.m)
        sf = np.zeros(program.m)
        yf = np.empty(program.m)
        zf_x = prob.D * x
        yf[prob.eq_rows] = prob.E1 * y / prob.sigma
        yf[prob.in_rows] = prob.E2 * z / prob.sigma
        sf[prob.in_rows] = s / prob.E2
        return zf_x, sf, yf

    def finish(status, x, y, z, s, tau, it):
        xs, ss, ys = unscale(x / tau, y / tau, z / tau, s / tau)
        obj = float(program.c @ xs) + program.obj_offset
        sol = Solution(status, xs, ss, ys, obj, it, (np.nan,) * 3, time.perf_counter() - start)
        sol.residuals = kkt_residuals(program, sol)
        return sol

    def certificate(status, x, y, z, s, it):
        xs, ss, ys = unscale(x, y, z, s)
        if status == Status.PRIMAL_INFEASIBLE:
            scale = -float(program.b @ ys)
            xs = np.full(program.n, np.nan)
            ss = np.full(program.m, np.nan)
            ys = ys / scale
        else:
            scale = -float(program.c @ xs)
            xs, ss = xs / scale, ss / scale
            ys = np.full(program.m, np.nan)
        return Solution(status, xs, ss, ys, float("nan"), it, (np.nan,) * 3, time.perf_counter() - start)

    # initial point from two least-squares-like solves with identity scaling
    try:
        diag0 = -np.ones(m)
        cols0 = None
        if ops.nsoc:
            diag0[ops.nl:] = -1.0
            diag0[ops.heads] = 1.0
            cols0 = np.zeros(m - ops.nl)
            cols0[ops.starts] = np.sqrt(2.0)
        kkt = _KKT(prob, reg, settings.refine_steps).factor(diag0, cols0)
        x, _, zt = kkt.solve(np.zeros(n), b, h)
        s = -zt
        _, y, z = kkt.solve(-c, np.zeros(p), np.zeros(m))
    except (RuntimeError, FloatingPointError, ValueError):
        return _fail(program, Status.NUMERICAL_ERROR, start, 0)
    for v in (s, z):
        shift = -ops.min_eig(v)
        if m and shift >= -1e-8 * max(np.linalg.norm(v), 1.0):
            v += (1.0 + shift) * ops.e
    tau, kappa = 1.0, 1.0

    bnorm = 1.0 + np.linalg.norm(program.b)
    cnorm = 1.0 + np.linalg.norm(program.c)
    best = None
    stalled = 0
    for it in range(settings.max_iter + 1):
        # residuals of the embedding
        rx = prob.AT @ y + prob.GT @ z + c * tau
        ry = -(prob.A @ x) + b * tau
        rz = -(prob.G @ x) + h * tau - s
        cx, by, hz = float(c @ x), float(b @ y), float(h @ z)
        rt = -cx - by - hz - kappa

        xs, ss, ys = unscale(x / tau, y / tau, z / tau, s / tau)
        pres = np.linalg.norm(program.A @ xs + ss - program.b) / bnorm
        dres = np.linalg.norm(program.A.T @ ys + program.c) / cnorm
        cz = float(program.c @ xs)
        gap = abs(cz + float(program.b @ ys)) / (1.0 + abs(cz))
        if not np.isfinite(pres + dres + gap):
            break
        score = max(pres / settings.tol_primal, dres / settings.tol_dual, gap / settings.tol_gap)
        if best is None or score < 0.9 * best[0]:
            stalled = 0
        else:
            stalled += 1
        if best is None or score < best[0]:
            best = (score, x.copy(), y.copy(), z.copy(), s.copy(), tau, it)
        if pres <= settings.tol_primal and dres <= settings.tol_dual and gap <= settings.tol_gap:
            return finish(Status.OPTIMAL, x, y, z, s, tau, it)

        # infeasibility certificates on unscaled data
        xu, su, yu = unscale(x, y, z, s)
        bty = float(program.b @ yu)
        if bty < 0:
            if np.linalg.norm(program.A.T @ yu) / max(1.0, np.linalg.norm(program.c)) <= settings.tol_infeas * -bty:
                return certificate(Status.PRIMAL_INFEASIBLE, x, y, z, s, it)
        ctx = float(program.c @ xu)
        if ctx < 0:
            if np.linalg.norm(program.A @ xu + su) / max(1.0, np.linalg.norm(program.b)) <= settings.tol_infeas * -ctx:
                return certificate(Status.DUAL_INFEASIBLE, x, y, z, s, it)

        if it == settings.max_iter or stalled >= STALL_ITERS:
            break
        if settings.time_limit_seconds is not None and time.perf_counter() - start > settings.time_limit_seconds:
            break

        mu = (float(s @ z) + tau * kappa) / (ops.degree + 1)
        try:
            W = _Scaling(ops, s, z)
            diag, cols = W.w2_blocks()
            kkt.factor(diag, cols)
            x1, y1, z1 = kkt.solve(-c, b, h)
            denom_base = -(float(c @ x1) + float(b @ y1) + float(h @ z1))
            lam = W.lam
            active = np.flatnonzero(W.d ** 2 < ACTIVE_RATIO)

            def direction(eta, ds, dk):
                t = W.apply(ops.div(lam, ds))
                x2, y2, z2 = kkt.solve(-eta * rx, eta * ry, eta * rz - t)
                dtau = (-eta * rt + dk / tau + float(c @ x2) + float(b @ y2) + float(h @ z2)) / (kappa / tau + denom_base)
                dx = x2 + dtau * x1
                dy = y2 + dtau * y1
                dz = z2 + dtau * z1
                dsl = -(prob.G @ dx) + h * dtau + eta * rz
                # strongly active linear slacks: the linearized complementarity is the accurate source
                dsl[active] = t[active] - W.d[active] ** 2 * dz[active]
                dkap = (dk - kappa * dtau) / tau
                return dx, dy, dz, dsl, dtau, dkap

            def step_length(dz, dsl, dtau, dkap):
                a = min(ops.max_step(s, dsl), ops.max_step(z, dz))
                if dtau < 0:
                    a = min(a, -tau / dtau)
                if dkap < 0:
                    a = min(a, -kappa / dkap)
                return a

            # predictor
            ds_a = -ops.prod(lam, lam)
            dk_a = -tau * kappa
            aff = direction(1.0, ds_a, dk_a)
            a_aff = min(1.0, step_length(aff[2], aff[3], aff[4], aff[5]))
            sigma = (1.0 - a_aff) ** 3
            # corrector
            ds_c = ds_a + sigma * mu * ops.e - ops.prod(W.apply_inv(aff[3]), W.apply(aff[2]))
            dk_c = dk_a + sigma * mu - aff[4] * aff[5]
            dx, dy, dz, dsl, dtau, dkap = direction(1.0 - sigma, ds_c, dk_c)
            alpha = min(1.0, settings.step_fraction * step_length(dz, dsl, dtau, dkap))
        except (RuntimeError, FloatingPointError, ValueError, ZeroDivisionError):
            break
        if not (np.isfinite(alpha) and alpha > 0):
            break
        # backtrack into the interior (rounding) and a wide neighborhood of the central path
        for _ in range(40):
            s_new, z_new = s + alpha * dsl, z + alpha * dz
            tau_new, kap_new = tau + alpha * dtau, kappa + alpha * dkap
            if (ops.min_eig(s_new) > 0 and ops.min_eig(z_new) > 0 and tau_new > 0 and kap_new > 0
                    and ops.min_comp(s_new, z_new) >= NEIGHBORHOOD * (float(s_new @ z_new) + tau_new * kap_new)
                    / (ops.degree + 1)):
                break
            alpha *= 0.8
        else:
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * dsl
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkap
        if not np.all(np.isfinite(x)):
            break

    if best is None:
        return _fail(program, Status.NUMERICAL_ERROR, start, it)
    _, x, y, z, s, tau, best_it = best
    sol = finish(Status.MAX_ITER, x, y, z, s, tau, it)
    if it < settings.max_iter and not (settings.time_limit_seconds is not None
                                       and time.perf_counter() - start > settings.time_limit_seconds):
        sol.status = Status.NUMERICAL_ERROR
    return sol


class SolveError(RuntimeError):
    """A conic solve ended without a usable point."""

    def __init__(self, solution, what="solve"):
        self.solution = solution
        self.status = solution.status
        super().__init__(f"{what} failed with status {solution.status.value}")


def acceptable(program, solution, settings, factor=10.0):
    """Optimal, or a best iterate (iteration cap or stalled progress) within ``factor`` x tolerances."""
    if solution.status == Status.OPTIMAL:
        return True
    if (solution.status not in (Status.MAX_ITER, Status.NUMERICAL_ERROR)
            or not np.all(np.isfinite(solution.z)) or not np.all(np.isfinite(solution.y))):
        return False
    p, d, g = kkt_residuals(program, solution)
    return (p <= factor * settings.tol_primal and d <= factor * settings.tol_dual
            and g <= factor * settings.tol_gap)


def solve_checked(program, settings=None, what="solve"):
    """Like :func:`solve` but raises :class:`SolveError` unless :func:`acceptable`."""
    settings = settings or SolverSettings()
    sol = solve(program, settings)
    if not acceptable(program, sol, settings):
        raise SolveError(sol, what)
    return sol
