"""Concrete bilevel models: elastic net, sparse group lasso and K-fold SVM.

Each model exposes the lower-level solve with a dual certificate, the
validation/test metrics and a hand-specialized conic builder for the
majorized subproblem.  Regression models also describe themselves through
atoms so the generic assembly in :mod:`ldmma.reformulation` can be used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .atoms import Atom, epigraph_rows, evaluate
from .conic import ProgramBuilder, vstack
from .reformulation import IteratePoint, Subproblem, duality_gap_value, majorizer_exprs, prox_rows, resolve_kind
from .solver import SolverSettings, solve_checked

SQRT2 = np.sqrt(2.0)

# Lower-level solves feed certificates whose gap must be ~0, so they run tight.
LL_SETTINGS = SolverSettings(tol_gap=1e-10, tol_primal=1e-10, tol_dual=1e-10)


class UnsupportedVariantError(NotImplementedError):
    pass


@dataclass
class LLResult:
    x: np.ndarray
    point: IteratePoint
    solutions: list


def _dense(M):
    return np.asarray(M.toarray() if sp.issparse(M) else M, dtype=float)


def _null_project(w, A_U):
    """Remove from ``w`` its component in the range of ``A_U`` so that ``A_U' w = 0``."""
    if A_U.shape[1] == 0:
        return w
    return w - A_U @ np.linalg.lstsq(A_U, w, rcond=None)[0]


def _check_lam(lam, size):
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size != size:
        raise ValueError(f"expected {size} hyperparameters, got {lam.size}")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("hyperparameters must be finite and nonnegative")
    return lam


def _majorant_rows(lam_var, r_var, anchor_lam, anchor_r, kind):
    """Stack majorant squares for pairs (lam_i, r_i); returns (u, lin, kinds)."""
    us, lin, kinds = [], None, []
    for i in range(len(anchor_lam)):
        k = resolve_kind(kind, anchor_lam[i], anchor_r[i])
        kinds.append(k)
        u, li = majorizer_exprs(k, lam_var[i], r_var[i], anchor_lam[i], anchor_r[i])
        us.append(u)
        lin = li if lin is None else lin + li
    return vstack(us), lin, tuple(kinds)


class RegressionModel:
    """Shared pieces of the least-squares lower-level models."""

    default_eps = 1.0
    search_dim = 2

    def __init__(self, A_tr, b_tr, A_val, b_val, A_te=None, b_te=None):
        self.A_tr = _dense(A_tr)
        self.b_tr = np.asarray(b_tr, dtype=float).ravel()
        self.A_val = _dense(A_val)
        self.b_val = np.asarray(b_val, dtype=float).ravel()
        self.A_te = None if A_te is None else _dense(A_te)
        self.b_te = None if b_te is None else np.asarray(b_te, dtype=float).ravel()
        p = self.A_tr.shape[1]
        if self.A_tr.shape[0] != self.b_tr.size or self.A_val.shape != (self.b_val.size, p):
            raise ValueError("train/validation data have inconsistent shapes")
        if self.A_te is not None and self.A_te.shape != (self.b_te.size, p):
            raise ValueError("test data have inconsistent shape")
        self.p = p
        self.train_loss = Atom.least_squares(self.A_tr, self.b_tr)

    @classmethod
    def from_dataset(cls, ds, **kw):
        X, y = ds.features, ds.targets
        tr, va, te = (ds.splits[k] for k in ("train", "val", "test"))
        X = _dense(X)
        return cls(X[tr], y[tr], X[va], y[va], X[te], y[te], **kw)

    @property
    def tau(self):
        return len(self.regularizers)

    @property
    def default_lam0(self):
        return np.full(self.tau, 0.1)

    def reg_values(self, x):
        return np.array([evaluate(a, x) for a in self.regularizers])

    def epigraph_violation(self, point):
        return float(np.max(self.reg_values(point.x) - point.r))

    def ul_objective(self, x):
        res = self.A_val @ x - self.b_val
        return 0.5 * float(res @ res)

    def val_error(self, x):
        return self.ul_objective(x) / self.b_val.size

    def test_error(self, x, lam=None):
        if self.A_te is None:
            raise ValueError("model has no test split")
        res = self.A_te @ x - self.b_te
        return 0.5 * float(res @ res) / self.b_te.size

    def ll_solve(self, lam, settings=None):
        lam = _check_lam(lam, self.tau)
        B = ProgramBuilder()
        x = B.var("x", self.p)
        r = B.var("r", self.tau)
        e = B.var("loss", 1)
        for i, atom in enumerate(self.regularizers):
            epigraph_rows(atom, B, x, r[i], name=f"epi{i}")
        epigraph_rows(self.train_loss, B, x, e, name="loss")
        B.minimize(e.e + (lam.reshape(1, -1) @ r))
        program, layout = B.build()
        sol = solve_checked(program, settings or LL_SETTINGS, "lower-level solve")
        xs = self.polish(layout.value("x", sol.z), lam)
        return LLResult(xs, self.certificate(xs, lam), [sol])

    def polish(self, x, lam):
        return x

    def search_to_lam(self, u):
        return np.asarray(u, dtype=float)


class ElasticNet(RegressionModel):
    default_eps = 0.01

    @property
    def regularizers(self):
        return [Atom.l1(self.p), Atom.half_sq_l2(self.p)]

    @property
    def default_lam0(self):
        return np.array([0.01, 0.01])

    def polish(self, x, lam):
        """Refine an interior-point solution by solving the reduced optimality system.

        The support and signs are read off ``x``; the result is kept only if it
        satisfies the optimality conditions, otherwise ``x`` is returned as is.
        """
        lam1, lam2 = lam
        A, b = self.A_tr, self.b_tr
        scale = max(1.0, np.abs(x).max(initial=0.0))
        for thresh in (1e-9, 1e-7, 1e-5):
            S = np.flatnonzero(np.abs(x) > thresh * scale)
            cand = np.zeros_like(x)
            if S.size:
                AS = A[:, S]
                H = AS.T @ AS + lam2 * np.eye(S.size)
                rhs = AS.T @ b - lam1 * np.sign(x[S])
                cand[S] = np.linalg.lstsq(H, rhs, rcond=None)[0]
                if np.any(np.sign(cand[S]) != np.sign(x[S])):
                    continue
            g = A.T @ (b - A @ cand) - lam2 * cand
            off = np.setdiff1d(np.arange(x.size), S)
            if np.all(np.abs(g[off]) <= lam1 * (1 + 1e-10) + 1e-12) and np.allclose(
                    g[S], lam1 * np.sign(cand[S]), rtol=1e-8, atol=1e-10):
                return cand
        return x

    def certificate(self, x, lam):
        """Dual point of the lower level built from its primal solution."""
        lam1, lam2 = lam
        w = self.A_tr @ x - self.b_tr
        g = -self.A_tr.T @ w
        if lam2 > 0:
            rho1 = np.clip(g - lam2 * x, -lam1, lam1)
        elif lam1 <= 0:
            # unregularized least squares: the dual must be orthogonal to range(A)
            w = _null_project(w, self.A_tr)
            g = -self.A_tr.T @ w
            rho1 = g
        else:
            # without the ridge term rho1 carries all of A'w: shrink w until it is dual feasible
            gmax = np.abs(g).max(initial=0.0)
            if gmax > lam1:
                theta = lam1 / gmax
                w, g = theta * w, theta * g
            rho1 = g
        rho2 = g - rho1
        s = 0.5 * float(rho2 @ rho2) / lam2 if lam2 > 0 else 0.0
        return IteratePoint(x, lam, self.reg_values(x), [rho1, rho2], {"w": w, "s": np.array([s])})

    def build_subproblem(self, anchor, eps, beta, kind="auto"):
        A, b, p, n = self.A_tr, self.b_tr, self.p, self.A_tr.shape[0]
        B = ProgramBuilder()
        x = B.var("x", p)
        lam = B.var("lam", 2)
        r = B.var("r", 2)
        rho1 = B.var("rho1", p)
        rho2 = B.var("rho2", p)
        w = B.var("w", n)
        s = B.var("s", 1)
        t = B.var("t", 1)
        a = B.var("abs", p)

        B.zero("stationarity", A.T @ w + rho1.e + rho2.e)
        B.nonneg("abs", vstack([a.e - x.e, a.e + x.e]))
        B.nonneg("l1", r[0] - a.e.sum())
        B.nonneg("box", vstack([lam[0] - rho1.e, lam[0] + rho1.e]))
        B.sq_le("l2", x, 2.0 * r[1])
        B.soc("persp", s.e + lam[1], vstack([SQRT2 * rho2.e, s.e - lam[1]]))
        u, lin, kinds = _majorant_rows(lam, r, anchor.lam, anchor.r, kind)
        # l*(A'w) = 1/2 |w|^2 + b'w keeps large constants out of the cone
        B.sq_le("gap", vstack([A @ x - b, w.e, SQRT2 * u]),
                2.0 * eps - 2.0 * (b.reshape(1, -1) @ w) - 2.0 * s.e - 2.0 * lin)
        B.sq_le("ul", self.A_val @ x - self.b_val, 2.0 * t.e)
        q = prox_rows(B, [anchor.x, anchor.lam, anchor.r, *anchor.rho],
                      [x.e, lam.e, r.e, rho1.e, rho2.e], beta)
        B.minimize(t.e + q.e if q is not None else t.e)
        program, layout = B.build()

        def extract(layout, z):
            get = lambda k: layout.value(k, z)
            return IteratePoint(get("x"), get("lam"), get("r"), [get("rho1"), get("rho2")],
                                {"w": get("w"), "s": get("s")})

        return Subproblem(program, layout, kinds, extract)


class SparseGroupLasso(RegressionModel):
    """Group penalties ``lam_i |x_(i)|`` for each group plus ``lam_(M+1) |x|_1``."""

    def __init__(self, A_tr, b_tr, A_val, b_val, A_te=None, b_te=None, groups=None):
        super().__init__(A_tr, b_tr, A_val, b_val, A_te, b_te)
        if groups is None:
            raise ValueError("groups are required")
        self.groups = tuple(np.asarray(g, dtype=int) for g in groups)
        # validates the partition
        self._atoms = [Atom.group_l2(self.groups, i) for i in range(len(self.groups))] + [Atom.l1(self.p)]

    @classmethod
    def from_dataset(cls, ds, **kw):
        if "groups" not in kw:
            kw["groups"] = [np.asarray(g, dtype=int) for g in ds.meta["groups"]]
        return super().from_dataset(ds, **kw)

    @property
    def regularizers(self):
        return self._atoms

    @property
    def M(self):
        return len(self.groups)

    def search_to_lam(self, u):
        u = np.asarray(u, dtype=float)
        return np.concatenate([np.full(self.M, u[0]), [u[1]]])

    def _dual_feasible(self, g, lam):
        lam_l1 = lam[-1]
        slack = 1e-13 * max(1.0, np.abs(g).max(initial=0.0))
        for i, grp in enumerate(self.groups):
            excess = np.abs(g[grp]) - lam_l1
            if lam[i] > 0:
                if np.linalg.norm(np.maximum(excess, 0.0)) > lam[i] + slack:
                    return False
            elif np.any(excess > slack):
                return False
        return True

    def _unpenalized(self, lam):
        if lam[-1] > 0:
            return np.zeros(0, dtype=int)
        free = [g for i, g in enumerate(self.groups) if lam[i] <= 0]
        return np.concatenate(free) if free else np.zeros(0, dtype=int)

    def polish(self, x, lam):
        """Newton refinement on the support of ``x``; keeps whichever point has the smaller gap."""
        best, best_gap = x, abs(duality_gap_value(self, self.certificate(x, lam)))
        A, b, lam_l1 = self.A_tr, self.b_tr, lam[-1]
        scale = max(1.0, np.abs(x).max(initial=0.0))
        for thresh in (1e-9, 1e-7, 1e-5):
            S = np.flatnonzero(np.abs(x) > thresh * scale)
            cand = np.zeros_like(x)
            if S.size:
                pos = np.full(x.size, -1)
                pos[S] = np.arange(S.size)
                blocks = [(pos[g][pos[g] >= 0], lam[i]) for i, g in enumerate(self.groups) if lam[i] > 0]
                blocks = [(j, l) for j, l in blocks if j.size]
                AS, y = A[:, S], x[S].copy()
                sign = np.sign(y)
                for _ in range(20):
                    grad = AS.T @ (AS @ y - b) + lam_l1 * sign
                    H = AS.T @ AS
                    for j, l in blocks:
                        nrm = np.linalg.norm(y[j])
                        grad[j] += l * y[j] / nrm
                        H[np.ix_(j, j)] += (l / nrm) * (np.eye(j.size) - np.outer(y[j], y[j]) / nrm ** 2)
                    step = np.linalg.lstsq(H, grad, rcond=None)[0]
                    y = y - step
                    if np.any(np.sign(y) != sign) or np.linalg.norm(step) <= 1e-15 * (1 + np.linalg.norm(y)):
                        break
                if np.any(np.sign(y) != sign):
                    continue
                cand[S] = y
            gap = abs(duality_gap_value(self, self.certificate(cand, lam)))
            if gap < best_gap:
                best, best_gap = cand, gap
        return best

    def certificate(self, x, lam):
        w = _null_project(self.A_tr @ x - self.b_tr, self.A_tr[:, self._unpenalized(lam)])
        g = -self.A_tr.T @ w
        if not self._dual_feasible(g, lam):
            # shrink w onto the dual feasible set so weak duality holds exactly
            lo, hi = 0.0, 1.0
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if self._dual_feasible(mid * g, lam) else (lo, mid)
            w, g = lo * w, lo * g
        lam_l1 = lam[-1]
        rho_l1 = np.clip(g, -lam_l1, lam_l1)
        rhos = []
        for i, grp in enumerate(self.groups):
            rg = np.zeros(self.p)
            if lam[i] > 0:
                rg[grp] = g[grp] - rho_l1[grp]
            else:
                rho_l1[grp] = g[grp]
            rhos.append(rg)
        return IteratePoint(x, lam, self.reg_values(x), rhos + [rho_l1],
                            {"w": w, "s": np.zeros(self.tau)})

    def build_subproblem(self, anchor, eps, beta, kind="auto"):
        A, b, p, n, M = self.A_tr, self.b_tr, self.p, self.A_tr.shape[0], self.M
        B = ProgramBuilder()
        x = B.var("x", p)
        lam = B.var("lam", M + 1)
        r = B.var("r", M + 1)
        rho_g = [B.var(f"rho_g{i}", g.size) for i, g in enumerate(self.groups)]
        rho_l1 = B.var("rho_l1", p)
        w = B.var("w", n)
        t = B.var("t", 1)
        a = B.var("abs", p)

        stat = A.T @ w + rho_l1.e
        for grp, v in zip(self.groups, rho_g):
            E = sp.csr_matrix((np.ones(grp.size), (grp, np.arange(grp.size))), shape=(p, grp.size))
            stat = stat + E @ v
        B.zero("stationarity", stat)
        for i, (grp, v) in enumerate(zip(self.groups, rho_g)):
            B.soc(f"group{i}", r[i], x[grp])
            B.soc(f"dual{i}", lam[i], v)
        B.nonneg("abs", vstack([a.e - x.e, a.e + x.e]))
        B.nonneg("l1", r[M] - a.e.sum())
        B.nonneg("box", vstack([lam[M] - rho_l1.e, lam[M] + rho_l1.e]))
        u, lin, kinds = _majorant_rows(lam, r, anchor.lam, anchor.r, kind)
        B.sq_le("gap", vstack([A @ x - b, w.e, SQRT2 * u]),
                2.0 * eps - 2.0 * (b.reshape(1, -1) @ w) - 2.0 * lin)
        B.sq_le("ul", self.A_val @ x - self.b_val, 2.0 * t.e)
        anchor_rho = [anchor.rho[i][g] for i, g in enumerate(self.groups)] + [anchor.rho[M]]
        q = prox_rows(B, [anchor.x, anchor.lam, anchor.r, *anchor_rho],
                      [x.e, lam.e, r.e] + [v.e for v in rho_g] + [rho_l1.e], beta)
        B.minimize(t.e + q.e if q is not None else t.e)
        program, layout = B.build()
        groups = self.groups

        def extract(layout, z):
            rhos = []
            for i, grp in enumerate(groups):
                full = np.zeros(p)
                full[grp] = layout.value(f"rho_g{i}", z)
                rhos.append(full)
            rhos.append(layout.value("rho_l1", z))
            return IteratePoint(layout.value("x", z), layout.value("lam", z), layout.value("r", z),
                                rhos, {"w": layout.value("w", z), "s": np.zeros(M + 1)})

        return Subproblem(program, layout, kinds, extract)


def _hinge(A, y, w, c):
    return np.maximum(0.0, 1.0 - y * (A @ w - c))


class SvmCv:
    """K-fold cross-validated linear SVM with hyperparameters ``(lam, wbar)``.

    The lower level on fold ``k`` is ``min sum hinge + lam/2 |w|^2`` subject to
    ``-wbar <= w <= wbar``.  Iterates stack ``x = [w^1, c^1, ..., w^K, c^K]``,
    ``lam = [lam, wbar]``, ``r = [r1^1..r1^K, r2^1, ..., r2^K]``.
    """

    search_dim = 1

    def __init__(self, A, labels, folds, K, test_A=None, test_labels=None, wbar_lb=1e-6, wbar_ub=10.0):
        self.A = _dense(A)
        self.labels = np.asarray(labels, dtype=float).ravel()
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must lie in {-1, +1}")
        N, p = self.A.shape
        if self.labels.size != N:
            raise ValueError("labels and samples disagree in count")
        self.folds = np.asarray(folds, dtype=int).ravel()
        self.K = int(K)
        if self.folds.size != N or set(np.unique(self.folds)) != set(range(self.K)):
            raise ValueError("fold assignment must label every sample with 0..K-1")
        self.p = p
        self.test_A = None if test_A is None else _dense(test_A)
        self.test_labels = None if test_labels is None else np.asarray(test_labels, dtype=float).ravel()
        self.wbar_lb = np.broadcast_to(np.asarray(wbar_lb, dtype=float), (p,)).copy()
        self.wbar_ub = np.broadcast_to(np.asarray(wbar_ub, dtype=float), (p,)).copy()
        if np.any(self.wbar_lb <= 0) or np.any(self.wbar_lb > self.wbar_ub):
            raise ValueError("need 0 < wbar_lb <= wbar_ub")
        self.train_idx = [np.flatnonzero(self.folds != k) for k in range(self.K)]
        self.val_idx = [np.flatnonzero(self.folds == k) for k in range(self.K)]
        self._v_offsets = np.concatenate([[0], np.cumsum([t.size for t in self.train_idx])])

    @classmethod
    def from_dataset(cls, ds, K=3, seed=0, **kw):
        """Split into a CV set of ``3 * (N // 6)`` samples and a test set, then into folds."""
        from .data import kfold_split

        X = _dense(ds.features)
        y = np.asarray(ds.targets, dtype=float)
        if "omega" in ds.splits:
            omega, test = ds.splits["omega"], ds.splits["test"]
        else:
            perm = np.random.Generator(np.random.PCG64(seed)).permutation(y.size)
            n_cv = 3 * (y.size // 6)
            omega, test = np.sort(perm[:n_cv]), np.sort(perm[n_cv:])
        folds = kfold_split(omega.size, K, seed)
        return cls(X[omega], y[omega], folds, K, X[test], y[test], **kw)

    @property
    def tau(self):
        return 1 + self.p

    @property
    def default_eps(self):
        return 5.0 if self.K >= 6 else 1.0

    @property
    def default_lam0(self):
        return np.full(1 + self.p, 0.1)

    def search_to_lam(self, u):
        return np.concatenate([[float(np.asarray(u).ravel()[0])], self.wbar_ub])

    # --- iterate layout helpers

    def split_x(self, x):
        x = np.asarray(x, dtype=float).reshape(self.K, self.p + 1)
        return x[:, :-1], x[:, -1]

    def _split_r(self, r):
        return r[:self.K], r[self.K:].reshape(self.K, self.p)

    def _fold_v(self, v, k):
        return v[self._v_offsets[k]:self._v_offsets[k + 1]]

    # --- metrics

    def ul_objective(self, x):
        W, c = self.split_x(x)
        total = 0.0
        for k in range(self.K):
            idx = self.val_idx[k]
            total += _hinge(self.A[idx], self.labels[idx], W[k], c[k]).mean()
        return float(total / self.K)

    val_error = ul_objective

    def test_error(self, x, lam=None):
        if lam is None:
            raise ValueError("SVM test error needs the tuned hyperparameters")
        if self.test_A is None:
            raise ValueError("model has no test split")
        w, c, _ = self._fit(np.arange(self.labels.size), float(lam[0]), np.asarray(lam[1:]), LL_SETTINGS)
        return float(_hinge(self.test_A, self.test_labels, w, c).mean())

    def refit(self, lam, settings=None):
        """Fit on the whole CV set at ``lam = [lam, wbar]``; returns ``(w, c)``."""
        w, c, _ = self._fit(np.arange(self.labels.size), float(lam[0]), np.asarray(lam[1:]),
                            settings or LL_SETTINGS)
        return w, c

    def epigraph_violation(self, point):
        W, _ = self.split_x(point.x)
        r1, _ = self._split_r(point.r)
        wbar = point.lam[1:]
        v1 = 0.5 * np.sum(W * W, axis=1) - r1
        v2 = np.abs(W) - wbar
        return float(max(v1.max(), v2.max()))

    # --- lower level

    def _fit(self, idx, lam, wbar, settings):
        A, y = self.A[idx], self.labels[idx]
        B = ProgramBuilder()
        w = B.var("w", self.p)
        c = B.var("c", 1)
        u = B.var("u", idx.size)
        e = B.var("e", 1)
        B.nonneg("hinge", u.e - 1.0 + (y[:, None] * A) @ w - y.reshape(-1, 1) @ c)
        B.nonneg("u", u)
        B.nonneg("ub", wbar - w.e)
        B.nonneg("lb", wbar + w.e)
        B.sq_le("norm", w, 2.0 * e.e)
        B.minimize(u.e.sum() + lam * e.e)
        program, layout = B.build()
        sol = solve_checked(program, settings, "lower-level solve")
        return layout.value("w", sol.z), float(layout.value("c", sol.z)[0]), (sol, layout)

    def ll_solve(self, lam, settings=None):
        lam = _check_lam(lam, self.tau)
        if np.any(lam[1:] <= 0):
            raise ValueError("wbar must be positive")
        settings = settings or LL_SETTINGS
        lam0, wbar = float(lam[0]), lam[1:]
        xs, r1, r2, rhos, cs, ss, vs, a1s, a2s, sols = [], [], [], [], [], [], [], [], [], []
        for k in range(self.K):
            idx = self.train_idx[k]
            w, c, (sol, layout) = self._fit(idx, lam0, wbar, settings)
            By_A = self.labels[idx][:, None] * self.A[idx]
            v = np.clip(layout.dual("hinge", sol.y)[0], 0.0, 1.0)
            a1 = np.maximum(layout.dual("ub", sol.y)[0], 0.0)
            a2 = np.maximum(layout.dual("lb", sol.y)[0], 0.0)
            rho = By_A.T @ v + a2 - a1
            xs.append(np.concatenate([w, [c]]))
            r1.append(0.5 * float(w @ w))
            r2.append(a1 + a2)
            rhos.append(rho)
            ss.append(0.5 * float(rho @ rho) / lam0 if lam0 > 0 else 0.0)
            vs.append(v)
            a1s.append(a1)
            a2s.append(a2)
            sols.append(sol)
        x = np.concatenate(xs)
        point = IteratePoint(x, lam, np.concatenate([r1, *r2]), rhos,
                             {"s": np.array(ss), "v": np.concatenate(vs),
                              "alpha1": np.concatenate(a1s), "alpha2": np.concatenate(a2s)})
        return LLResult(x, point, sols)

    def duality_gap_value(self, z, tol=1e-7):
        """Sum over folds of the hinge/box-constrained duality gap (``inf`` off-domain)."""
        lam, wbar = float(z.lam[0]), z.lam[1:]
        if lam < -tol or np.any(wbar < -tol):
            return np.inf
        W, c = self.split_x(z.x)
        r1, r2 = self._split_r(z.r)
        a1 = z.aux["alpha1"].reshape(self.K, self.p)
        a2 = z.aux["alpha2"].reshape(self.K, self.p)
        v_all, s = z.aux["v"], z.aux["s"]
        total = 0.0
        for k in range(self.K):
            idx = self.train_idx[k]
            v = self._fold_v(v_all, k)
            y = self.labels[idx]
            scale = max(1.0, float(np.abs(v).sum()))
            if (np.any(v < -tol) or np.any(v > 1 + tol) or abs(float(y @ v)) > tol * scale
                    or np.any(a1[k] < -tol) or np.any(a2[k] < -tol)
                    or np.max(np.abs(a1[k] + a2[k] - r2[k]), initial=0.0) > tol * max(1.0, np.abs(r2[k]).max())
                    or np.any(np.abs(W[k]) > wbar + tol)):
                return np.inf
            rho_exp = (y[:, None] * self.A[idx]).T @ v + a2[k] - a1[k]
            if np.linalg.norm(z.rho[k] - rho_exp) > tol * max(1.0, np.linalg.norm(rho_exp)):
                return np.inf
            rho = z.rho[k]
            if lam <= 0:
                if np.abs(rho).max(initial=0.0) > tol:
                    return np.inf
                persp = 0.0
            else:
                persp = 0.5 * float(rho @ rho) / lam
            hinge = _hinge(self.A[idx], y, W[k], c[k]).sum()
            total += hinge + lam * r1[k] + float(wbar @ r2[k]) + persp - float(v.sum())
        return float(total)

    # --- majorized subproblem

    def build_subproblem(self, anchor, eps, beta, kind="auto"):
        K, p = self.K, self.p
        B = ProgramBuilder()
        lam = B.var("lam", 1)
        wbar = B.var("wbar", p)
        gap_terms = None
        xs, r1s, r2s, rhos, ts = [], [], [], [], []
        for k in range(K):
            tr, va = self.train_idx[k], self.val_idx[k]
            ByA = self.labels[tr][:, None] * self.A[tr]
            w = B.var(f"w{k}", p)
            c = B.var(f"c{k}", 1)
            r1 = B.var(f"r1_{k}", 1)
            r2 = B.var(f"r2_{k}", p)
            rho = B.var(f"rho{k}", p)
            s = B.var(f"s{k}", 1)
            v = B.var(f"v{k}", tr.size)
            a1 = B.var(f"alpha1_{k}", p)
            a2 = B.var(f"alpha2_{k}", p)
            u = B.var(f"u{k}", tr.size)
            t = B.var(f"t{k}", va.size)
            yv = self.labels[va]
            B.nonneg(f"hinge{k}", vstack([u.e, u.e - 1.0 + ByA @ w - self.labels[tr].reshape(-1, 1) @ c]))
            B.nonneg(f"val{k}", vstack([t.e, t.e - 1.0 + (yv[:, None] * self.A[va]) @ w - yv.reshape(-1, 1) @ c]))
            B.zero(f"stat{k}", ByA.T @ v + a2.e - a1.e - rho.e)
            B.zero(f"bias{k}", self.labels[tr].reshape(1, -1) @ v)
            B.nonneg(f"vbox{k}", vstack([v.e, 1.0 - v.e, a1.e, a2.e]))
            B.zero(f"r2_{k}", a1.e + a2.e - r2.e)
            B.sq_le(f"norm{k}", w, 2.0 * r1.e)
            B.soc(f"persp{k}", lam.e + s.e, vstack([SQRT2 * rho.e, lam.e - s.e]))
            B.nonneg(f"wbox{k}", vstack([wbar.e - w.e, wbar.e + w.e]))
            term = u.e.sum() + s.e - v.e.sum()
            gap_terms = term if gap_terms is None else gap_terms + term
            xs.append((w, c))
            r1s.append(r1)
            r2s.append(r2)
            rhos.append(rho)
            ts.append((t, va.size))
        B.nonneg("wbar_bounds", vstack([wbar.e - self.wbar_lb, self.wbar_ub - wbar.e]))
        B.nonneg("lam", lam)

        lam_slots = [lam.e] * K + [wbar[j] for _ in range(K) for j in range(p)]
        r_slots = [r.e for r in r1s] + [r2[j] for r2 in r2s for j in range(p)]
        lam_anchor = np.concatenate([np.full(K, anchor.lam[0]), np.tile(anchor.lam[1:], K)])
        u, lin, kinds = _majorant_rows(lam_slots, r_slots, lam_anchor, anchor.r, kind)
        B.sq_le("gap", u, eps - gap_terms - lin)

        obj = None
        for t, nv in ts:
            term = (1.0 / (K * nv)) * t.e.sum()
            obj = term if obj is None else obj + term
        x_blocks = vstack([blk for w, c in xs for blk in (w.e, c.e)])
        r_blocks = vstack([r.e for r in r1s] + [r.e for r in r2s])
        q = prox_rows(B, [anchor.x, anchor.lam, anchor.r, *anchor.rho],
                      [x_blocks, vstack([lam, wbar]), r_blocks] + [r.e for r in rhos], beta)
        B.minimize(obj + q.e if q is not None else obj)
        program, layout = B.build()

        def extract(layout, z):
            get = lambda k: layout.value(k, z)
            x = np.concatenate([np.concatenate([get(f"w{k}"), get(f"c{k}")]) for k in range(K)])
            r = np.concatenate([get(f"r1_{k}") for k in range(K)] + [get(f"r2_{k}") for k in range(K)])
            aux = {"s": np.concatenate([get(f"s{k}") for k in range(K)]),
                   "v": np.concatenate([get(f"v{k}") for k in range(K)]),
                   "alpha1": np.concatenate([get(f"alpha1_{k}") for k in range(K)]),
                   "alpha2": np.concatenate([get(f"alpha2_{k}") for k in range(K)])}
            return IteratePoint(x, np.concatenate([get("lam"), get("wbar")]), r,
                                [get(f"rho{k}") for k in range(K)], aux)

        return Subproblem(program, layout, kinds, extract)


class MatrixCompletion:
    """Placeholder: the low-rank completion model needs a semidefinite cone."""

    def __init__(self, *args, **kwargs):
        raise UnsupportedVariantError("matrix completion needs an SDP cone, which the solver does not support")


MODELS = {"elastic-net": ElasticNet, "sgl": SparseGroupLasso, "svm": SvmCv}
