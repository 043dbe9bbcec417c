"""The outer majorization-minimization loop.

Starting from a lower-level solution at ``lam0``, each iteration majorizes the
bilinear terms at the current point, solves the resulting convex conic
subproblem with a proximal term, and moves to its solution.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .reformulation import MajorizationKind, assemble_subproblem, duality_gap_value
from .solver import SolveError, SolverSettings, acceptable, solve

SUBPROBLEM_SETTINGS = SolverSettings(max_iter=100, tol_gap=1e-9, tol_primal=1e-9, tol_dual=1e-9)
# best iterates of stalled solves are used when within this factor of the tolerances
ACCEPT_FACTOR = 100.0

DECREASE_SLACK = 1e-8


class RunStatus:
    CONVERGED = "converged"
    MAX_OUTER = "max_outer_iters"
    STALLED = "stalled"
    ABORTED = "aborted"


@dataclass(frozen=True)
class RunConfig:
    eps: float | None = None
    beta: float = 1e-3
    lam0: tuple | None = None
    max_outer_iters: int = 100
    step_tol: float = 1e-6
    majorization: str = "auto"
    solver_settings: SolverSettings = SUBPROBLEM_SETTINGS
    seed: int = 0
    builder: str = "specialized"

    def __post_init__(self):
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if not self.step_tol > 0:
            raise ValueError("step_tol must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")
        if self.majorization != "auto":
            MajorizationKind(self.majorization)
        if self.builder not in ("specialized", "generic"):
            raise ValueError("builder must be 'specialized' or 'generic'")
        if self.lam0 is not None:
            lam0 = tuple(float(v) for v in np.ravel(self.lam0))
            if any(v < 0 for v in lam0):
                raise ValueError("lam0 must be nonnegative")
            object.__setattr__(self, "lam0", lam0)

    def resolve(self, model):
        """Fill model-dependent defaults (eps, lam0)."""
        eps = model.default_eps if self.eps is None else self.eps
        lam0 = tuple(model.default_lam0) if self.lam0 is None else self.lam0
        if len(lam0) != model.tau:
            raise ValueError(f"lam0 has length {len(lam0)}, model needs {model.tau}")
        return replace(self, eps=float(eps), lam0=tuple(float(v) for v in lam0))

    def to_dict(self):
        d = asdict(self)
        d["solver_settings"] = asdict(self.solver_settings)
        return d


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    status: str = RunStatus.MAX_OUTER

    def append(self, **rec):
        self.records.append(rec)

    @property
    def accepted(self):
        return [r for r in self.records if r["accepted"]]

    def ul_values(self):
        return [r["ul_objective"] for r in self.accepted]

    def to_jsonl(self, with_time=True):
        lines = []
        for r in self.records:
            r = dict(r) if with_time else {k: v for k, v in r.items() if k != "sub_time"}
            lines.append(json.dumps(r, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")


def _build(model, anchor, cfg):
    if cfg.builder == "generic":
        return assemble_subproblem(model, anchor, cfg.eps, cfg.beta, cfg.majorization)
    return model.build_subproblem(anchor, cfg.eps, cfg.beta, cfg.majorization)


def initialize(model, lam0, settings=None):
    """Lower-level solution at ``lam0`` with radii ``r = P(x)`` and dual certificate."""
    lam0 = np.asarray(lam0, dtype=float)
    if lam0.size != model.tau or np.any(lam0 < 0):
        raise ValueError("lam0 must be nonnegative with one entry per hyperparameter")
    return model.ll_solve(lam0, settings).point


def _record(model, z, cfg, k, step, sol, accepted, t):
    gap = duality_gap_value(model, z)
    return dict(k=k, ul_objective=model.ul_objective(z.x), val_error=model.val_error(z.x),
                step_norm=step, gap_value=gap, gap_violation=gap - cfg.eps,
                epi_violation=model.epigraph_violation(z),
                sub_iterations=None if sol is None else sol.iterations,
                sub_time=t, solver_status=None if sol is None else sol.status.value,
                accepted=accepted)


def _next_point(model, z, sub, sol, beta):
    """Subproblem minimizer, or the anchor itself when it scores no worse.

    The anchor is feasible for its own subproblem, and the solver resolves the
    proximal term only to about ``sqrt(2 * gap / beta)``.  When the anchor's
    exact subproblem objective is no larger than that of the returned point,
    the anchor is an equally valid minimizer and the step is zero.
    """
    z_new = sub.point(sol.z)
    step = z_new.distance(z)
    if model.ul_objective(z.x) <= model.ul_objective(z_new.x) + 0.5 * beta * step * step:
        return z, 0.0
    return z_new, step


def run(model, config=None):
    """Run the outer loop; returns ``(final_point, trajectory)``.

    Stops when ``|z+ - z| <= step_tol * (1 + |z|)`` (converged), at the
    iteration cap, when a subproblem solve fails (aborted), or when a step
    fails the sufficient-decrease test at solver precision (stalled; the step
    is not taken).
    """
    cfg = (config or RunConfig()).resolve(model)
    traj = Trajectory()
    t0 = time.perf_counter()
    z = initialize(model, cfg.lam0)
    traj.append(**_record(model, z, cfg, 0, None, None, True, time.perf_counter() - t0))
    settings = cfg.solver_settings
    for k in range(1, cfg.max_outer_iters + 1):
        t0 = time.perf_counter()
        sub = _build(model, z, cfg)
        sol = solve(sub.program, settings)
        elapsed = time.perf_counter() - t0
        if not acceptable(sub.program, sol, settings, ACCEPT_FACTOR):
            traj.append(k=k, ul_objective=None, val_error=None, step_norm=None, gap_value=None,
                        gap_violation=None, epi_violation=None, sub_iterations=sol.iterations,
                        sub_time=elapsed, solver_status=sol.status.value, accepted=False)
            traj.status = RunStatus.ABORTED
            return z, traj
        z_new, step = _next_point(model, z, sub, sol, cfg.beta)
        decrease = model.ul_objective(z_new.x) - model.ul_objective(z.x)
        ok = decrease <= -0.5 * cfg.beta * step * step + DECREASE_SLACK
        traj.append(**_record(model, z_new, cfg, k, step, sol, ok, elapsed))
        if not ok:
            traj.status = RunStatus.STALLED
            return z, traj
        converged = step <= cfg.step_tol * (1.0 + np.linalg.norm(z.stacked()))
        z = z_new
        if converged:
            traj.status = RunStatus.CONVERGED
            return z, traj
    traj.status = RunStatus.MAX_OUTER
    return z, traj


@dataclass
class KKTReport:
    gap_violation: float
    epi_violations: np.ndarray
    fixed_point_residual: float
    fixed_point_step: float
    solver_status: str
    multipliers: dict

    def to_dict(self):
        return {"gap_violation": self.gap_violation,
                "epi_violations": np.asarray(self.epi_violations).tolist(),
                "fixed_point_residual": self.fixed_point_residual,
                "fixed_point_step": self.fixed_point_step,
                "solver_status": self.solver_status,
                "multipliers": {k: [np.asarray(v).tolist() for v in vs] for k, vs in self.multipliers.items()}}


def kkt_report(model, z, config=None):
    """Constraint activities at ``z`` plus the one-extra-subproblem fixed-point test.

    ``fixed_point_residual`` is ``|z+ - z| / (1 + |z|)``, the quantity the
    outer loop compares with ``step_tol``.
    """
    cfg = (config or RunConfig()).resolve(model)
    gap = duality_gap_value(model, z)
    if hasattr(model, "regularizers"):
        epi = model.reg_values(z.x) - z.r
    else:
        epi = np.array([model.epigraph_violation(z)])
    sub = _build(model, z, cfg)
    sol = solve(sub.program, cfg.solver_settings)
    if not acceptable(sub.program, sol, cfg.solver_settings, ACCEPT_FACTOR):
        raise SolveError(sol, "fixed-point subproblem")
    _, step = _next_point(model, z, sub, sol, cfg.beta)
    names = []
    for c in sub.layout.constraints:
        if c.name not in names:
            names.append(c.name)
    multipliers = {name: sub.layout.dual(name, sol.y) for name in names}
    return KKTReport(gap - cfg.eps, epi, step / (1.0 + np.linalg.norm(z.stacked())), step,
                     sol.status.value, multipliers)
