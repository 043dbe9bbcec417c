"""Gradient-free baselines: grid search and log-uniform random search.

Both evaluate ``model.ll_solve`` followed by ``model.val_error`` at each
candidate.  Candidates live in the model's search space (``model.search_dim``
coordinates, mapped to hyperparameters by ``model.search_to_lam``).
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import rng_for
from .solver import SolveError

DEFAULT_LOG_RANGE = (-5.0, 2.0)
DEFAULT_COUNT = 10


@dataclass(frozen=True)
class GridSpec:
    """Per-coordinate log10 ranges and point counts.

    A coordinate with ``count == 1`` must have ``lo == hi`` (a degenerate axis).
    """

    ranges: tuple
    counts: tuple

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        counts = tuple(int(c) for c in self.counts)
        if len(ranges) != len(counts) or not ranges:
            raise ValueError("ranges and counts must be non-empty and of equal length")
        for (lo, hi), c in zip(ranges, counts):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ValueError("range bounds must be finite")
            if c == 1:
                if lo != hi:
                    raise ValueError("a one-point axis needs lo == hi")
            elif c < 2 or not lo < hi:
                raise ValueError("each axis needs lo < hi and count >= 2")
        object.__setattr__(self, "ranges", ranges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, dim, lo=DEFAULT_LOG_RANGE[0], hi=DEFAULT_LOG_RANGE[1], count=DEFAULT_COUNT):
        return cls(((lo, hi),) * dim, (count,) * dim)

    @property
    def dim(self):
        return len(self.ranges)

    def axes(self):
        return [np.logspace(lo, hi, c) if c > 1 else np.array([10.0 ** lo])
                for (lo, hi), c in zip(self.ranges, self.counts)]

    def points(self):
        """All grid points in lexicographic (ascending) order."""
        return [np.array(p) for p in itertools.product(*self.axes())]

    def sample(self, n, seed):
        rng = rng_for(seed)
        lo = np.array([r[0] for r in self.ranges])
        hi = np.array([r[1] for r in self.ranges])
        return [10.0 ** u for u in rng.uniform(lo, hi, size=(n, self.dim))]


class Evaluation(NamedTuple):
    u: np.ndarray
    val_error: float


class SearchResult(NamedTuple):
    lam: np.ndarray
    val_error: float
    test_error: float
    evals: list


def evaluate_point(model, u, settings=None):
    """Validation error of the lower-level solution at search point ``u``; ``inf`` on failure."""
    try:
        ll = model.ll_solve(model.search_to_lam(u), settings)
        val = float(model.val_error(ll.x))
    except (SolveError, FloatingPointError, np.linalg.LinAlgError):
        return float("inf")
    return val if np.isfinite(val) else float("inf")


def _evaluate_all(model, points, settings, jobs):
    if jobs is None or jobs <= 1 or len(points) < 2:
        return [evaluate_point(model, u, settings) for u in points]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(evaluate_point, itertools.repeat(model), points, itertools.repeat(settings)))


def _select(model, points, values, settings):
    # ties go to the lexicographically smallest lam
    order = sorted(range(len(points)), key=lambda i: (values[i], tuple(model.search_to_lam(points[i]))))
    best = order[0]
    u = points[best]
    lam = model.search_to_lam(u)
    if np.isfinite(values[best]):
        ll = model.ll_solve(lam, settings)
        try:
            test = float(model.test_error(ll.x, lam))
        except ValueError:  # no test split
            test = float("nan")
    else:
        test = float("inf")
    evals = [Evaluation(p, v) for p, v in zip(points, values)]
    return SearchResult(lam, values[best], test, evals)


def _check_dim(model, spec):
    if spec.dim != model.search_dim:
        raise ValueError(f"search space has {model.search_dim} coordinates, spec has {spec.dim}")


def grid_search(model, spec=None, settings=None, jobs=None):
    """Exhaustive search over ``spec`` (default 10 log-spaced points per coordinate on [1e-5, 1e2])."""
    spec = spec or GridSpec.uniform(model.search_dim)
    _check_dim(model, spec)
    points = spec.points()
    return _select(model, points, _evaluate_all(model, points, settings, jobs), settings)


def random_search(model, n=100, spec=None, seed=0, settings=None, jobs=None):
    """``n`` log-uniform samples from the box of ``spec``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    spec = spec or GridSpec.uniform(model.search_dim)
    _check_dim(model, spec)
    points = spec.sample(n, seed)
    return _select(model, points, _evaluate_all(model, points, settings, jobs), settings)
