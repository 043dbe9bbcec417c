"""Synthetic generators, libsvm text I/O, fold splits and dataset files.

All randomness goes through ``numpy.random.Generator(PCG64(seed))`` so that
datasets reproduce bit-for-bit across platforms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

AR_RHO = 0.5
CHOLESKY_MAX_P = 2000


class DataError(ValueError):
    pass


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Dataset:
    features: object
    targets: np.ndarray
    splits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.features.shape[0] != self.targets.size:
            raise DataError("features and targets disagree in row count")
        self.splits = {k: np.asarray(v, dtype=int) for k, v in self.splits.items()}
        index_sets = [set(v.tolist()) for k, v in self.splits.items() if k != "folds"]
        for i, a in enumerate(index_sets):
            for b in index_sets[i + 1:]:
                if a & b:
                    raise DataError("split index sets overlap")

    @property
    def dense_features(self):
        F = self.features
        return np.asarray(F.toarray() if sp.issparse(F) else F, dtype=float)

    def equals(self, other):
        return (np.array_equal(self.dense_features, other.dense_features)
                and np.array_equal(self.targets, other.targets)
                and self.splits.keys() == other.splits.keys()
                and all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits))


def _contiguous_splits(*sizes):
    out, start = [], 0
    for n in sizes:
        out.append(np.arange(start, start + n))
        start += n
    return out


def ar1_features(rng, n, p, rho=AR_RHO):
    """Rows ``N(0, S)`` with ``S_jk = rho^|j-k|``."""
    if p <= CHOLESKY_MAX_P:
        L = np.linalg.cholesky(scipy.linalg.toeplitz(rho ** np.arange(p)))
        return rng.standard_normal((n, p)) @ L.T
    eta = rng.standard_normal((n, p))
    A = np.empty((n, p))
    A[:, 0] = eta[:, 0]
    tail = np.sqrt(1.0 - rho * rho)
    for j in range(1, p):
        A[:, j] = rho * A[:, j - 1] + tail * eta[:, j]
    return A


def gen_elastic_net(seed, n_tr, n_val, n_te, p, sigma=2.0, support=15):
    """AR(1)-correlated design, ``support`` unit coefficients, Gaussian noise."""
    if p < support:
        raise DataError(f"p ≥ {support} required")
    if min(n_tr, n_val, n_te) < 1:
        raise DataError("split sizes must be positive")
    rng = rng_for(seed)
    n = n_tr + n_val + n_te
    A = ar1_features(rng, n, p)
    beta = np.zeros(p)
    beta[rng.choice(p, size=support, replace=False)] = 1.0
    b = A @ beta + sigma * rng.standard_normal(n)
    tr, va, te = _contiguous_splits(n_tr, n_val, n_te)
    meta = {"kind": "elastic-net", "seed": seed, "beta": beta.tolist()}
    return Dataset(A, b, {"train": tr, "val": va, "test": te}, meta)


def gen_sgl(seed, n, p, M, n_te=100, sigma=2.0, signal_groups=3):
    """Standard normal design with ``M`` equal groups; signal ``(1..5, 0, ...)`` in the first groups."""
    if M < 1 or p % M:
        raise DataError("p must split into M equal groups")
    size = p // M
    if size < 5:
        raise DataError("group size must be at least 5")
    if n < 3:
        raise DataError("n must be at least 3")
    rng = rng_for(seed)
    n_val = n // 3
    total = n + n_val + n_te
    A = rng.standard_normal((total, p))
    beta = np.zeros(p)
    for g in range(min(signal_groups, M)):
        beta[g * size:g * size + 5] = np.arange(1, 6)
    b = A @ beta + sigma * rng.standard_normal(total)
    tr, va, te = _contiguous_splits(n, n_val, n_te)
    groups = [list(range(g * size, (g + 1) * size)) for g in range(M)]
    meta = {"kind": "sgl", "seed": seed, "groups": groups, "beta": beta.tolist()}
    return Dataset(A, b, {"train": tr, "val": va, "test": te}, meta)


def gen_svm(seed, N=100, p=10, flip=0.1):
    """Linearly separable labels through a random hyperplane, with ``flip`` label noise."""
    rng = rng_for(seed)
    A = rng.standard_normal((N, p))
    w = rng.standard_normal(p)
    y = np.where(A @ w + 0.1 * rng.standard_normal() >= 0, 1.0, -1.0)
    y[rng.random(N) < flip] *= -1.0
    return Dataset(A, y, {}, {"kind": "svm", "seed": seed})


def kfold_split(n, K, seed):
    """Assign ``range(n)`` to ``K`` folds of sizes differing by at most one."""
    if K < 2:
        raise DataError("K >= 2 required")
    if n < K:
        raise DataError(f"need at least K={K} samples, got {n}")
    folds = np.empty(n, dtype=int)
    folds[rng_for(seed).permutation(n)] = np.arange(n) % K
    return folds


# --- libsvm text format

def _label(token, lineno):
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"bad label {token!r} at line {lineno}") from None
    if value == 1.0:
        return 1.0
    if value in (-1.0, 0.0):
        return -1.0
    raise DataError(f"label {token!r} not in {{-1, 0, 1}} at line {lineno}")


def parse_libsvm(text):
    """Parse ``label idx:val ...`` lines (1-based, strictly increasing indices)."""
    rows, cols, vals, labels = [], [], [], []
    width = 0
    lineno = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_label(tokens[0], lineno))
        last = 0
        row = len(labels) - 1
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            try:
                j, v = int(idx), float(val)
            except ValueError:
                raise DataError(f"malformed token {tok!r} at line {lineno}") from None
            if not sep or j < 1:
                raise DataError(f"malformed token {tok!r} at line {lineno}")
            if j <= last:
                raise DataError(f"indices not increasing at line {lineno}")
            last = j
            rows.append(row)
            cols.append(j - 1)
            vals.append(v)
        width = max(width, last)
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), width))
    return Dataset(X, np.array(labels), {}, {"kind": "svm"})


def serialize_libsvm(ds):
    X = sp.csr_matrix(ds.features)
    lines = []
    for i, label in enumerate(ds.targets):
        start, end = X.indptr[i], X.indptr[i + 1]
        items = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[start:end], X.data[start:end]) if v != 0)
        lines.append(f"{int(label):d} {items}".rstrip())
    return "\n".join(lines) + "\n"


def load_libsvm(path):
    return parse_libsvm(Path(path).read_text())


def bundled_svm_path():
    return Path(__file__).with_name("resources") / "svm_small.libsvm"


# --- CSV + JSON sidecar

def save_dataset(ds, stem):
    """Write ``<stem>.csv`` (features then target) and ``<stem>.json`` (splits, meta)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([ds.dense_features, ds.targets])
    header = ",".join([f"x{j}" for j in range(table.shape[1] - 1)] + ["y"])
    np.savetxt(stem.with_suffix(".csv"), table, delimiter=",", header=header, comments="", fmt="%.17g")
    sidecar = {"splits": {k: v.tolist() for k, v in ds.splits.items()}, "meta": ds.meta}
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return stem.with_suffix(".csv"), stem.with_suffix(".json")


def load_dataset(path):
    path = Path(path)
    if path.suffix in (".libsvm", ".svm", ".txt"):
        return load_libsvm(path)
    stem = path.with_suffix("")
    table = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)
    sidecar = json.loads(stem.with_suffix(".json").read_text())
    return Dataset(table[:, :-1], table[:, -1], sidecar["splits"], sidecar["meta"])
