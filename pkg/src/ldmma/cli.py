"""Command-line harness: ``generate``, ``run`` and ``bench``.

Result rows are CSV with the columns in :data:`RESULT_COLUMNS`; floats are
printed with 6 significant digits.  Exit codes: 0 success, 1 solver abort,
2 usage or data error.

A JSON config file (``--config``) may supply any option; flags given on the
command line override it.  Recognized keys::

    {"model": "elastic-net", "method": "ldmma", "methods": ["ldmma", "grid"],
     "seeds": [0, 1], "sizes": {"ntr": 50, "nval": 20, "nte": 100, "p": 60},
     "run": {"eps": 0.01, "beta": 0.001, "max_outer_iters": 100, ...},
     "grid": {"lo": -5, "hi": 2, "count": 10}, "random": {"n": 100},
     "K": 3, "jobs": 1, "out": "results"}
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import data as D
from .algorithm import RunConfig, RunStatus, run
from .baselines import GridSpec, grid_search, random_search
from .models import MODELS, SvmCv
from .solver import SolveError

RESULT_COLUMNS = ("method", "seed", "time_s", "val_err", "test_err", "iters", "status")
AGGREGATE_COLUMNS = ("method", "runs", "coverage", "time_mean", "time_std", "val_mean", "val_std",
                     "test_mean", "test_std", "iters_mean")
METHODS = ("ldmma", "grid", "random")
EXIT_OK, EXIT_ABORT, EXIT_USAGE = 0, 1, 2

DEFAULT_SIZES = {
    "elastic-net": {"ntr": 50, "nval": 20, "nte": 100, "p": 60},
    "sgl": {"n": 90, "p": 180, "M": 9, "nte": 100},
    "svm": {"N": 100, "p": 10},
}


class UsageError(Exception):
    pass


def fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# --- experiment description

@dataclass
class ExperimentConfig:
    model: str = "elastic-net"
    methods: tuple = ("ldmma",)
    seeds: tuple = (0,)
    sizes: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    random: dict = field(default_factory=dict)
    K: int = 3
    data: str | None = None
    out: str | None = None
    trajectory: str | None = None
    jobs: int = 1

    def validate(self):
        if self.model not in MODELS:
            raise UsageError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if not self.seeds:
            raise UsageError("at least one seed is required")
        for m in self.methods:
            if m not in METHODS:
                raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if not self.methods:
            raise UsageError("at least one method is required")
        if self.K < 2:
            raise UsageError("K >= 2 required")
        if self.jobs < 1:
            raise UsageError("--jobs must be at least 1")
        return self

    def sizes_for_model(self):
        sizes = dict(DEFAULT_SIZES[self.model])
        sizes.update(self.sizes)
        return sizes

    def run_config(self, seed):
        kw = dict(self.run)
        settings = kw.pop("solver_settings", None)
        if "lam0" in kw and kw["lam0"] is not None:
            kw["lam0"] = tuple(kw["lam0"])
        try:
            cfg = RunConfig(seed=seed, **kw)
            if settings:
                cfg = replace(cfg, solver_settings=replace(cfg.solver_settings, **settings))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad run configuration: {exc}") from None
        return cfg

    def grid_spec(self, dim):
        g = {"lo": -5.0, "hi": 2.0, "count": 10, **self.grid}
        try:
            return GridSpec.uniform(dim, g["lo"], g["hi"], g["count"])
        except ValueError as exc:
            raise UsageError(f"bad grid: {exc}") from None


def _parse_seeds(text):
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return tuple(seeds)


def _load_config(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _experiment(args, multi_method):
    cfg = _load_config(getattr(args, "config", None))
    known = ExperimentConfig.__dataclass_fields__
    unknown = set(cfg) - set(known) - {"method"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "method" in cfg:
        cfg["methods"] = [cfg.pop("method")]
    exp = ExperimentConfig(**{k: v for k, v in cfg.items()})
    exp.sizes = dict(exp.sizes)
    exp.run = dict(exp.run)
    exp.grid = dict(exp.grid)
    exp.random = dict(exp.random)
    if getattr(args, "model", None):
        exp.model = args.model
    if multi_method and getattr(args, "methods", None):
        exp.methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    elif not multi_method and getattr(args, "method", None):
        exp.methods = (args.method,)
    if getattr(args, "seeds", None) is not None:
        exp.seeds = _parse_seeds(args.seeds)
    if getattr(args, "seed", None) is not None:
        exp.seeds = (args.seed,)
    exp.seeds = tuple(int(s) for s in exp.seeds)
    exp.methods = tuple(exp.methods)
    for name in ("ntr", "nval", "nte", "p", "n", "M", "N"):
        v = getattr(args, name, None)
        if v is not None:
            exp.sizes[name] = v
    for flag, key in (("eps", "eps"), ("beta", "beta"), ("max_outer", "max_outer_iters"),
                      ("step_tol", "step_tol"), ("majorization", "majorization")):
        v = getattr(args, flag, None)
        if v is not None:
            exp.run[key] = v
    if getattr(args, "lam0", None):
        exp.run["lam0"] = [float(t) for t in args.lam0.split(",")]
    for flag in ("grid_count",):
        v = getattr(args, flag, None)
        if v is not None:
            exp.grid["count"] = v
    if getattr(args, "random_n", None) is not None:
        exp.random["n"] = args.random_n
    for key in ("K", "data", "out", "trajectory", "jobs"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(exp, key, v)
    return exp.validate()


# --- datasets and models

def generate_dataset(model, seed, sizes):
    if model == "elastic-net":
        return D.gen_elastic_net(seed, sizes["ntr"], sizes["nval"], sizes["nte"], sizes["p"])
    if model == "sgl":
        return D.gen_sgl(seed, sizes["n"], sizes["p"], sizes["M"], sizes.get("nte", 100))
    return D.gen_svm(seed, sizes["N"], sizes["p"])


def build_model(kind, ds, K=3, seed=0):
    if kind == "svm":
        return SvmCv.from_dataset(ds, K=K, seed=seed)
    if not {"train", "val", "test"} <= set(ds.splits):
        raise D.DataError("regression datasets need train/val/test splits")
    return MODELS[kind].from_dataset(ds)


# --- one (method, seed) evaluation

def evaluate(exp, method, seed, ds=None):
    """Run ``method`` on one seed; returns ``(row, trajectory_or_None)``."""
    if ds is None:
        ds = generate_dataset(exp.model, seed, exp.sizes_for_model())
    model = build_model(exp.model, ds, exp.K, seed)
    t0 = time.perf_counter()
    traj = None
    try:
        if method == "ldmma":
            z, traj = run(model, exp.run_config(seed))
            val, test = model.val_error(z.x), model.test_error(z.x, z.lam)
            iters, status = len(traj.records) - 1, traj.status
        else:
            spec = exp.grid_spec(model.search_dim)
            if method == "grid":
                res = grid_search(model, spec)
            else:
                res = random_search(model, int(exp.random.get("n", 100)), spec, seed)
            val, test = res.val_error, res.test_error
            iters = len(res.evals)
            status = "ok" if np.isfinite(val) else "failed"
    except SolveError as exc:
        val = test = float("nan")
        iters, status = 0, f"solver_{exc.status.value}"
    row = {"method": method, "seed": seed, "time_s": time.perf_counter() - t0, "val_err": float(val),
           "test_err": float(test), "iters": iters, "status": status}
    return row, traj


def _failed(row):
    return row["status"] in (RunStatus.ABORTED, "failed") or row["status"].startswith("solver_")


def _evaluate_task(task):
    exp, method, seed, ds = task
    row, traj = evaluate(exp, method, seed, ds)
    return row, None if traj is None else traj.to_jsonl()


def write_rows(rows, columns, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])


def aggregate(rows):
    """Per-method mean and population std over successful seeds, with a coverage fraction."""
    out = []
    methods = []
    for r in rows:
        if r["method"] not in methods:
            methods.append(r["method"])
    for m in methods:
        mine = [r for r in rows if r["method"] == m]
        ok = [r for r in mine if not _failed(r)]
        rec = {"method": m, "runs": len(mine), "coverage": len(ok) / len(mine)}
        for key, col in (("time", "time_s"), ("val", "val_err"), ("test", "test_err")):
            vals = np.array([r[col] for r in ok], dtype=float)
            rec[f"{key}_mean"] = float(vals.mean()) if vals.size else float("nan")
            rec[f"{key}_std"] = float(vals.std()) if vals.size else float("nan")
        iters = np.array([r["iters"] for r in ok], dtype=float)
        rec["iters_mean"] = float(iters.mean()) if iters.size else float("nan")
        out.append(rec)
    return out


# --- subcommands

def cmd_generate(args):
    exp = _experiment(args, multi_method=False)
    sizes = exp.sizes_for_model()
    out = Path(exp.out or ".")
    manifest = {"model": exp.model, "sizes": sizes, "files": []}
    for seed in exp.seeds:
        ds = generate_dataset(exp.model, seed, sizes)
        stem = out / f"{exp.model}-seed{seed}"
        try:
            if exp.model == "svm":
                path = stem.with_suffix(".libsvm")
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(D.serialize_libsvm(ds))
                files = [path]
            else:
                files = list(D.save_dataset(ds, stem))
        except OSError as exc:
            raise UsageError(f"cannot write {stem}: {exc}") from None
        manifest["files"].append({"seed": seed, "paths": [str(p) for p in files]})
    print(json.dumps(manifest, indent=1, sort_keys=True))
    return EXIT_OK


def _load(path):
    try:
        return D.load_dataset(path)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load dataset {path}: {exc}") from None


def cmd_run(args):
    exp = _experiment(args, multi_method=False)
    if len(exp.seeds) != 1:
        raise UsageError("run takes exactly one seed")
    seed = exp.seeds[0]
    ds = _load(exp.data) if exp.data else None
    row, traj = evaluate(exp, exp.methods[0], seed, ds)
    buf = io.StringIO()
    write_rows([row], RESULT_COLUMNS, buf)
    sys.stdout.write(buf.getvalue())
    if exp.out:
        Path(exp.out).write_text(buf.getvalue())
    if exp.trajectory and traj is not None:
        Path(exp.trajectory).write_text(traj.to_jsonl())
    return EXIT_ABORT if _failed(row) else EXIT_OK


def cmd_bench(args):
    exp = _experiment(args, multi_method=True)
    exp.sizes = exp.sizes_for_model()
    ds = _load(exp.data) if exp.data else None
    tasks = [(exp, m, s, ds) for m in exp.methods for s in exp.seeds]
    if exp.jobs > 1:
        with ProcessPoolExecutor(max_workers=exp.jobs) as pool:
            results = list(pool.map(_evaluate_task, tasks))
    else:
        results = [_evaluate_task(t) for t in tasks]
    rows = [row for row, _ in results]
    if exp.trajectory:
        tdir = Path(exp.trajectory)
        tdir.mkdir(parents=True, exist_ok=True)
        for row, text in results:
            if text is not None:
                (tdir / f"{row['method']}-seed{row['seed']}.jsonl").write_text(text)
    agg = aggregate(rows)
    raw_buf, agg_buf = io.StringIO(), io.StringIO()
    write_rows(rows, RESULT_COLUMNS, raw_buf)
    write_rows(agg, AGGREGATE_COLUMNS, agg_buf)
    if exp.out:
        out = Path(exp.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(raw_buf.getvalue())
        (out / "aggregate.csv").write_text(agg_buf.getvalue())
    sys.stdout.write(raw_buf.getvalue())
    sys.stdout.write("\n")
    sys.stdout.write(agg_buf.getvalue())
    return EXIT_ABORT if any(_failed(r) for r in rows) else EXIT_OK


def _add_common(p, seeds_flag):
    p.add_argument("model", nargs="?", choices=sorted(MODELS), help="model variant")
    p.add_argument("--config", help="JSON config file; flags override its values")
    if seeds_flag:
        p.add_argument("--seeds", help="comma list and ranges, e.g. 0-9 or 1,3,5")
    else:
        p.add_argument("--seed", type=int)
    for name in ("ntr", "nval", "nte", "n", "M", "N"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("-p", type=int, dest="p", help="feature count")
    p.add_argument("--out", help="output path")


def _add_run_flags(p):
    p.add_argument("--K", type=int, help="SVM fold count")
    p.add_argument("--eps", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--max-outer", type=int, dest="max_outer")
    p.add_argument("--step-tol", type=float, dest="step_tol")
    p.add_argument("--majorization", choices=["auto", "cauchy", "square_linearized"])
    p.add_argument("--lam0", help="comma-separated initial hyperparameters")
    p.add_argument("--grid-count", type=int, dest="grid_count")
    p.add_argument("--random-n", type=int, dest="random_n")


def build_parser():
    parser = argparse.ArgumentParser(prog="ldmma", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", help="write synthetic datasets")
    _add_common(g, seeds_flag=True)
    g.add_argument("--seed", type=int)
    r = sub.add_parser("run", help="one method on one seed")
    _add_common(r, seeds_flag=False)
    _add_run_flags(r)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--data", help="dataset file (.csv with .json sidecar, or .libsvm)")
    r.add_argument("--trajectory", help="write the per-iteration log as JSON lines")
    b = sub.add_parser("bench", help="several methods over several seeds")
    _add_common(b, seeds_flag=True)
    _add_run_flags(b)
    b.add_argument("--methods", help="comma list from ldmma, grid, random")
    b.add_argument("--jobs", type=int, help="parallel workers")
    b.add_argument("--data", help="fixed dataset for every seed (seeds then only drive splits)")
    b.add_argument("--trajectory", help="directory for per-run JSON-lines logs")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"generate": cmd_generate, "run": cmd_run, "bench": cmd_bench}[args.command]
    try:
        return handler(args)
    except (UsageError, ValueError) as exc:  # DataError is a ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
