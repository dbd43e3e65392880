"""Experiment specifications, run execution and output artefacts.

A specification is a JSON object::

    {
      "name": "logreg-bw",
      "objective": "gaussian-vb",
      "objective_params": {"geometry": "bw", "prior_var": 25},
      "data": {"synthetic": "logistic", "params": {"n": 500, "d": 20}, "seed": 0},
      "run": {"preconditioner": "NGD-Approx", "iterations": 3000,
              "schedule": {"c0": 1.0, "c1": 100.0, "alpha": 0.75},
              "fisher": {"epsilon": 1000.0, "scores_per_iter": 10}},
      "methods": [{"label": "GD", "preconditioner": "GD"}],
      "replications": 5,
      "seed": 0,
      "output": "out/logreg-bw"
    }

``methods`` is optional; each entry overrides fields of ``run`` (and, under
``objective_params``, of the objective) and gets its own label. Outputs are
``traces/<run-id>.csv``, ``summary.csv``, ``plot.gp`` and
``resolved-config.json`` in the output directory. Every file is written to
a temporary name and moved into place.
"""

import copy
import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from itertools import product
from pathlib import Path

import numpy as np

from . import data as data_mod
from .exceptions import ConfigError, InvalidInput
from .objectives import (
    BNNTarget,
    GaussianMeanMLE,
    GaussianVB,
    LogisticVBProblem,
    ReducedRankProblem,
    SylvesterFlowVB,
)
from .optimizer import FisherConfig, RunConfig, StepSchedule, run

OBJECTIVES = ("gaussian-vb", "sylvester-flow", "reduced-rank", "gaussian-mean")

#: Step-size grid used by ``sweep`` when the grid file names no axes.
DEFAULT_GRID = {
    "run.schedule.c0": [float(c) for c in np.logspace(-3, 0, 7)],
    "run.schedule.alpha": [0.6, 0.75, 0.9],
}

_OBJECTIVE_DEFAULTS = {
    "gaussian-vb": {"geometry": "bw", "estimator": "hessian", "prior_var": 25.0,
                    "mc_samples": 100, "eval_samples": 2000, "eval_seed": 12345,
                    "init_cov": 1.0, "control_variate": False},
    "sylvester-flow": {"hidden": 10, "prior_var": 10.0, "mc_samples": 10,
                       "eval_samples": 1000, "eval_seed": 12345, "control_variate": False},
    "reduced-rank": {"rank": 2, "batch_size": 128},
    "gaussian-mean": {"d": 5, "cond": 10.0, "batch_size": 1, "problem_seed": 0},
}

_TOP_KEYS = {"name", "objective", "objective_params", "data", "run", "methods",
             "replications", "seed", "output", "standardize"}
_RUN_KEYS = {"preconditioner", "schedule", "iterations", "fisher", "log_every",
             "max_halvings", "timing", "record_events", "stop_below", "geometry"}


# --------------------------------------------------------------------------
# atomic output
# --------------------------------------------------------------------------
def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# specification handling
# --------------------------------------------------------------------------
def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _run_defaults():
    cfg = asdict(RunConfig())
    cfg.pop("seed")
    return cfg


def resolve_spec(spec, base_dir=None):
    """Validate a specification and fill in every default.

    Parameters
    ----------
    spec : dict
    base_dir : path, optional
        Directory that relative data and output paths are resolved against.

    Returns
    -------
    dict
        The resolved specification; ``methods`` always holds at least one
        entry, each with a ``label``, a full ``run`` block and full
        ``objective_params``.

    Raises
    ------
    ConfigError
        For unknown keys, tags or invalid values.
    """
    if not isinstance(spec, dict):
        raise ConfigError("specification must be a JSON object")
    unknown = set(spec) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown specification keys: {sorted(unknown)}")
    objective = spec.get("objective")
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}; expected one of {OBJECTIVES}")
    reps = spec.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replications must be a positive integer")
    seed = spec.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")

    obj_params = _merge(_OBJECTIVE_DEFAULTS[objective], spec.get("objective_params", {}))
    extra = set(obj_params) - set(_OBJECTIVE_DEFAULTS[objective])
    if extra:
        raise ConfigError(f"unknown parameters for {objective}: {sorted(extra)}")

    run_block = _merge(_run_defaults(), spec.get("run", {}))
    methods = spec.get("methods") or [{}]
    if not isinstance(methods, list):
        raise ConfigError("methods must be a list")

    resolved_methods = []
    for i, m in enumerate(methods):
        m = dict(m)
        label = m.pop("label", None)
        obj_over = m.pop("objective_params", {})
        bad = set(m) - _RUN_KEYS
        if bad:
            raise ConfigError(f"unknown method keys: {sorted(bad)}")
        rb = _merge(run_block, m)
        op = _merge(obj_params, obj_over)
        extra = set(op) - set(_OBJECTIVE_DEFAULTS[objective])
        if extra:
            raise ConfigError(f"unknown parameters for {objective}: {sorted(extra)}")
        if objective == "gaussian-vb" and not rb.get("geometry"):
            rb["geometry"] = op["geometry"]
        if label is None:
            label = rb["preconditioner"] if len(methods) == 1 else f"{rb['preconditioner']}-{i}"
        build_run_config(rb, 0)
        resolved_methods.append({"label": str(label), "run": rb, "objective_params": op})
    labels = [m["label"] for m in resolved_methods]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"method labels must be distinct: {labels}")

    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    data_spec = spec.get("data")
    if objective != "gaussian-mean" and data_spec is None:
        raise ConfigError(f"objective {objective} needs a data block")
    if data_spec is not None:
        data_spec = dict(data_spec)
        if "path" in data_spec:
            data_spec["path"] = str((base_dir / data_spec["path"]).resolve())
        if "labels" in data_spec:
            data_spec["labels"] = str((base_dir / data_spec["labels"]).resolve())
    output = spec.get("output", f"out/{spec.get('name', objective)}")
    return {
        "name": str(spec.get("name", objective)),
        "objective": objective,
        "data": data_spec,
        "standardize": bool(spec.get("standardize", False)),
        "replications": reps,
        "seed": seed,
        "output": str((base_dir / output).resolve()),
        "methods": resolved_methods,
    }


def build_run_config(block, seed):
    """:class:`RunConfig` from a resolved ``run`` block."""
    try:
        sched = block.get("schedule", {})
        fisher = block.get("fisher", {})
        return RunConfig(
            preconditioner=block["preconditioner"],
            schedule=StepSchedule(**sched),
            iterations=int(block["iterations"]),
            fisher=FisherConfig(**fisher),
            seed=int(seed),
            log_every=int(block["log_every"]),
            geometry=str(block.get("geometry", "")),
            max_halvings=int(block["max_halvings"]),
            timing=bool(block["timing"]),
            record_events=bool(block["record_events"]),
            stop_below=block.get("stop_below"),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid run block: {exc}") from exc


def run_seed(seed, index):
    """Independent 63-bit seed for run ``index`` of a spec seeded with ``seed``.

    Uses :class:`numpy.random.SeedSequence` with the run index as spawn
    key, so streams do not overlap and do not depend on execution order.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# --------------------------------------------------------------------------
# datasets and objectives
# --------------------------------------------------------------------------
def load_dataset(data_spec, standardize=False):
    """Dataset described by a ``data`` block.

    Accepted forms are ``{"synthetic": kind, "params": {...}, "seed": s}``
    and ``{"path": file, "format": "libsvm" | "csv" | "idx", ...}`` where
    CSV accepts ``label_column``, ``header`` and ``delimiter`` and IDX
    needs ``labels`` and accepts ``limit``.
    """
    if data_spec is None:
        return None
    if "synthetic" in data_spec:
        ds = data_mod.gen_synthetic(data_spec["synthetic"], data_spec.get("params", {}),
                                    int(data_spec.get("seed", 0)))
    elif "path" in data_spec:
        fmt = data_spec.get("format") or _guess_format(data_spec["path"])
        if fmt == "libsvm":
            ds = data_mod.parse_libsvm(data_spec["path"], data_spec.get("n_features"))
        elif fmt == "csv":
            ds = data_mod.parse_csv(data_spec["path"], data_spec.get("label_column", -1),
                                    bool(data_spec.get("header", False)),
                                    data_spec.get("delimiter", ","))
        elif fmt == "idx":
            if "labels" not in data_spec:
                raise ConfigError("IDX data needs a labels file")
            ds = data_mod.parse_idx(data_spec["path"], data_spec["labels"], data_spec.get("limit"))
        else:
            raise ConfigError(f"unknown data format {fmt!r}")
    else:
        raise ConfigError("data block needs 'synthetic' or 'path'")
    return data_mod.standardize(ds) if standardize else ds


def _guess_format(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return "csv"
    if suffix in (".svm", ".libsvm", ".txt"):
        return "libsvm"
    if suffix in (".idx", ".ubyte") or "idx" in Path(path).name:
        return "idx"
    raise ConfigError(f"cannot infer the format of {path}; set data.format")


def build_objective(objective, params, dataset):
    """Objective instance for a resolved specification."""
    p = params
    if objective == "gaussian-vb":
        _binary(dataset)
        problem = LogisticVBProblem(dataset.X, dataset.y, p["prior_var"], p["mc_samples"])
        return GaussianVB(problem, p["geometry"], p["estimator"], p["mc_samples"], p["eval_samples"],
                          p["eval_seed"], p["init_cov"], p["control_variate"])
    if objective == "sylvester-flow":
        _binary(dataset)
        target = BNNTarget(dataset.X, dataset.y, p["hidden"], p["prior_var"])
        return SylvesterFlowVB(target, p["mc_samples"], p["eval_samples"], p["eval_seed"],
                               p["control_variate"])
    if objective == "reduced-rank":
        return ReducedRankProblem(dataset.X, dataset.y, p["rank"], dataset.n_classes, p["batch_size"])
    rng = np.random.default_rng(p["problem_seed"])
    d = int(p["d"])
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    cov = (Q * np.geomspace(1.0, float(p["cond"]), d)) @ Q.T
    return GaussianMeanMLE(0.5 * (cov + cov.T), rng.standard_normal(d), p["batch_size"])


def _binary(dataset):
    if dataset.n_classes != 2:
        raise ConfigError(f"binary labels required, dataset has {dataset.n_classes} classes")


# --------------------------------------------------------------------------
# execution
# --------------------------------------------------------------------------
def plan_runs(resolved):
    """List of run descriptors ``(run_id, method_index, replication, seed)``."""
    plan = []
    index = 0
    for mi, m in enumerate(resolved["methods"]):
        for rep in range(resolved["replications"]):
            run_id = f"{_slug(m['label'])}-r{rep}"
            plan.append((run_id, mi, rep, run_seed(resolved["seed"], index)))
            index += 1
    return plan


def _slug(text):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in text)


def _execute(resolved, item, dataset):
    run_id, mi, rep, seed = item
    method = resolved["methods"][mi]
    if dataset is None and resolved["data"] is not None:
        dataset = load_dataset(resolved["data"], resolved["standardize"])
    objective = build_objective(resolved["objective"], method["objective_params"], dataset)
    trace = run(objective, build_run_config(method["run"], seed))
    out = Path(resolved["output"]) / "traces" / f"{run_id}.csv"
    atomic_write(out, trace.to_csv())
    return {
        "run_id": run_id,
        "method": method["label"],
        "replication": rep,
        "seed": seed,
        "status": trace.status,
        "message": trace.message,
        "final_objective": trace.final_objective,
        "halvings": trace.halvings,
        "trace": trace.to_csv(),
    }


def _worker(args):
    resolved, item = args
    return _execute(resolved, item, None)


def max_workers():
    """Pool size: ``RNGD_THREADS`` when set, else the CPU count."""
    raw = os.environ.get("RNGD_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"RNGD_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("RNGD_THREADS must be at least 1")
    return n


def execute(resolved, workers=None):
    """Run every (method, replication) pair and write all artefacts.

    Returns
    -------
    list of dict
        One result per run, in plan order.
    """
    plan = plan_runs(resolved)
    workers = max_workers() if workers is None else int(workers)
    out = Path(resolved["output"])
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "resolved-config.json", json.dumps(_provenance(resolved, plan), indent=2) + "\n")
    if workers <= 1 or len(plan) == 1:
        dataset = load_dataset(resolved["data"], resolved["standardize"])
        results = [_execute(resolved, item, dataset) for item in plan]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(plan))) as pool:
            results = list(pool.map(_worker, [(resolved, item) for item in plan]))
    write_summary(out / "summary.csv", results, [m["label"] for m in resolved["methods"]])
    write_plot_script(out / "plot.gp", results, resolved["name"])
    atomic_write(out / "runs.csv", _runs_table(results))
    return results


def _provenance(resolved, plan):
    from . import __version__

    return {
        "version": __version__,
        "spec": resolved,
        "runs": [{"run_id": r, "method": resolved["methods"][m]["label"], "replication": k, "seed": s}
                 for r, m, k, s in plan],
    }


def _runs_table(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["run_id", "method", "replication", "seed", "status", "final_objective", "halvings"])
    for r in results:
        w.writerow([r["run_id"], r["method"], r["replication"], r["seed"], r["status"],
                    repr(float(r["final_objective"])), r["halvings"]])
    return buf.getvalue()


def _read_trace(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return {int(r["iter"]): float(r["objective"]) for r in rows}


def summarise(results, labels):
    """Mean and standard error per method at iterations logged by every replication.

    Returns
    -------
    list of tuple
        ``(method, iter, mean, stderr, n)`` rows.
    """
    rows = []
    for label in labels:
        traces = [_read_trace(r["trace"]) for r in results if r["method"] == label]
        if not traces:
            continue
        common = sorted(set.intersection(*(set(t) for t in traces)))
        for it in common:
            vals = np.array([t[it] for t in traces])
            n = len(vals)
            se = float(vals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            rows.append((label, it, float(vals.mean()), se, n))
    return rows


def write_summary(path, results, labels):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "iter", "mean", "stderr", "n"])
    for label, it, mean, se, n in summarise(results, labels):
        w.writerow([label, it, repr(mean), repr(se), n])
    atomic_write(path, buf.getvalue())


def write_plot_script(path, results, title):
    """Gnuplot script drawing every trace, to be run from the output directory."""
    lines = [
        f"set title {json.dumps(title)}",
        "set datafile separator ','",
        "set key outside right",
        "set xlabel 'iteration'",
        "set ylabel 'objective'",
        "set terminal pngcairo size 1000,600",
        f"set output {json.dumps(_slug(title) + '.png')}",
    ]
    parts = [f"'traces/{r['run_id']}.csv' using 1:2 skip 1 with lines title {json.dumps(r['run_id'])}"
             for r in results]
    lines.append("plot " + ", \\\n     ".join(parts) if parts else "# no traces")
    atomic_write(path, "\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------
def expand_grid(grid_spec):
    """Specifications for every point of a sweep grid.

    ``grid_spec`` holds ``base`` (a specification) and ``grid``, a mapping
    from dotted keys such as ``"run.schedule.c0"`` to value lists. An empty
    or missing ``grid`` uses :data:`DEFAULT_GRID`. Each grid point becomes
    one method whose label lists the assignments.
    """
    if not isinstance(grid_spec, dict) or "base" not in grid_spec:
        raise ConfigError("sweep file needs a 'base' specification")
    grid = grid_spec.get("grid") or DEFAULT_GRID
    keys = list(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid axis {k!r} needs a non-empty list")
    base = copy.deepcopy(grid_spec["base"])
    base.pop("methods", None)
    methods = []
    for values in product(*(grid[k] for k in keys)):
        override = {}
        for k, v in zip(keys, values):
            parts = k.split(".")
            if parts[0] == "run":
                parts = parts[1:]
            elif parts[0] != "objective_params":
                raise ConfigError(f"grid key {k!r} must start with 'run.' or 'objective_params.'")
            if not parts:
                raise ConfigError(f"grid key {k!r} names no field")
            node = override
            for p in parts[:-1]:
                node = node.setdefault(p, {})
            node[parts[-1]] = v
        override["label"] = ",".join(f"{k.split('.')[-1]}={_fmt(v)}" for k, v in zip(keys, values))
        methods.append(override)
    base["methods"] = methods
    return base, grid


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def best_method(results, labels):
    """Label with the lowest mean final objective among fully successful methods."""
    best, best_val = None, np.inf
    for label in labels:
        rs = [r for r in results if r["method"] == label]
        if not rs or any(r["status"] not in ("ok", "target-reached") for r in rs):
            continue
        val = float(np.mean([r["final_objective"] for r in rs]))
        if val < best_val:
            best, best_val = label, val
    return best, best_val


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def run_spec_file(path, workers=None):
    """Resolve and execute the specification stored at ``path``."""
    path = Path(path)
    resolved = resolve_spec(load_json(path), path.parent)
    return resolved, execute(resolved, workers)


def sweep_file(path, workers=None):
    """Expand, execute and rank the sweep stored at ``path``."""
    path = Path(path)
    grid_spec = load_json(path)
    spec, grid = expand_grid(grid_spec)
    resolved = resolve_spec(spec, path.parent)
    results = execute(resolved, workers)
    labels = [m["label"] for m in resolved["methods"]]
    best, value = best_method(results, labels)
    report = {"grid": grid, "best": best, "best_final_objective": None if best is None else value}
    atomic_write(Path(resolved["output"]) / "sweep.json", json.dumps(report, indent=2) + "\n")
    return resolved, results, report


def dataset_to_text(ds, fmt):
    """Serialise a dataset as LIBSVM or CSV text (CSV gets a header row)."""
    if fmt == "libsvm":
        return data_mod.write_libsvm(ds)
    if fmt == "csv":
        return data_mod.write_csv(ds, header=[f"x{j + 1}" for j in range(ds.d)] + ["label"])
    raise InvalidInput(f"unknown output format {fmt!r}")
