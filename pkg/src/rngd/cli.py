"""Command-line entry point ``rngd``.

Subcommands::

    rngd run <spec.json>
    rngd sweep <grid.json>
    rngd check [suite ...]
    rngd gen-data <kind> [key=value ...] -o <path> [--seed N]

Exit codes: 0 success, 1 failed checks, 2 configuration error,
3 runtime error (including runs that stopped abnormally under ``run``).
"""

import argparse
import json
import sys
from pathlib import Path

from .exceptions import ConfigError, ParseError, RNGDError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
GOOD_STATUSES = ("ok", "target-reached")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_params(items):
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"expected key=value, got {item!r}")
        params[key] = _parse_value(value)
    return params


def _cmd_run(args):
    from .harness import run_spec_file

    resolved, results = run_spec_file(args.spec, args.workers)
    bad = [r for r in results if r["status"] not in GOOD_STATUSES]
    for r in results:
        print(f"{r['run_id']}: {r['status']} final={r['final_objective']:.6g}")
    print(f"wrote {len(results)} traces to {resolved['output']}")
    for r in bad:
        print(f"run {r['run_id']} stopped: {r['status']} ({r['message']})", file=sys.stderr)
    return EXIT_RUNTIME if bad else EXIT_OK


def _cmd_sweep(args):
    from .harness import sweep_file

    resolved, results, report = sweep_file(args.grid, args.workers)
    print(f"{len(results)} runs over {len(resolved['methods'])} grid points in {resolved['output']}")
    if report["best"] is None:
        print("no grid point completed without failures", file=sys.stderr)
    else:
        print(f"best: {report['best']} (mean final objective {report['best_final_objective']:.6g})")
    return EXIT_OK


def _cmd_check(args):
    from .checks import SUITES, run_suites

    unknown = [s for s in args.suites if s not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suite(s) {unknown}; available: {sorted(SUITES)}")
    results = run_suites(args.suites)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


def _cmd_gen_data(args):
    from .data import gen_synthetic
    from .harness import atomic_write, dataset_to_text

    ds = gen_synthetic(args.kind, _parse_params(args.params), args.seed)
    out = Path(args.output)
    fmt = args.format or ("csv" if out.suffix.lower() == ".csv" else "libsvm")
    atomic_write(out, dataset_to_text(ds, fmt))
    print(f"wrote {ds.n} rows with {ds.d} features ({fmt}) to {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rngd", description="Riemannian natural gradient experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment specification")
    p.add_argument("spec", help="JSON specification file")
    p.add_argument("--workers", type=int, default=None, help="pool size (default: RNGD_THREADS or CPU count)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="grid search over specification fields")
    p.add_argument("grid", help="JSON file with 'base' and 'grid'")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("check", help="run numerical self-checks")
    p.add_argument("suites", nargs="*", help="geometry, fisher, gradients, io (default: all)")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("kind", help="logistic or multiclass-lowrank")
    p.add_argument("params", nargs="*", help="generator parameters as key=value")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("libsvm", "csv"), default=None)
    p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RNGDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
