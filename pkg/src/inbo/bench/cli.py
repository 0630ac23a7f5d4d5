"""Command line: ``inbo simulate | run | experiment | validate``.

Every subcommand prints a JSON object on stdout when it succeeds. On failure
it prints ``{"error": <category>, "message": ...}`` on stderr and exits with
the category's code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .. import bo
from ..bm_sim import BMConfig, cached_ensemble
from ..errors import InBOError, InputError, ParseError
from .experiment import METHODS, problem_kernel, run_experiment, run_method
from .problems import Problem, get_problem

USAGE_EXIT = 64
INTERNAL_EXIT = 70

CONFIG_SECTIONS = {
    "bm": {f.name for f in dataclasses.fields(BMConfig)},
    "bo": {"n_iterations", "n_init", "epsilon", "epsilon_rel"},
    "fit": set(METHODS),
}


class UsageError(InBOError):
    category = "usage"
    exit_code = USAGE_EXIT


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2 with free text
        raise UsageError(message)


def load_config(path: str | Path | None) -> dict:
    """Read a JSON config; every section and key is optional.

    Sections: ``bm`` (path simulation), ``bo`` (loop settings) and ``fit``
    (per-method keyword arguments for the hyperparameter search, keyed by
    ``in_bo`` / ``tra_bo``).
    """
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ParseError(f"{path}: the config must be a JSON object")
    for section, body in cfg.items():
        if section not in CONFIG_SECTIONS:
            raise InputError(f"unknown config section {section!r}")
        if not isinstance(body, dict):
            raise ParseError(f"{path}: section {section!r} must be an object")
        unknown = set(body) - CONFIG_SECTIONS[section]
        if unknown:
            raise InputError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return cfg


def _bm_config(problem: Problem, cfg: dict) -> BMConfig:
    over = dict(cfg.get("bm", {}))
    if "time_grid" in over:
        over["time_grid"] = tuple(over["time_grid"])
    return dataclasses.replace(problem.bm, **over)


def _problem(name: str, cfg: dict) -> Problem:
    problem = get_problem(name)
    if "n_init" in cfg.get("bo", {}):
        problem = dataclasses.replace(problem, n_init=int(cfg["bo"]["n_init"]))
    return problem


def _bo_kwargs(cfg: dict) -> dict:
    b = cfg.get("bo", {})
    return {
        "n_iterations": int(b.get("n_iterations", 30)),
        "epsilon": b.get("epsilon"),
        "epsilon_rel": float(b.get("epsilon_rel", 0.01)),
    }


def _fit_options(cfg: dict) -> dict:
    return {m: dict(v) for m, v in cfg.get("fit", {}).items()}


def cmd_simulate(args, cfg) -> dict:
    problem = _problem(args.problem, cfg)
    bm = _bm_config(problem, cfg)
    t0 = time.perf_counter()
    resamples = 0
    for i in problem.inducing_indices:
        resamples += cached_ensemble(problem.spec, problem.grid[i], bm, int(i), args.cache).n_resamples
    return {
        "problem": problem.name,
        "n_ensembles": len(problem.inducing_indices),
        "n_paths": bm.n_paths,
        "n_resamples": resamples,
        "cache": str(args.cache),
        "seconds": round(time.perf_counter() - t0, 3),
    }


def cmd_run(args, cfg) -> dict:
    problem = _problem(args.problem, cfg)
    kw = _bo_kwargs(cfg)
    bo_cfg = bo.BOConfig(kw["n_iterations"], problem.n_init, args.seed, kw["epsilon"], kw["epsilon_rel"])
    kernel = problem_kernel(problem, _bm_config(problem, cfg), args.cache) if args.method == "in_bo" else None
    trace = run_method(problem, args.method, bo_cfg, kernel, _fit_options(cfg).get(args.method))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{args.method}_seed{args.seed}.csv"
    trace.to_csv(path)
    return {
        "problem": problem.name,
        "method": args.method,
        "seed": args.seed,
        "best_index": trace.best_index,
        "best_value": trace.best_value,
        "found_optimum": trace.best_index == problem.true_optimum_index,
        "trace": str(path),
    }


def cmd_experiment(args, cfg) -> dict:
    problem = _problem(args.problem, cfg)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(
        problem,
        methods,
        args.seeds,
        bm=_bm_config(problem, cfg),
        cache_dir=args.cache,
        fit_options=_fit_options(cfg),
        trace_dir=out / "traces",
        **_bo_kwargs(cfg),
    )
    report.to_csv(out / "report.csv")
    report.summary_csv(out / "summary.csv")
    report.curves_csv(out / "curves.csv")
    return {
        "problem": problem.name,
        "report": str(out / "report.csv"),
        "success_rate": {m: report.success_rate(m) for m in report.methods},
        "relaxed_success_rate": {m: report.relaxed_success_rate(m) for m in report.methods},
    }


def cmd_validate(args, cfg) -> dict:
    # construction already enforces the Problem invariants
    problem = _problem(args.problem, cfg)
    vol = problem.volumes()
    return {
        "problem": problem.name,
        "kind": problem.spec.kind,
        "n_grid": problem.n,
        "n_inducing": len(problem.inducing_indices),
        "n_init": problem.n_init,
        "value_min": float(problem.values.min()),
        "value_max": float(problem.values.max()),
        "true_optimum_index": problem.true_optimum_index,
        "optimum_ties": int(np.sum(problem.values == problem.values.max()) - 1),
        "total_volume": float(vol.sum()),
        "valid": True,
    }


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inbo", description="Intrinsic Bayesian optimisation benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, cache=True):
        sp.add_argument(
            "--problem",
            required=True,
            help="ushape, torus, sea, or 'boundary.csv,grid.csv'",
        )
        sp.add_argument("--config", help="JSON config file")
        if cache:
            sp.add_argument("--cache", help="directory for cached path ensembles")

    sp = sub.add_parser("simulate", help="simulate and cache path ensembles")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="one optimisation run, written as a trace CSV")
    common(sp)
    sp.add_argument("--method", required=True, choices=sorted(METHODS))
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("experiment", help="multi-seed comparison with report CSVs")
    common(sp)
    sp.add_argument("--methods", default="in_bo,tra_bo", help="comma-separated subset of in_bo,tra_bo")
    sp.add_argument("--seeds", type=int, default=20, help="run seeds 1..N")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("validate", help="check a problem's invariants")
    common(sp, cache=False)
    sp.set_defaults(func=cmd_validate)
    return p


def _fail(category: str, message: str, code: int) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        result = args.func(args, load_config(args.config))
    except InBOError as exc:
        return _fail(exc.category, str(exc), exc.exit_code)
    except KeyboardInterrupt:
        return _fail("interrupted", "interrupted", 130)
    except Exception as exc:  # noqa: BLE001 - report anything else as internal
        return _fail("internal", f"{type(exc).__name__}: {exc}", INTERNAL_EXIT)
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
