"""Multi-seed comparison of the intrinsic and Euclidean surrogates."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import bo
from ..bm_sim import BMConfig, cached_ensemble
from ..errors import InBOError, InputError
from ..heat_kernel import KernelEstimate, build_kernel
from .problems import Problem

log = logging.getLogger(__name__)

METHODS = {"in_bo": "intrinsic", "tra_bo": "rbf"}
REPORT_COLUMNS = ["method", "seed", "best_value", "found_optimum", "n_evals_to_optimum"]


def problem_kernel(
    problem: Problem,
    bm: BMConfig | None = None,
    cache_dir: str | Path | None = None,
) -> KernelEstimate:
    """Simulate (or load) one ensemble per inducing point and assemble the kernel.

    Each ensemble's random stream is keyed by the inducing point's grid index.
    """
    bm = problem.bm if bm is None else bm
    ensembles = []
    for i in problem.inducing_indices:
        ensembles.append(cached_ensemble(problem.spec, problem.grid[i], bm, int(i), cache_dir))
    return build_kernel(ensembles, problem.grid, problem.volumes(), problem.inducing_indices)


@dataclass(frozen=True)
class SeedResult:
    method: str
    seed: int
    initial_indices: tuple[int, ...]
    best_index: int | None
    best_value: float | None
    found_optimum: bool
    relaxed_success: bool
    n_evals_to_optimum: int | None
    trace: bo.BOTrace | None = field(default=None, repr=False)
    error: str | None = None


@dataclass
class ExperimentReport:
    problem: str
    true_optimum_index: int
    relaxed_threshold: float
    results: list[SeedResult] = field(default_factory=list)

    def for_method(self, method: str) -> list[SeedResult]:
        return [r for r in self.results if r.method == method]

    @property
    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.results))

    def success_rate(self, method: str) -> float:
        rs = self.for_method(method)
        return float(np.mean([r.found_optimum for r in rs])) if rs else float("nan")

    def relaxed_success_rate(self, method: str) -> float:
        rs = self.for_method(method)
        return float(np.mean([r.relaxed_success for r in rs])) if rs else float("nan")

    def incumbents(self, method: str) -> np.ndarray:
        """Final best values of the runs that completed, the input for violin plots."""
        return np.array([r.best_value for r in self.for_method(method) if r.best_value is not None])

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.results:
            w.writerow([
                r.method,
                r.seed,
                "" if r.best_value is None else repr(r.best_value),
                int(r.found_optimum),
                "" if r.n_evals_to_optimum is None else r.n_evals_to_optimum,
            ])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "n_seeds", "success_rate", "relaxed_success_rate", "n_failed"])
        for m in self.methods:
            rs = self.for_method(m)
            w.writerow([
                m,
                len(rs),
                repr(self.success_rate(m)),
                repr(self.relaxed_success_rate(m)),
                sum(r.error is not None for r in rs),
            ])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def curves_csv(self, path: str | Path | None = None) -> str:
        """Best-so-far value after each evaluation, one row per (method, seed, evaluation)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "seed", "evaluation", "best_value"])
        for r in self.results:
            if r.trace is None:
                continue
            for k, rec in enumerate(r.trace.records, start=1):
                w.writerow([r.method, r.seed, k, repr(rec.best_value)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def run_method(
    problem: Problem,
    method: str,
    cfg: bo.BOConfig,
    kernel: KernelEstimate | None = None,
    fit_options: dict | None = None,
) -> bo.BOTrace:
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    surrogate = METHODS[method]
    if surrogate == "intrinsic" and kernel is None:
        raise InputError("in_bo needs a kernel estimate")
    return bo.run(problem.values, surrogate, cfg, kernel=kernel, coords=problem.coords, fit_options=fit_options)


def run_experiment(
    problem: Problem,
    methods: Sequence[str] = ("in_bo", "tra_bo"),
    n_seeds: int = 20,
    n_iterations: int = 30,
    kernel: KernelEstimate | None = None,
    bm: BMConfig | None = None,
    cache_dir: str | Path | None = None,
    epsilon: float | None = None,
    epsilon_rel: float = 0.01,
    fit_options: dict[str, dict] | None = None,
    trace_dir: str | Path | None = None,
) -> ExperimentReport:
    """Run every method on seeds ``1..n_seeds`` with shared initial designs.

    The kernel is built once (or taken from ``kernel``) and shared by every
    in_bo run. A run that raises a package error is recorded with its error
    message instead of aborting the experiment. ``fit_options`` maps a method
    name to keyword arguments for its hyperparameter search.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise InputError(f"unknown method {m!r}; expected one of {sorted(METHODS)}")
    if n_seeds < 1:
        raise InputError("n_seeds must be positive")
    if "in_bo" in methods and kernel is None:
        kernel = problem_kernel(problem, bm, cache_dir)
    if trace_dir is not None:
        trace_dir = Path(trace_dir)
        trace_dir.mkdir(parents=True, exist_ok=True)
    opt = problem.true_optimum_index
    thr = problem.relaxed_threshold()
    report = ExperimentReport(problem.name, opt, thr)
    for seed in range(1, n_seeds + 1):
        cfg = bo.BOConfig(n_iterations, problem.n_init, seed, epsilon, epsilon_rel)
        init = tuple(int(i) for i in bo.initial_design(problem.n, problem.n_init, seed))
        for m in methods:
            try:
                trace = run_method(problem, m, cfg, kernel, (fit_options or {}).get(m))
            except InBOError as exc:
                log.warning("%s seed %d failed: %s", m, seed, exc)
                report.results.append(
                    SeedResult(m, seed, init, None, None, False, False, None, None, f"{exc.category}: {exc}")
                )
                continue
            if trace_dir is not None:
                trace.to_csv(trace_dir / f"{m}_seed{seed}.csv")
            report.results.append(
                SeedResult(
                    m,
                    seed,
                    tuple(trace.initial_indices),
                    trace.best_index,
                    trace.best_value,
                    trace.best_index == opt,
                    trace.best_value >= thr,
                    trace.evals_to(opt),
                    trace,
                )
            )
    return report
