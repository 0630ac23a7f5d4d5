"""Probability-of-improvement Bayesian optimisation over a finite grid."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.special import ndtr

from . import sparse_gp as gp
from .errors import ExhaustionError, InBOError, InputError
from .heat_kernel import KernelEstimate

Surrogate = Literal["intrinsic", "rbf"]


@dataclass(frozen=True)
class BOConfig:
    """Loop settings.

    ``epsilon=None`` uses ``epsilon_rel * (max y - min y)`` of the current
    observations, recomputed every iteration.
    """

    n_iterations: int = 30
    n_init: int = 3
    seed: int = 0
    epsilon: float | None = None
    epsilon_rel: float = 0.01

    def __post_init__(self):
        if self.n_init < 1:
            raise InputError("n_init must be at least 1")
        if self.n_iterations < 0:
            raise InputError("n_iterations must be nonnegative")
        if self.epsilon is not None and self.epsilon < 0:
            raise InputError("epsilon must be nonnegative")


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    grid_index: int
    y: float
    best_index: int
    best_value: float


@dataclass
class BOTrace:
    records: list[TraceRecord] = field(default_factory=list)
    hyperparameters: list = field(default_factory=list)
    n_clamped: int = 0

    @property
    def initial_indices(self) -> list[int]:
        return [r.grid_index for r in self.records if r.iteration == 0]

    @property
    def chosen_indices(self) -> list[int]:
        return [r.grid_index for r in self.records if r.iteration > 0]

    @property
    def best_index(self) -> int:
        return self.records[-1].best_index

    @property
    def best_value(self) -> float:
        return self.records[-1].best_value

    def evals_to(self, index: int) -> int | None:
        """Number of evaluations (initial design included) until ``index`` was observed."""
        for k, r in enumerate(self.records):
            if r.grid_index == index:
                return k + 1
        return None

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "grid_index", "y", "best_index", "best_value"])
        for r in self.records:
            w.writerow([r.iteration, r.grid_index, repr(r.y), r.best_index, repr(r.best_value)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def pi_scores(post: gp.Posterior, f_best: float, epsilon: float = 0.0) -> np.ndarray:
    """``Phi((mean - f_best - epsilon) / sd)``; zero-sd points score 1 or 0 by the sign of the gap."""
    gap = np.asarray(post.mean, dtype=float) - f_best - epsilon
    sd = np.sqrt(np.clip(np.asarray(post.variance, dtype=float), 0.0, None))
    out = (gap > 0).astype(float)
    pos = sd > 0
    out[pos] = ndtr(gap[pos] / sd[pos])
    return out


def select_next(scores, visited: Sequence[int] | set[int] = ()) -> int:
    """Highest-scoring unvisited index; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float)
    masked = scores.copy()
    masked[np.asarray(list(visited), dtype=int)] = -np.inf
    if np.all(masked == -np.inf):
        raise ExhaustionError("every grid point has been visited")
    return int(np.argmax(masked))


def initial_design(n: int, n_init: int, seed: int) -> np.ndarray:
    """``n_init`` distinct grid indices drawn uniformly; identical for every surrogate."""
    if n_init > n:
        raise InputError("n_init exceeds the grid size")
    return np.random.default_rng(seed).choice(n, size=n_init, replace=False)


def run(
    values,
    surrogate: Surrogate,
    cfg: BOConfig,
    kernel: KernelEstimate | None = None,
    coords=None,
    fit_options: dict | None = None,
) -> BOTrace:
    """Optimise ``values`` (the objective on the grid) with PI.

    ``kernel`` is required for the intrinsic surrogate, ``coords`` (one row
    per grid point) for the RBF surrogate. Hyperparameters are refitted at
    every iteration.
    """
    values = np.asarray(values, dtype=float)
    n = len(values)
    if cfg.n_init + cfg.n_iterations > n:
        raise InputError("n_init + n_iterations exceeds the grid size")
    if surrogate == "intrinsic":
        if kernel is None or kernel.n != n:
            raise InputError("the intrinsic surrogate needs a kernel over the same grid")
    elif surrogate == "rbf":
        if coords is None or len(coords) != n:
            raise InputError("the RBF surrogate needs one coordinate row per grid point")
        coords = np.asarray(coords, dtype=float)
    else:
        raise InputError(f"unknown surrogate {surrogate!r}")
    fit_options = fit_options or {}

    trace = BOTrace()
    idx: list[int] = []
    ys: list[float] = []

    def observe(i: int, it: int) -> None:
        idx.append(i)
        ys.append(float(values[i]))
        b = int(np.argmax(ys))
        trace.records.append(TraceRecord(it, i, ys[-1], idx[b], ys[b]))

    for i in initial_design(n, cfg.n_init, cfg.seed):
        observe(int(i), 0)

    for it in range(1, cfg.n_iterations + 1):
        D = gp.TrainingSet(np.array(idx), np.array(ys))
        try:
            if len(D) < 2:
                # a single point carries no scale information; every unvisited point ties
                nxt = select_next(np.zeros(n), idx)
                trace.hyperparameters.append(None)
                observe(nxt, it)
                continue
            if surrogate == "intrinsic":
                h = gp.fit(kernel, D, **fit_options)
                post = gp.predict(kernel, D, h)
            else:
                h = gp.fit_rbf(coords, D, **fit_options)
                post = gp.predict_rbf(coords, D, h)
        except InBOError as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        trace.hyperparameters.append(h)
        trace.n_clamped += post.n_clamped
        eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_rel * (max(ys) - min(ys))
        nxt = select_next(pi_scores(post, max(ys), eps), idx)
        observe(nxt, it)
    return trace
