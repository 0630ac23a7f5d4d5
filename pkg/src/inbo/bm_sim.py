"""Euler-Maruyama simulation of Brownian motion in a chart, reflected at the boundary.

Reflection follows the reject-and-resample scheme: a step whose proposal
leaves the domain is redrawn, with time held still, until it lands inside.

Random streams are derived from ``(seed, start_index, block)`` through
:class:`numpy.random.SeedSequence`, where paths are simulated in fixed
blocks of :data:`BLOCK_SIZE`. Results therefore do not depend on the order
in which starts or blocks are processed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CacheError, DomainError, InputError, ReflectionError, TimeLookupError
from .geometry import (
    ConstrainedPlane,
    ManifoldSpec,
    contains,
    diagonal_sde_coefficients,
    sde_coefficients_batch,
)

BLOCK_SIZE = 4096
MAX_STEPS = 10**7


def _is_flat(spec: ManifoldSpec) -> bool:
    return isinstance(spec, ConstrainedPlane)


@dataclass(frozen=True)
class BMConfig:
    n_paths: int = 1000
    step_dt: float = 1e-3
    time_grid: tuple[float, ...] = (1.0,)
    seed: int = 0
    max_reflect_attempts: int = 10_000

    def __post_init__(self):
        if self.n_paths < 1:
            raise InputError("n_paths must be positive")
        if not self.step_dt > 0:
            raise InputError("step_dt must be positive")
        if self.max_reflect_attempts < 1:
            raise InputError("max_reflect_attempts must be positive")
        grid = tuple(float(t) for t in self.time_grid)
        if not grid:
            raise InputError("time_grid must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 0:
            raise InputError("time_grid must be nonnegative and strictly increasing")
        steps = self.step_counts(grid)
        if steps[-1] > MAX_STEPS:
            raise InputError(f"{steps[-1]} steps exceed the limit of {MAX_STEPS}")
        object.__setattr__(self, "time_grid", grid)

    def step_counts(self, grid: Sequence[float] | None = None) -> np.ndarray:
        grid = self.time_grid if grid is None else grid
        ratio = np.asarray(grid) / self.step_dt
        steps = np.rint(ratio).astype(np.int64)
        if np.any(np.abs(ratio - steps) > 1e-6 * np.maximum(1.0, ratio)):
            raise InputError("every snapshot time must be an integer multiple of step_dt")
        return steps

    def to_dict(self) -> dict:
        d = asdict(self)
        d["time_grid"] = list(self.time_grid)
        return d


def default_time_grid(
    spec: ManifoldSpec,
    step_dt: float = 1e-3,
    n: int = 30,
    span: tuple[float, float] = (1e-2, 4.0),
) -> tuple[float, ...]:
    """Log-spaced snapshot times over ``span * diameter**2``, snapped to ``step_dt``."""
    diam2 = spec.chart_diameter() ** 2
    raw = np.geomspace(span[0] * diam2, span[1] * diam2, n)
    snapped = np.maximum(np.rint(raw / step_dt), 1) * step_dt
    return tuple(float(t) for t in np.unique(snapped))


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Positions of ``N`` paths from one start, snapshotted at ``config.time_grid``.

    ``snapshots`` has shape ``(K, N, d)``.
    """

    spec: ManifoldSpec
    start: np.ndarray
    snapshots: np.ndarray
    config: BMConfig
    start_index: int = 0
    n_resamples: int = field(default=0, compare=False)

    @property
    def time_grid(self) -> tuple[float, ...]:
        return self.config.time_grid

    @property
    def n_paths(self) -> int:
        return self.snapshots.shape[1]

    def time_index(self, t: float) -> int:
        grid = np.asarray(self.time_grid)
        hits = np.flatnonzero(np.isclose(grid, t, rtol=1e-12, atol=1e-15))
        if not len(hits):
            raise TimeLookupError(f"t={t} is not in the ensemble time grid")
        return int(hits[0])


def snapshot(ensemble: PathEnsemble, t: float) -> np.ndarray:
    """Positions of all paths at diffusion time ``t`` (must be on the grid)."""
    return ensemble.snapshots[ensemble.time_index(t)]


def _block_rng(seed: int, start_index: int, block: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(int(start_index), int(block)))
    return np.random.default_rng(ss)


def _simulate_block(
    spec: ManifoldSpec,
    start: np.ndarray,
    n: int,
    cfg: BMConfig,
    rng: np.random.Generator,
    path_offset: int,
) -> tuple[np.ndarray, int]:
    steps = cfg.step_counts()
    d = len(start)
    out = np.empty((len(steps), n, d))
    x = np.tile(start, (n, 1))
    sqdt = math.sqrt(cfg.step_dt)
    flat = _is_flat(spec)
    bounded = not (flat and spec.polygon is None)
    resamples = 0
    k = 0
    for step in range(int(steps[-1]) + 1):
        while k < len(steps) and steps[k] == step:
            out[k] = x
            k += 1
        if k == len(steps):
            break
        if flat:
            drift = 0.0
            noise = rng.standard_normal((n, d)) * sqdt
            prop = x + noise
        elif spec.diagonal_metric:
            drift, diff = diagonal_sde_coefficients(spec, x)
            drift = drift * cfg.step_dt
            diff = diff * sqdt
            prop = x + drift + diff * rng.standard_normal((n, d))
        else:
            drift, diff = sde_coefficients_batch(spec, x)
            drift = drift * cfg.step_dt
            diff = diff * sqdt
            prop = x + drift + np.einsum("nij,nj->ni", diff, rng.standard_normal((n, d)))
        if bounded:
            bad = np.flatnonzero(~spec.admissible(prop))
            attempts = 0
            while len(bad):
                attempts += 1
                if attempts > cfg.max_reflect_attempts:
                    raise ReflectionError(path_offset + int(bad[0]), step, cfg.max_reflect_attempts)
                resamples += len(bad)
                xi = rng.standard_normal((len(bad), d))
                if flat:
                    prop[bad] = x[bad] + xi * sqdt
                elif spec.diagonal_metric:
                    prop[bad] = x[bad] + drift[bad] + diff[bad] * xi
                else:
                    prop[bad] = x[bad] + drift[bad] + np.einsum("nij,nj->ni", diff[bad], xi)
                still = ~spec.admissible(prop[bad])
                bad = bad[still]
        x = spec.reduce(prop)
    return out, resamples


def simulate_ensemble(
    spec: ManifoldSpec,
    start,
    cfg: BMConfig,
    start_index: int = 0,
) -> PathEnsemble:
    """Simulate ``cfg.n_paths`` reflected Brownian paths from ``start``.

    Each step is ``x + drift(x) dt + diffusion(x) sqrt(dt) xi``; an exiting
    proposal redraws ``xi`` without advancing time, at most
    ``cfg.max_reflect_attempts`` times before :class:`ReflectionError`.
    """
    start = np.asarray(start, dtype=float)
    if start.shape != (spec.dim,):
        raise DomainError(f"start must have shape ({spec.dim},)")
    if not contains(spec, start):
        raise DomainError(f"start point {start} lies outside the domain")
    start = spec.reduce(start[None])[0]
    blocks = []
    resamples = 0
    for b, lo in enumerate(range(0, cfg.n_paths, BLOCK_SIZE)):
        n = min(BLOCK_SIZE, cfg.n_paths - lo)
        snaps, r = _simulate_block(spec, start, n, cfg, _block_rng(cfg.seed, start_index, b), lo)
        blocks.append(snaps)
        resamples += r
    snaps = np.concatenate(blocks, axis=1)
    snaps.setflags(write=False)
    return PathEnsemble(spec, start, snaps, cfg, start_index, resamples)


# -------------------------------------------------------------------------
# cache


def cache_key(spec: ManifoldSpec, start, cfg: BMConfig, start_index: int = 0) -> str:
    payload = {
        "spec": spec.describe(),
        "start": [float(v) for v in np.asarray(start, dtype=float)],
        "start_index": int(start_index),
        "config": cfg.to_dict(),
        "block_size": BLOCK_SIZE,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def save_ensemble(ensemble: PathEnsemble, path: str | Path) -> None:
    key = cache_key(ensemble.spec, ensemble.start, ensemble.config, ensemble.start_index)
    with Path(path).open("wb") as fh:
        np.savez_compressed(fh, key=np.array(key), snapshots=ensemble.snapshots, n_resamples=ensemble.n_resamples)


def load_ensemble(path: str | Path, spec: ManifoldSpec, start, cfg: BMConfig, start_index: int = 0) -> PathEnsemble:
    """Load a cached ensemble, refusing files whose content hash does not match."""
    expected = cache_key(spec, start, cfg, start_index)
    with np.load(path) as data:
        found = str(data["key"])
        if found != expected:
            raise CacheError(f"{path}: cache key {found[:12]} does not match expected {expected[:12]}")
        snaps = data["snapshots"]
        resamples = int(data["n_resamples"])
    snaps.setflags(write=False)
    start = spec.reduce(np.asarray(start, dtype=float)[None])[0]
    return PathEnsemble(spec, start, snaps, cfg, start_index, resamples)


def cached_ensemble(
    spec: ManifoldSpec,
    start,
    cfg: BMConfig,
    start_index: int,
    cache_dir: str | Path | None,
) -> PathEnsemble:
    if cache_dir is None:
        return simulate_ensemble(spec, start, cfg, start_index)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"{cache_key(spec, start, cfg, start_index)}.npz"
    if path.exists():
        return load_ensemble(path, spec, start, cfg, start_index)
    ens = simulate_ensemble(spec, start, cfg, start_index)
    tmp = path.with_suffix(".tmp")
    save_ensemble(ens, tmp)
    tmp.replace(path)
    return ens
