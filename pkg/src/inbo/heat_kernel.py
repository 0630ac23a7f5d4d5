"""Heat-kernel estimates from Brownian path ensembles, plus analytic reference kernels.

The transition density from ``s0`` at diffusion time ``t`` is estimated on a
grid by counting paths in each grid cell: ``(k_i / N) / V(A_i)``, with cells
the nearest-grid-point partition in the chart.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bm_sim import PathEnsemble, snapshot
from .errors import DomainError, InputError
from .geometry import ChartIndex

__all__ = [
    "KernelEstimate",
    "build_kernel",
    "estimate_density_row",
    "euclidean_heat_kernel",
    "rbf_kernel",
    "symmetrize_psd",
]


@dataclass(frozen=True, eq=False)
class KernelEstimate:
    """Estimated heat kernel between inducing points and every grid point.

    ``K_zz[k]`` is the symmetrised, PSD-projected inducing block at
    ``t_grid[k]``; ``K_zr[k]`` holds the raw density rows, one per inducing point.
    """

    t_grid: tuple[float, ...]
    K_zz: np.ndarray  # (T, m, m)
    K_zr: np.ndarray  # (T, m, n)
    inducing_indices: np.ndarray
    n: int
    # per-t factorisations, filled lazily by sparse_gp
    cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def m(self) -> int:
        return len(self.inducing_indices)

    def t_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.t_grid, t, rtol=1e-12, atol=1e-15))
        if not len(hits):
            raise InputError(f"t={t} is not in the kernel's t grid")
        return int(hits[0])

    def to_csv(self, path: str | Path) -> None:
        """Row-major dump: one row per (t, block, inducing point)."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "block", "inducing_index", *range(self.n)])
            for k, t in enumerate(self.t_grid):
                for i, z in enumerate(self.inducing_indices):
                    w.writerow([repr(t), "zr", int(z), *map(repr, self.K_zr[k, i].tolist())])
                for i, z in enumerate(self.inducing_indices):
                    w.writerow([repr(t), "zz", int(z), *map(repr, self.K_zz[k, i].tolist())])


def estimate_density_row(
    ensemble: PathEnsemble,
    grid,
    volumes,
    t: float,
    index: ChartIndex | None = None,
) -> np.ndarray:
    """Transition density from ``ensemble.start`` to each grid cell at time ``t``."""
    if ensemble.n_paths == 0:
        raise InputError("empty ensemble")
    grid = np.asarray(grid, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    if len(volumes) != len(grid):
        raise InputError("one volume per grid point is required")
    if index is None:
        index = ChartIndex(ensemble.spec, grid)
    pos = snapshot(ensemble, t)
    counts = np.bincount(index.query(pos), minlength=len(grid))
    return counts / ensemble.n_paths / volumes


def symmetrize_psd(A) -> np.ndarray:
    """``(A + A^T) / 2`` with negative eigenvalues clipped to zero."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("symmetrize_psd needs a square matrix")
    B = 0.5 * (A + A.T)
    w, v = np.linalg.eigh(B)
    out = (v * np.clip(w, 0.0, None)) @ v.T
    # exact symmetry, not just up to rounding
    return 0.5 * (out + out.T)


def build_kernel(
    ensembles: Sequence[PathEnsemble],
    grid,
    volumes,
    inducing_indices: Sequence[int],
    t_grid: Sequence[float] | None = None,
) -> KernelEstimate:
    """Assemble per-``t`` kernel blocks from one ensemble per inducing point."""
    if not ensembles:
        raise InputError("at least one ensemble is required")
    if len(ensembles) != len(inducing_indices):
        raise InputError("one ensemble per inducing point is required")
    t_grid = tuple(ensembles[0].time_grid if t_grid is None else t_grid)
    for e in ensembles:
        if len(e.time_grid) != len(ensembles[0].time_grid) or not np.allclose(e.time_grid, ensembles[0].time_grid):
            raise InputError("ensembles were simulated on different time grids")
    grid = np.asarray(grid, dtype=float)
    inducing = np.asarray(inducing_indices, dtype=int)
    index = ChartIndex(ensembles[0].spec, grid)
    n, m = len(grid), len(inducing)
    K_zr = np.empty((len(t_grid), m, n))
    K_zz = np.empty((len(t_grid), m, m))
    for k, t in enumerate(t_grid):
        for i, ens in enumerate(ensembles):
            K_zr[k, i] = estimate_density_row(ens, grid, volumes, t, index)
        K_zz[k] = symmetrize_psd(K_zr[k][:, inducing])
    return KernelEstimate(tuple(float(t) for t in t_grid), K_zz, K_zr, inducing, n)


def euclidean_heat_kernel(s0, s, t: float):
    """Gaussian transition density of standard Brownian motion in R^d."""
    if not t > 0:
        raise DomainError("diffusion time must be positive")
    s0 = np.asarray(s0, dtype=float)
    s = np.asarray(s, dtype=float)
    d = s.shape[-1] if s.ndim else 1
    sq = np.sum(np.atleast_1d(s0 - s) ** 2, axis=-1) if s.ndim else (s0 - s) ** 2
    out = np.exp(-sq / (2 * t)) / (2 * math.pi * t) ** (d / 2)
    return float(out) if np.ndim(out) == 0 else out


def rbf_kernel(x0, x, l: float, sigma_r2: float = 1.0):
    """Squared-exponential kernel ``sigma_r2 * exp(-|x0 - x|^2 / (2 l^2))``.

    Broadcasts over leading axes; pass ``x0[:, None]`` and ``x[None]`` for a Gram matrix.
    """
    if not l > 0:
        raise DomainError("length-scale must be positive")
    if not sigma_r2 > 0:
        raise DomainError("kernel magnitude must be positive")
    x0 = np.asarray(x0, dtype=float)
    x = np.asarray(x, dtype=float)
    sq = np.sum(np.atleast_1d(x0 - x) ** 2, axis=-1) if x.ndim else (x0 - x) ** 2
    out = sigma_r2 * np.exp(-sq / (2 * l * l))
    return float(out) if np.ndim(out) == 0 else out
