"""Benchmark problems: the horseshoe, the bitten torus and file-ingested planar domains."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from ..bm_sim import BMConfig
from ..errors import DomainError, IngestionError, InputError, ParseError
from ..geometry import (
    TWO_PI,
    BittenTorus,
    ConstrainedPlane,
    ManifoldSpec,
    clipped_cell_volumes,
    contains,
    horseshoe,
    lattice,
    load_polygon_csv,
    write_polygon_csv,
)

__all__ = [
    "Problem",
    "PROBLEMS",
    "bitten_torus_problem",
    "default_bm_config",
    "farthest_point_indices",
    "get_problem",
    "load_domain",
    "synthetic_sea",
    "synthetic_sea_problem",
    "ushape_problem",
    "write_domain",
]

DATA = "data"
SEA_BOUNDARY = "sea_boundary.csv"
SEA_GRID = "sea_grid.csv"


def default_bm_config(seed: int = 0) -> BMConfig:
    """Path settings shared by the bundled problems.

    10^4 paths per inducing point, ``dt = 2e-3`` and 20 log-spaced snapshot
    times in ``[0.02, 4]``, which spans the cell scale up to the arm length.
    """
    dt = 2e-3
    times = np.unique(np.rint(np.geomspace(0.02, 4.0, 20) / dt)) * dt
    return BMConfig(n_paths=10_000, step_dt=dt, time_grid=tuple(float(t) for t in times), seed=seed)


@dataclass(frozen=True, eq=False)
class Problem:
    """A finite optimisation problem on a domain.

    Parameters
    ----------
    name : str
    spec : ManifoldSpec
    grid : ndarray, shape (n, 2)
        Chart coordinates of the candidate points.
    values : ndarray, shape (n,)
        Objective value at each grid point.
    inducing_indices : ndarray of int
        Grid points that carry path ensembles.
    spacing : (float, float)
        Chart spacing used to integrate cell volumes. For scattered grids
        this is only the resolution of the volume quadrature.
    n_init : int
        Initial design size used by the experiment runner.
    """

    name: str
    spec: ManifoldSpec
    grid: np.ndarray
    values: np.ndarray
    inducing_indices: np.ndarray
    spacing: tuple[float, float]
    n_init: int = 4
    bm: BMConfig = field(default_factory=default_bm_config)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        inducing = np.asarray(self.inducing_indices, dtype=int)
        if grid.ndim != 2 or grid.shape[1] != self.spec.dim:
            raise InputError("grid must have one chart coordinate row per point")
        if values.shape != (len(grid),):
            raise InputError("one value per grid point is required")
        if not np.all(np.isfinite(values)):
            raise InputError("objective values must be finite")
        if len(inducing) > len(grid) or len(np.unique(inducing)) != len(inducing):
            raise InputError("inducing indices must be distinct grid indices")
        if len(inducing) and (inducing.min() < 0 or inducing.max() >= len(grid)):
            raise InputError("inducing index out of range")
        bad = np.flatnonzero(~contains(self.spec, grid))
        if len(bad):
            raise DomainError(f"grid point {int(bad[0])} lies outside the domain")
        for name, arr in (("grid", grid), ("values", values), ("inducing_indices", inducing)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return len(self.grid)

    @property
    def true_optimum_index(self) -> int:
        """Index of the maximum value; the lowest index wins ties."""
        return int(np.argmax(self.values))

    @property
    def coords(self) -> np.ndarray:
        """Ambient coordinates, used by the Euclidean baseline."""
        return self.spec.embed(self.grid)

    def relaxed_threshold(self, fraction: float = 0.99) -> float:
        lo, hi = float(self.values.min()), float(self.values.max())
        return lo + fraction * (hi - lo)

    def volumes(self) -> np.ndarray:
        return clipped_cell_volumes(self.spec, self.grid, self.spacing)


# -------------------------------------------------------------------------
# helpers


def farthest_point_indices(points, m: int) -> np.ndarray:
    """``m`` well-spread rows of ``points`` by greedy farthest-point selection.

    The seed point (nearest the centroid) only anchors the sweep and is not
    itself returned.
    """
    pts = np.asarray(points, dtype=float)
    if not 0 < m <= len(pts):
        raise InputError(f"cannot pick {m} of {len(pts)} points")
    first = int(np.argmin(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)))
    d = ((pts - pts[first]) ** 2).sum(axis=1)
    chosen = []
    for _ in range(m):
        j = int(np.argmax(d))
        chosen.append(j)
        d = np.minimum(d, ((pts - pts[j]) ** 2).sum(axis=1))
    return np.array(chosen)


def _rescale(f: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * (f - f.min()) / (f.max() - f.min())


# -------------------------------------------------------------------------
# horseshoe

USHAPE_SPACING = 0.1835


def ushape_problem() -> Problem:
    """Horseshoe of inner radius 0.5, outer radius 1.5 and arm length 3.

    The objective is arc length along the centre curve (radius 1), from the
    lower-arm tip to the upper-arm tip, plus the squared distance to that
    curve; it is rescaled to ``[-6.19, 6.19]``. The lattice offset puts 285
    points inside and makes the maximum unique at the upper tip's outer corner.
    """
    spec = horseshoe()
    h = USHAPE_SPACING
    grid = lattice(spec, (h, h), (0.5 * h, 0.0))
    x, y = grid.T
    psi = np.mod(np.arctan2(y, x), TWO_PI)
    arm = 3.0
    along = np.where(
        x >= 0,
        np.where(y < 0, arm - x, arm + math.pi + x),
        arm + (1.5 * math.pi - psi),
    )
    across = np.where(x >= 0, np.where(y < 0, -1.0 - y, y - 1.0), np.hypot(x, y) - 1.0)
    values = _rescale(along + across**2, -6.19, 6.19)
    inducing = farthest_point_indices(grid, 20)
    return Problem("ushape", spec, grid, values, inducing, (h, h), n_init=3)


# -------------------------------------------------------------------------
# bitten torus

TORUS_N_THETA = 24
TORUS_N_PHI = 25
TORUS_BITE = (-0.3, 0.3)
TORUS_TWIST = 1.0
TORUS_KAPPA = 4.0


def bitten_torus_problem() -> Problem:
    """Torus with R = 2, r = 1 and the sector ``|phi| < 0.3`` removed.

    The objective increases with ``phi`` from one cut face to the other:
    ``u + c (u - 1/2) w(theta)`` with ``u`` the normalised ``phi`` and
    ``w = exp(kappa (cos(theta - pi) - 1))``. It is monotone in ``phi`` on
    every meridian and puts both extremes on the inner equator, where the
    two faces are less than one unit apart in space. The peaked ``w``
    separates the maximum from its neighbours by about 3% of the range.
    Values are rescaled to ``[0.57, 5.50]``.
    """
    spec = BittenTorus(R=2.0, r=1.0, bite=TORUS_BITE, name="torus")
    lo, hi = spec.phi_range
    h_theta = TWO_PI / TORUS_N_THETA
    h_phi = (hi - lo) / TORUS_N_PHI
    theta = h_theta * np.arange(TORUS_N_THETA)
    phi = lo + h_phi * (np.arange(TORUS_N_PHI) + 0.5)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    grid = np.column_stack([tt.ravel(), pp.ravel()])
    u = (grid[:, 1] - lo) / (hi - lo)
    w = np.exp(TORUS_KAPPA * (np.cos(grid[:, 0] - math.pi) - 1.0))
    f = u + TORUS_TWIST * (u - 0.5) * w
    values = _rescale(f, 0.57, 5.50)
    inducing = farthest_point_indices(spec.embed(grid), 19)
    return Problem("torus", spec, grid, values, inducing, (h_theta, h_phi), n_init=4)


# -------------------------------------------------------------------------
# file-ingested planar domains


def _read_grid_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    rows, vals, flags, lines = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "y", "value", "is_inducing"} - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path}:1: missing columns {sorted(missing)}")
        for row in reader:
            try:
                pt = (float(row["x"]), float(row["y"]))
                v = float(row["value"])
                flag = int(row["is_inducing"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{reader.line_num}: {exc}") from None
            if flag not in (0, 1):
                raise ParseError(f"{path}:{reader.line_num}: is_inducing must be 0 or 1")
            if not all(map(math.isfinite, (*pt, v))):
                raise ParseError(f"{path}:{reader.line_num}: non-finite entry")
            rows.append(pt)
            vals.append(v)
            flags.append(flag)
            lines.append(reader.line_num)
    if len(rows) < 2:
        raise ParseError(f"{path}: at least two grid rows are required")
    return np.array(rows), np.array(vals), np.array(flags, dtype=bool), lines


def load_domain(
    boundary_csv: str | Path,
    grid_csv: str | Path,
    name: str | None = None,
    n_init: int = 4,
) -> Problem:
    """Planar problem from a boundary file and a grid file.

    The grid file has columns ``x, y, value, is_inducing``. Every grid point
    must lie in the domain; the first that does not is reported by row.
    """
    boundary_csv, grid_csv = Path(boundary_csv), Path(grid_csv)
    spec = load_polygon_csv(boundary_csv, name=name)
    grid, values, flags, lines = _read_grid_csv(grid_csv)
    inside = contains(spec, grid)
    if not inside.all():
        k = int(np.flatnonzero(~inside)[0])
        raise IngestionError(
            f"{grid_csv}:{lines[k]}: grid point ({grid[k, 0]}, {grid[k, 1]}) lies outside the domain"
        )
    if not flags.any():
        raise IngestionError(f"{grid_csv}: no inducing points flagged")
    dist = np.sqrt(((grid[:, None] - grid[None]) ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    h = float(np.median(dist.min(axis=1)))
    if h <= 0:
        raise IngestionError(f"{grid_csv}: duplicate grid points")
    return Problem(
        name or grid_csv.stem,
        spec,
        grid,
        values,
        np.flatnonzero(flags),
        (h, h),
        n_init=n_init,
    )


def write_domain(problem: Problem, boundary_csv: str | Path, grid_csv: str | Path) -> None:
    """Inverse of :func:`load_domain` for planar problems."""
    if not isinstance(problem.spec, ConstrainedPlane):
        raise InputError("only planar problems can be written as domain files")
    write_polygon_csv(problem.spec, boundary_csv)
    flags = np.zeros(problem.n, dtype=int)
    flags[problem.inducing_indices] = 1
    with Path(grid_csv).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "value", "is_inducing"])
        for (x, y), v, f in zip(problem.grid, problem.values, flags):
            w.writerow([repr(float(x)), repr(float(y)), repr(float(v)), int(f)])


# -------------------------------------------------------------------------
# synthetic sea

# outer shoreline, counterclockwise
SEA_OUTER = (
    (0.0, 0.3), (0.4, 0.0), (2.35, 0.0), (2.35, 2.7), (2.65, 2.7), (2.65, 0.0),
    (4.6, 0.0), (5.0, 0.4), (5.0, 2.9), (4.5, 3.4), (3.2, 3.5), (2.5, 3.3),
    (1.6, 3.5), (0.5, 3.3), (0.0, 2.8),
)
SEA_HIGH = (2.05, 0.35)
SEA_LOW = (2.95, 0.35)
SEA_NOISE_SD = 0.03
SEA_SEED = 2024


def _geodesic_distances(spec: ConstrainedPlane, sources, targets, h: float = 0.025) -> np.ndarray:
    """Shortest in-domain path lengths on an 8-connected lattice of spacing ``h``.

    Returns an array of shape ``(len(sources), len(targets))``.
    """
    xmin, ymin, xmax, ymax = spec.bounds()
    xs = np.arange(xmin + 0.5 * h, xmax, h)
    ys = np.arange(ymin + 0.5 * h, ymax, h)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    ok = spec.contains(pts)
    node = np.full(nx * ny, -1)
    node[ok] = np.arange(ok.sum())
    ij = np.argwhere(ok.reshape(nx, ny))
    rows, cols, w = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        a = ij
        b = ij + (di, dj)
        keep = (b[:, 0] < nx) & (b[:, 1] >= 0) & (b[:, 1] < ny)
        a, b = a[keep], b[keep]
        na = node[a[:, 0] * ny + a[:, 1]]
        nb = node[b[:, 0] * ny + b[:, 1]]
        keep = nb >= 0
        na, nb = na[keep], nb[keep]
        # reject edges whose midpoint leaves the domain (thin barriers)
        mid = 0.5 * (pts[ok][na] + pts[ok][nb])
        keep = spec.contains(mid)
        rows.append(na[keep])
        cols.append(nb[keep])
        w.append(np.full(keep.sum(), h * math.hypot(di, dj)))
    rows, cols, w = map(np.concatenate, (rows, cols, w))
    n = int(ok.sum())
    G = coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    lat = pts[ok]

    def nearest(q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        return np.argmin(((lat[None] - q[:, None]) ** 2).sum(-1), axis=1)

    dist = dijkstra(G, directed=False, indices=nearest(sources))
    # each target inherits its nearest lattice node plus the straight offset
    tn = nearest(targets)
    off = np.sqrt(((lat[tn] - np.asarray(targets)) ** 2).sum(-1))
    return dist[:, tn] + off


def synthetic_sea(n_grid: int = 485, n_inducing: int = 42) -> Problem:
    """Two basins joined by a narrow northern channel, split by a land barrier.

    Grid points are a farthest-point subsample of a fine interior lattice.
    The field is a bump around a point just west of the barrier minus a dip
    just east of it, both in shortest-path distance, plus seeded Gaussian
    noise. Across the barrier the values jump; around it they vary smoothly.
    """
    spec = ConstrainedPlane(rings=(np.array(SEA_OUTER),), name="sea")
    fine = lattice(spec, (0.05, 0.05), (0.025, 0.025))
    grid = fine[farthest_point_indices(fine, n_grid)]
    grid = grid[np.lexsort((grid[:, 0], grid[:, 1]))]
    d = _geodesic_distances(spec, [SEA_HIGH, SEA_LOW], grid)
    f = 1.0 + np.exp(-0.5 * (d[0] / 1.2) ** 2) - np.exp(-0.5 * (d[1] / 1.2) ** 2)
    f = f + np.random.default_rng(SEA_SEED).normal(0.0, SEA_NOISE_SD, len(grid))
    values = np.round(_rescale(f, 0.0, 10.0), 6)
    inducing = np.sort(farthest_point_indices(grid, n_inducing))
    h = math.sqrt(spec.polygon.area / n_grid)
    return Problem("sea", spec, np.round(grid, 6), values, inducing, (h, h), n_init=4)


def synthetic_sea_problem() -> Problem:
    """The bundled synthetic sea, read back through :func:`load_domain`."""
    base = resources.files("inbo.bench") / DATA
    with resources.as_file(base / SEA_BOUNDARY) as b, resources.as_file(base / SEA_GRID) as g:
        return load_domain(b, g, name="sea")


PROBLEMS = {
    "ushape": ushape_problem,
    "torus": bitten_torus_problem,
    "sea": synthetic_sea_problem,
}


def get_problem(name: str) -> Problem:
    """A bundled problem by name, or ``"boundary.csv,grid.csv"`` for files."""
    if name in PROBLEMS:
        return PROBLEMS[name]()
    if "," in name:
        b, g = (s.strip() for s in name.split(",", 1))
        return load_domain(b, g)
    raise InputError(f"unknown problem {name!r}; expected one of {sorted(PROBLEMS)} or 'boundary.csv,grid.csv'")
