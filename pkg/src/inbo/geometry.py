"""Domains, charts and Riemannian quantities.

Two manifold kinds are supported, each with a single global chart:

* :class:`ConstrainedPlane` -- a planar region bounded by a polygon (outer
  ring plus optional holes), or the whole plane when no boundary is given.
  The chart is the identity and the metric is flat.
* :class:`BittenTorus` -- the torus ``X(theta, phi)`` with tube radius ``r``
  and centre distance ``R`` from which a sector of ``phi`` has been removed.
  ``theta`` wraps modulo 2*pi; the removed sector is a hard boundary.

Points are plain numpy arrays in chart coordinates. All functions accept a
single point of shape ``(d,)`` or a batch of shape ``(n, d)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .errors import DomainError, GridError, ParseError, SingularityError

TWO_PI = 2.0 * math.pi
# points this close to the boundary are interior
BOUNDARY_TOL = 1e-12
DET_MIN = 1e-14


def _as_batch(x, d: int = 2) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != d:
        raise DomainError(f"expected {d}-dimensional chart coordinates, got shape {np.shape(x)}")
    return arr, single


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError("chart coordinates must be finite")


@dataclass(frozen=True, eq=False)
class ConstrainedPlane:
    """Planar domain bounded by polygon rings.

    ``rings[0]`` is the outer boundary, further rings are holes. With
    ``rings=None`` the domain is the unbounded plane.
    """

    rings: tuple[np.ndarray, ...] | None = None
    name: str = "plane"
    polygon: shapely.Polygon | None = field(init=False, repr=False, default=None)

    kind = "ConstrainedPlane"
    dim = 2
    ambient_dim = 2
    diagonal_metric = True

    def __post_init__(self):
        if self.rings is None:
            return
        rings = tuple(np.asarray(r, dtype=float) for r in self.rings)
        if not rings:
            raise DomainError("at least an outer ring is required")
        for i, ring in enumerate(rings):
            if ring.ndim != 2 or ring.shape[1] != 2 or len(ring) < 3:
                raise DomainError(f"ring {i} needs at least 3 (x, y) vertices")
            if not shapely.LinearRing(ring).is_simple:
                raise DomainError(f"ring {i} is self-intersecting")
        poly = shapely.Polygon(rings[0], holes=[r for r in rings[1:]])
        if not poly.is_valid:
            raise DomainError(f"invalid polygon: {shapely.is_valid_reason(poly)}")
        # canonical orientation: outer counterclockwise, holes clockwise
        poly = shapely.orient_polygons(poly) if hasattr(shapely, "orient_polygons") else shapely.geometry.polygon.orient(poly)
        shapely.prepare(poly)
        object.__setattr__(self, "rings", rings)
        object.__setattr__(self, "polygon", poly)

    # chart ------------------------------------------------------------
    def reduce(self, x: np.ndarray) -> np.ndarray:
        return x

    def embed(self, x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=float)

    def metric(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.eye(2), (len(x), 2, 2)).copy()

    def metric_derivatives(self, x: np.ndarray) -> np.ndarray:
        """``out[n, j] = dg/dx_j`` at point n."""
        return np.zeros((len(x), 2, 2, 2))

    # domain -----------------------------------------------------------
    def contains(self, x: np.ndarray) -> np.ndarray:
        if self.polygon is None:
            return np.ones(len(x), dtype=bool)
        inside = shapely.contains_xy(self.polygon, x[:, 0], x[:, 1])
        if not inside.all():
            out = np.flatnonzero(~inside)
            dist = shapely.distance(self.polygon.boundary, shapely.points(x[out]))
            inside[out] = dist <= BOUNDARY_TOL
        return inside

    # proposals from an interior point: no wrapping in the plane
    admissible = contains

    def bounds(self) -> tuple[float, float, float, float]:
        if self.polygon is None:
            raise DomainError("the unbounded plane has no bounds")
        return self.polygon.bounds

    def chart_bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        xmin, ymin, xmax, ymax = self.bounds()
        return (xmin, xmax), (ymin, ymax)

    def chart_diameter(self) -> float:
        xmin, ymin, xmax, ymax = self.bounds()
        return math.hypot(xmax - xmin, ymax - ymin)

    def tree_coords(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        return x, None

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "rings": None if self.rings is None else [r.tolist() for r in self.rings],
        }


@dataclass(frozen=True, eq=False)
class BittenTorus:
    """Torus ``((R + r cos t) cos p, (R + r cos t) sin p, r sin t)`` minus ``p in bite``.

    The admissible ``phi`` values form the arc ``[bite[1], bite[0] + 2*pi]``;
    canonical coordinates keep ``theta`` in ``[0, 2*pi)`` and ``phi`` in that
    arc. A zero-length bite gives the full, doubly periodic torus.
    """

    R: float = 2.0
    r: float = 1.0
    bite: tuple[float, float] = (0.0, 0.0)
    name: str = "torus"

    kind = "BittenTorus"
    dim = 2
    ambient_dim = 3
    diagonal_metric = True

    def __post_init__(self):
        if not (self.R > self.r > 0):
            raise DomainError(f"need R > r > 0, got R={self.R}, r={self.r}")
        lo, hi = (float(v) for v in self.bite)
        if not (0.0 <= hi - lo < TWO_PI):
            raise DomainError(f"bite length must lie in [0, 2*pi), got {hi - lo}")
        object.__setattr__(self, "bite", (lo, hi))

    @property
    def bite_length(self) -> float:
        return self.bite[1] - self.bite[0]

    @property
    def phi_range(self) -> tuple[float, float]:
        """Admissible arc of ``phi`` in canonical coordinates."""
        return self.bite[1], self.bite[0] + TWO_PI

    @property
    def periodic_phi(self) -> bool:
        return self.bite_length == 0.0

    def reduce(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        out[..., 0] = np.mod(out[..., 0], TWO_PI)
        lo = self.bite[1]
        out[..., 1] = lo + np.mod(out[..., 1] - lo, TWO_PI)
        if not self.periodic_phi:
            # points a hair below the arc start wrapped to the far end
            hi = self.phi_range[1]
            near_start = out[..., 1] >= lo + TWO_PI - BOUNDARY_TOL
            out[..., 1] = np.where(near_start, out[..., 1] - TWO_PI, out[..., 1])
            out[..., 1] = np.where(
                (out[..., 1] > hi) & (out[..., 1] <= hi + BOUNDARY_TOL), hi, out[..., 1]
            )
        return out

    def embed(self, x: np.ndarray) -> np.ndarray:
        theta, phi = x[..., 0], x[..., 1]
        rad = self.R + self.r * np.cos(theta)
        return np.stack([rad * np.cos(phi), rad * np.sin(phi), self.r * np.sin(theta)], axis=-1)

    def metric(self, x: np.ndarray) -> np.ndarray:
        g = np.zeros((len(x), 2, 2))
        g[:, 0, 0] = self.r**2
        g[:, 1, 1] = (self.R + self.r * np.cos(x[:, 0])) ** 2
        return g

    def metric_derivatives(self, x: np.ndarray) -> np.ndarray:
        theta = x[:, 0]
        dg = np.zeros((len(x), 2, 2, 2))
        dg[:, 0, 1, 1] = -2.0 * (self.R + self.r * np.cos(theta)) * self.r * np.sin(theta)
        return dg

    def contains(self, x: np.ndarray) -> np.ndarray:
        if self.periodic_phi:
            return np.ones(len(x), dtype=bool)
        lo, hi = self.phi_range
        phi = lo + np.mod(x[:, 1] - lo, TWO_PI)
        return (phi <= hi + BOUNDARY_TOL) | (phi >= lo + TWO_PI - BOUNDARY_TOL)

    def admissible(self, x: np.ndarray) -> np.ndarray:
        """Membership for a step proposed from a canonical point.

        ``phi`` is not wrapped, so a step can never cross the removed sector.
        """
        if self.periodic_phi:
            return np.ones(len(x), dtype=bool)
        lo, hi = self.phi_range
        return (x[:, 1] >= lo - BOUNDARY_TOL) & (x[:, 1] <= hi + BOUNDARY_TOL)

    def chart_bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (0.0, TWO_PI), self.phi_range

    def chart_diameter(self) -> float:
        lo, hi = self.phi_range
        return math.hypot(TWO_PI, hi - lo if not self.periodic_phi else TWO_PI)

    def tree_coords(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        red = self.reduce(x)
        red[:, 1] -= self.bite[1]
        if self.periodic_phi:
            box = np.array([TWO_PI, TWO_PI])
        else:
            # twice the chart width: wrapped distances always exceed direct ones
            box = np.array([TWO_PI, 2.0 * TWO_PI])
            red[:, 1] = np.mod(red[:, 1], box[1])
        red[:, 0] = np.mod(red[:, 0], TWO_PI)
        return red, box

    def describe(self) -> dict:
        return {"kind": self.kind, "R": self.R, "r": self.r, "bite": list(self.bite)}


ManifoldSpec = ConstrainedPlane | BittenTorus


@dataclass(frozen=True)
class MetricTensor:
    g: np.ndarray
    det_g: float
    inv_g: np.ndarray


# -------------------------------------------------------------------------
# operations


def embed(spec: ManifoldSpec, x) -> np.ndarray:
    """Map chart coordinates to ambient coordinates."""
    xb, single = _as_batch(x, spec.dim)
    _check_finite(xb)
    out = spec.embed(xb)
    return out[0] if single else out


def metric_tensor(spec: ManifoldSpec, x) -> MetricTensor:
    xb, single = _as_batch(x, spec.dim)
    if not single:
        raise DomainError("metric_tensor takes a single point; use metric_arrays for batches")
    _check_finite(xb)
    g, det, inv = metric_arrays(spec, xb)
    return MetricTensor(g=g[0], det_g=float(det[0]), inv_g=inv[0])


def metric_arrays(spec: ManifoldSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched ``(g, det g, g^-1)``."""
    g = spec.metric(x)
    det = np.linalg.det(g)
    if np.any(det <= DET_MIN):
        bad = int(np.flatnonzero(det <= DET_MIN)[0])
        raise SingularityError(f"degenerate metric at {x[bad]}: det g = {det[bad]:.3g}")
    return g, det, np.linalg.inv(g)


def pullback_metric(spec: ManifoldSpec, x, h: float = 1e-5) -> np.ndarray:
    """Metric ``J^T J`` from a central-difference Jacobian of :func:`embed`."""
    xb, single = _as_batch(x, spec.dim)
    cols = []
    for j in range(spec.dim):
        step = np.zeros(spec.dim)
        step[j] = h
        cols.append((spec.embed(xb + step) - spec.embed(xb - step)) / (2 * h))
    jac = np.stack(cols, axis=-1)  # (n, p, d)
    g = np.einsum("npi,npj->nij", jac, jac)
    return g[0] if single else g


def _sym_sqrt(mats: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mats)
    return np.einsum("nij,nj,nkj->nik", v, np.sqrt(np.clip(w, 0.0, None)), v)


def sde_coefficients_batch(
    spec: ManifoldSpec, x: np.ndarray, dense: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Drift and diffusion of Brownian motion in the chart, for a batch.

    drift_i = 1/2 sum_j (-g^-1 dg_j g^-1)_ij + 1/4 sum_j (g^-1)_ij tr(g^-1 dg_j),
    diffusion = symmetric square root of g^-1.

    Diagonal metrics take an elementwise route unless ``dense`` is set.
    """
    if isinstance(spec, ConstrainedPlane):
        n = len(x)
        return np.zeros((n, 2)), np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    if spec.diagonal_metric and not dense:
        drift, scale = diagonal_sde_coefficients(spec, x)
        diff = np.zeros((len(x), spec.dim, spec.dim))
        idx = np.arange(spec.dim)
        diff[:, idx, idx] = scale
        return drift, diff
    _, _, gi = metric_arrays(spec, x)
    dg = spec.metric_derivatives(x)  # (n, j, a, b)
    inner = np.einsum("nab,njbc,ncd->njad", gi, dg, gi)
    term1 = -0.5 * np.einsum("njij->ni", inner)
    traces = np.einsum("nab,njba->nj", gi, dg)
    term2 = 0.25 * np.einsum("nij,nj->ni", gi, traces)
    return term1 + term2, _sym_sqrt(gi)


def diagonal_sde_coefficients(spec: ManifoldSpec, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drift and per-axis diffusion scale for a diagonal metric.

    Same formula as :func:`sde_coefficients_batch` with every matrix diagonal:
    drift_i = -1/2 dg_ii/dx_i / g_ii^2 + 1/4 / g_ii * sum_k dg_kk/dx_i / g_kk.
    """
    g = np.einsum("nii->ni", spec.metric(x))
    if np.any(g.prod(axis=1) <= DET_MIN):
        raise SingularityError("degenerate metric")
    gi = 1.0 / g
    dg = np.einsum("njkk->njk", spec.metric_derivatives(x))  # dg[n, j, k] = d g_kk / d x_j
    own = np.einsum("nii->ni", dg)
    drift = -0.5 * own * gi**2 + 0.25 * gi * np.einsum("njk,nk->nj", dg, gi)
    return drift, np.sqrt(gi)


def sde_coefficients(spec: ManifoldSpec, x) -> tuple[np.ndarray, np.ndarray]:
    xb, single = _as_batch(x, spec.dim)
    _check_finite(xb)
    drift, diff = sde_coefficients_batch(spec, xb)
    return (drift[0], diff[0]) if single else (drift, diff)


def torus_sde_closed_form(spec: BittenTorus, x) -> tuple[np.ndarray, np.ndarray]:
    """Hand-derived torus coefficients: dtheta drift and diag(1/r, 1/|R + r cos theta|)."""
    xb, single = _as_batch(x, 2)
    theta = xb[:, 0]
    rad = spec.R + spec.r * np.cos(theta)
    drift = np.zeros_like(xb)
    drift[:, 0] = -0.5 / spec.r * np.sin(theta) / rad
    diff = np.zeros((len(xb), 2, 2))
    diff[:, 0, 0] = 1.0 / spec.r
    diff[:, 1, 1] = np.abs(1.0 / rad)
    return (drift[0], diff[0]) if single else (drift, diff)


def contains(spec: ManifoldSpec, x):
    """Interior test (boundary points within 1e-12 count as interior)."""
    xb, single = _as_batch(x, spec.dim)
    out = np.isfinite(xb).all(axis=1)
    if out.any():
        out[out] = spec.contains(xb[out])
    return bool(out[0]) if single else out


class ChartIndex:
    """Nearest-grid-point lookup in the chart metric.

    Wraps ``theta`` on the torus (and ``phi`` when there is no bite); never
    wraps across a bite.
    """

    def __init__(self, spec: ManifoldSpec, grid: np.ndarray):
        self.spec = spec
        coords, box = spec.tree_coords(np.asarray(grid, dtype=float))
        self._box = box
        self.tree = cKDTree(coords, boxsize=box)
        self.n = len(coords)

    def query(self, x: np.ndarray) -> np.ndarray:
        coords, _ = self.spec.tree_coords(np.asarray(x, dtype=float))
        _, idx = self.tree.query(coords, k=1)
        return idx

    def nearest_neighbor_distances(self) -> np.ndarray:
        dist, _ = self.tree.query(self.tree.data, k=2)
        return dist[:, 1]


def cell_volumes(
    spec: ManifoldSpec,
    grid,
    cell_area: float | None = None,
    rel_tol: float = 0.05,
) -> np.ndarray:
    """Riemannian volume of each grid cell: ``a * sqrt(det g)`` at the cell centre.

    ``a`` is the chart-cell area; when omitted it is the squared minimal
    nearest-neighbour chart distance, which is exact for square lattices.
    """
    pts, _ = _as_batch(grid, spec.dim)
    if len(pts) < 2:
        if cell_area is None:
            raise GridError("cannot infer the cell area from fewer than two grid points")
        nn = None
    else:
        nn = ChartIndex(spec, pts).nearest_neighbor_distances()
        if nn.min() <= 0:
            raise GridError("duplicate grid points")
        if nn.max() > (1.0 + rel_tol) * nn.min():
            raise GridError(
                f"grid spacing is not uniform: nearest-neighbour distances span "
                f"[{nn.min():.4g}, {nn.max():.4g}]"
            )
    a = float(nn.min() ** 2) if cell_area is None else float(cell_area)
    if a <= 0:
        raise GridError("cell area must be positive")
    _, det, _ = metric_arrays(spec, pts)
    return a * np.sqrt(det)


def clipped_cell_volumes(
    spec: ManifoldSpec,
    grid,
    spacing: Sequence[float],
    refine: int = 8,
) -> np.ndarray:
    """Riemannian volume of each nearest-grid-point cell intersected with the domain.

    For a rectangular chart lattice with the given per-axis ``spacing``, a
    sub-lattice ``refine`` times finer and aligned with the grid is laid over
    the chart; each interior sub-point adds ``sqrt(det g)`` times its chart
    area to the cell of its nearest grid point. Cells away from the boundary
    get exactly ``a * sqrt(det g)`` up to the metric's variation across the
    cell; cells cut by the boundary get only their part inside the domain.
    """
    pts, _ = _as_batch(grid, spec.dim)
    spacing = np.asarray(spacing, dtype=float)
    fine = spacing / refine
    axes = []
    for ax, (lo, hi) in enumerate(spec.chart_bounds()):
        o = pts[0, ax]
        first = o + (math.floor((lo - o) / spacing[ax]) - 1) * spacing[ax] + 0.5 * fine[ax]
        axes.append(np.arange(first, hi + spacing[ax], fine[ax]))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    mesh = mesh[contains(spec, mesh)]
    if isinstance(spec, BittenTorus):
        # theta covers one period exactly once
        mesh = mesh[(mesh[:, 0] >= 0.0) & (mesh[:, 0] < TWO_PI)]
        mesh = mesh[(mesh[:, 1] >= spec.phi_range[0]) & (mesh[:, 1] <= spec.phi_range[1])]
    _, det, _ = metric_arrays(spec, mesh)
    owner = ChartIndex(spec, pts).query(mesh)
    vol = np.bincount(owner, weights=np.sqrt(det) * fine.prod(), minlength=len(pts))
    if np.any(vol <= 0):
        raise GridError("some grid cells contain no part of the domain; is the spacing right?")
    return vol


# -------------------------------------------------------------------------
# polygon boundary files


def load_polygon_csv(path: str | Path, name: str | None = None) -> ConstrainedPlane:
    """Read a boundary file with columns ``ring_id, x, y`` (ring 0 is the outer ring)."""
    path = Path(path)
    rings: dict[int, list[tuple[float, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"ring_id", "x", "y"} - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path}:1: missing columns {sorted(missing)}")
        for row in reader:
            try:
                rid = int(row["ring_id"])
                pt = (float(row["x"]), float(row["y"]))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{reader.line_num}: {exc}") from None
            if not all(map(math.isfinite, pt)):
                raise ParseError(f"{path}:{reader.line_num}: non-finite coordinate")
            rings.setdefault(rid, []).append(pt)
    if 0 not in rings:
        raise ParseError(f"{path}: no outer ring (ring_id 0)")
    ordered = [np.array(rings[k]) for k in sorted(rings)]
    return ConstrainedPlane(rings=tuple(ordered), name=name or path.stem)


def write_polygon_csv(spec: ConstrainedPlane, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ring_id", "x", "y"])
        for rid, ring in enumerate(spec.rings or ()):
            for x, y in ring:
                w.writerow([rid, repr(float(x)), repr(float(y))])


def horseshoe(
    inner: float = 0.5,
    outer: float = 1.5,
    arm_length: float = 3.0,
    n_arc: int = 64,
) -> ConstrainedPlane:
    """Ramsay's horseshoe: two arms along +x joined by a half annulus at x <= 0."""
    def arc(radius: float, start: float, stop: float) -> list[tuple[float, float]]:
        angles = np.linspace(start, stop, n_arc + 1)[1:-1]
        return [(radius * math.cos(a), radius * math.sin(a)) for a in angles]

    ring: list[tuple[float, float]] = [
        (arm_length, -outer),
        (arm_length, -inner),
        (0.0, -inner),
        *arc(inner, -math.pi / 2, -3 * math.pi / 2),
        (0.0, inner),
        (arm_length, inner),
        (arm_length, outer),
        (0.0, outer),
        *arc(outer, math.pi / 2, 3 * math.pi / 2),
        (0.0, -outer),
    ]
    return ConstrainedPlane(rings=(np.array(ring),), name="ushape")


def lattice(spec: ManifoldSpec, spacing: Sequence[float], origin: Sequence[float]) -> np.ndarray:
    """Rectangular chart lattice restricted to the domain interior."""
    if isinstance(spec, ConstrainedPlane):
        xmin, ymin, xmax, ymax = spec.bounds()
        xs = np.arange(origin[0] + math.ceil((xmin - origin[0]) / spacing[0]) * spacing[0], xmax + 1e-12, spacing[0])
        ys = np.arange(origin[1] + math.ceil((ymin - origin[1]) / spacing[1]) * spacing[1], ymax + 1e-12, spacing[1])
    else:
        raise DomainError("lattice() is for planar domains; build torus lattices directly")
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return pts[spec.contains(pts)]
