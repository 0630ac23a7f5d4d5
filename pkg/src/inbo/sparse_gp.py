"""Surrogate models: the sparse intrinsic GP and the Euclidean RBF GP baseline.

The intrinsic model uses the deterministic inducing conditional. With
``W = L^-1 K_zr`` where ``L L^T = K_zz + jitter``, every prior block is
``Q_AB = sigma_h2 * W_A^T W_B``. Likelihood and prediction only ever factor
``m x m`` matrices (or ``|D| x |D|`` in the noiseless case); the full
``n x n`` prior is never formed.

Observations are centred on their mean before fitting and prediction unless
``center=False``; the constant is added back to the posterior mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .errors import ConditioningError, FitError, InputError
from .heat_kernel import KernelEstimate

LOG_2PI = math.log(2 * math.pi)
JITTER_LADDER = (1e-8, 1e-6, 1e-4)
# blocks better conditioned than this are factored without jitter
JITTER_FREE_COND = 1e6
SIGMA2_SPAN = (1e-2, 1e4, 15)
NOISE_SPAN = (1e-6, 1.0, 10)
LENGTH_SPAN = (0.02, 2.0, 15)


@dataclass(frozen=True)
class TrainingSet:
    indices: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if len(idx) != len(y):
            raise InputError("indices and y differ in length")
        if len(np.unique(idx)) != len(idx):
            raise InputError("training indices must be unique")
        if not np.all(np.isfinite(y)):
            raise InputError("observations must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class IntrinsicHyperparameters:
    t: float
    sigma_h2: float
    sigma_noise2: float
    log_likelihood: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if not self.sigma_h2 > 0 or self.sigma_noise2 < 0:
            raise InputError("need sigma_h2 > 0 and sigma_noise2 >= 0")


@dataclass(frozen=True)
class RBFHyperparameters:
    l: float
    sigma_r2: float
    sigma_noise2: float
    log_likelihood: float = field(default=float("nan"), compare=False)

    def __post_init__(self):
        if not (self.l > 0 and self.sigma_r2 > 0) or self.sigma_noise2 < 0:
            raise InputError("need l > 0, sigma_r2 > 0 and sigma_noise2 >= 0")


@dataclass(frozen=True)
class Posterior:
    mean: np.ndarray
    variance: np.ndarray
    n_clamped: int = 0
    min_raw_variance: float = 0.0

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _clamped(mean: np.ndarray, var: np.ndarray) -> Posterior:
    neg = var < 0
    return Posterior(mean, np.where(neg, 0.0, var), int(neg.sum()), float(var.min(initial=0.0)))


def _center(y: np.ndarray, center: bool) -> tuple[np.ndarray, float]:
    offset = float(y.mean()) if center and len(y) else 0.0
    return y - offset, offset


def jittered_cholesky(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``A``, regularised only when it needs it.

    A well-conditioned ``A`` (condition number at most ``JITTER_FREE_COND``)
    is factored as is. Otherwise ``eps * trace(A)/m`` is added to the
    diagonal, escalating ``eps`` through ``JITTER_LADDER``.
    """
    m = len(A)
    scale = np.trace(A) / m
    if not scale > 0:
        raise ConditioningError("inducing block has zero trace")
    lam = np.linalg.eigvalsh(A)
    if lam[0] > 0 and lam[-1] <= JITTER_FREE_COND * lam[0]:
        try:
            return cholesky(A, lower=True)
        except LinAlgError:
            pass
    for eps in JITTER_LADDER:
        try:
            return cholesky(A + eps * scale * np.eye(m), lower=True)
        except LinAlgError:
            continue
    raise ConditioningError(f"Cholesky failed with jitter up to {JITTER_LADDER[-1]:g} x trace/m")


def whitened(K: KernelEstimate, t: float) -> np.ndarray:
    """``L^-1 K_zr[t]``; cached on the kernel object."""
    k = K.t_index(t)
    cache = K.cache
    if k not in cache:
        L = jittered_cholesky(K.K_zz[k])
        W = solve_triangular(L, K.K_zr[k], lower=True)
        W.setflags(write=False)
        cache[k] = W
    return cache[k]


def q_cross(K: KernelEstimate, t: float, rows, cols, sigma_h2: float = 1.0) -> np.ndarray:
    """``Sigma_Az Sigma_zz^-1 Sigma_zB`` for grid index sets ``rows`` and ``cols``."""
    W = whitened(K, t)
    return sigma_h2 * W[:, np.asarray(rows, dtype=int)].T @ W[:, np.asarray(cols, dtype=int)]


# smallest admissible squared pivot, relative to the largest diagonal entry
NOISELESS_PIVOT_RTOL = 1e-10


def _noiseless_cholesky(Q: np.ndarray) -> np.ndarray:
    try:
        L = cholesky(Q, lower=True)
    except LinAlgError:
        L = None
    if L is None or np.min(np.diag(L)) ** 2 <= NOISELESS_PIVOT_RTOL * np.max(np.diag(Q)):
        raise ConditioningError("noise-free Q_DD is rank deficient")
    return L


def log_marginal_likelihood(
    K: KernelEstimate, D: TrainingSet, h: IntrinsicHyperparameters
) -> float:
    """``log N(y | 0, Q_DD + sigma_noise2 I)`` through the ``m x m`` Woodbury identity."""
    if len(D) < 1:
        raise InputError("need at least one observation")
    y = D.y
    n = len(y)
    U = whitened(K, h.t)[:, D.indices]
    s, s2 = h.sigma_h2, h.sigma_noise2
    if s2 == 0:
        L = _noiseless_cholesky(s * U.T @ U)
        a = solve_triangular(L, y, lower=True)
        return float(-0.5 * (a @ a) - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI)
    A = np.eye(len(U)) + (s / s2) * (U @ U.T)
    LA = cholesky(A, lower=True)
    c = solve_triangular(LA, U @ y, lower=True)
    quad = (y @ y - (s / s2) * (c @ c)) / s2
    logdet = n * math.log(s2) + 2.0 * np.log(np.diag(LA)).sum()
    return float(-0.5 * (quad + logdet + n * LOG_2PI))


def predict(
    K: KernelEstimate, D: TrainingSet, h: IntrinsicHyperparameters, center: bool = True
) -> Posterior:
    """Posterior mean and marginal variance at every grid point."""
    if len(D) < 1:
        raise InputError("need at least one observation")
    yc, offset = _center(D.y, center)
    W = whitened(K, h.t)
    U = W[:, D.indices]
    s, s2 = h.sigma_h2, h.sigma_noise2
    if s2 == 0:
        L = _noiseless_cholesky(s * U.T @ U)
        alpha = cho_solve((L, True), yc)
        mean = s * (W.T @ (U @ alpha))
        V = solve_triangular(L, s * (U.T @ W), lower=True)
        var = s * np.einsum("ij,ij->j", W, W) - np.einsum("ij,ij->j", V, V)
    else:
        A = np.eye(len(U)) + (s / s2) * (U @ U.T)
        LA = cholesky(A, lower=True)
        mean = (s / s2) * (W.T @ cho_solve((LA, True), U @ yc))
        V = solve_triangular(LA, W, lower=True)
        var = s * np.einsum("ij,ij->j", V, V)
    return _clamped(mean + offset, var)


def _grid(span: tuple[float, float, int], scale: float) -> np.ndarray:
    lo, hi, n = span
    return scale * np.geomspace(lo, hi, n)


def _check_grids(mags: np.ndarray, noises: np.ndarray) -> None:
    if not (mags.size and noises.size):
        raise InputError("hyperparameter grids must be non-empty")
    if np.any(~(mags > 0)) or np.any(~(noises >= 0)):
        raise InputError("magnitude grid must be positive and noise grid nonnegative")


def _y_scale(y: np.ndarray) -> float:
    v = float(np.var(y))
    return v if v > 0 else 1.0


def _profile(Qb: np.ndarray, y: np.ndarray, mags: np.ndarray, noises: np.ndarray) -> np.ndarray:
    """Log-likelihood of ``y`` under ``mag * Qb + noise * I`` on a (noise, mag) grid."""
    lam, V = np.linalg.eigh(Qb)
    lam = np.clip(lam, 0.0, None)
    z2 = (V.T @ y) ** 2
    c = mags[None, :, None] * lam + noises[:, None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = -0.5 * (np.sum(z2 / c + np.log(c), axis=-1) + len(y) * LOG_2PI)
    return np.where(np.isfinite(ll), ll, -np.inf)


def fit(
    K: KernelEstimate,
    D: TrainingSet,
    t_grid: Sequence[float] | None = None,
    sigma_h2_grid: Sequence[float] | None = None,
    noise_grid: Sequence[float] | None = None,
    center: bool = True,
) -> IntrinsicHyperparameters:
    """Exhaustive marginal-likelihood search over ``t x sigma_h2 x sigma_noise2``.

    Ties go to the smaller ``t``, then the smaller noise, then the smaller magnitude.
    """
    if len(D) < 2:
        raise InputError("fitting needs at least two observations")
    yc, _ = _center(D.y, center)
    v = _y_scale(D.y)
    ts = np.sort(np.asarray(K.t_grid if t_grid is None else t_grid, dtype=float))
    mags = np.asarray(sigma_h2_grid, dtype=float) if sigma_h2_grid is not None else _grid(SIGMA2_SPAN, v)
    noises = np.asarray(noise_grid, dtype=float) if noise_grid is not None else _grid(NOISE_SPAN, v)
    _check_grids(mags, noises)
    scores = np.full((len(ts), len(noises), len(mags)), -np.inf)
    for k, t in enumerate(ts):
        try:
            U = whitened(K, t)[:, D.indices]
        except ConditioningError:
            continue
        scores[k] = _profile(U.T @ U, yc, mags, noises)
    best = int(np.argmax(scores))
    if not np.isfinite(scores.flat[best]):
        raise FitError("no hyperparameter candidate could be evaluated")
    k, j, i = np.unravel_index(best, scores.shape)
    return IntrinsicHyperparameters(float(ts[k]), float(mags[i]), float(noises[j]), float(scores.flat[best]))


# -------------------------------------------------------------------------
# Euclidean RBF baseline


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)


def _coords_scale(coords: np.ndarray) -> float:
    span = coords.max(axis=0) - coords.min(axis=0)
    return float(np.linalg.norm(span)) or 1.0


def fit_rbf(
    coords,
    D: TrainingSet,
    l_grid: Sequence[float] | None = None,
    sigma_r2_grid: Sequence[float] | None = None,
    noise_grid: Sequence[float] | None = None,
    center: bool = True,
) -> RBFHyperparameters:
    """Exact-GP marginal-likelihood grid search over ``l x sigma_r2 x sigma_noise2``.

    The default length-scale grid spans ``[0.02, 2]`` times the diagonal of the
    coordinates' bounding box.
    """
    if len(D) < 2:
        raise InputError("fitting needs at least two observations")
    coords = np.asarray(coords, dtype=float)
    yc, _ = _center(D.y, center)
    v = _y_scale(D.y)
    ls = np.sort(np.asarray(l_grid, dtype=float)) if l_grid is not None else _grid(LENGTH_SPAN, _coords_scale(coords))
    mags = np.asarray(sigma_r2_grid, dtype=float) if sigma_r2_grid is not None else _grid(SIGMA2_SPAN, v)
    noises = np.asarray(noise_grid, dtype=float) if noise_grid is not None else _grid(NOISE_SPAN, v)
    _check_grids(mags, noises)
    if not (ls.size and np.all(ls > 0)):
        raise InputError("length-scale grid must be non-empty and positive")
    sq = _sqdist(coords[D.indices], coords[D.indices])
    scores = np.stack([_profile(np.exp(-sq / (2 * l * l)), yc, mags, noises) for l in ls])
    best = int(np.argmax(scores))
    if not np.isfinite(scores.flat[best]):
        raise FitError("no hyperparameter candidate could be evaluated")
    k, j, i = np.unravel_index(best, scores.shape)
    return RBFHyperparameters(float(ls[k]), float(mags[i]), float(noises[j]), float(scores.flat[best]))


def _rbf_factor(coords: np.ndarray, D: TrainingSet, h: RBFHyperparameters) -> np.ndarray:
    X = coords[D.indices]
    Kdd = h.sigma_r2 * np.exp(-_sqdist(X, X) / (2 * h.l**2)) + h.sigma_noise2 * np.eye(len(X))
    try:
        return cholesky(Kdd, lower=True)
    except LinAlgError:
        raise ConditioningError("K_DD + sigma_noise2 I is singular") from None


def rbf_log_marginal_likelihood(coords, D: TrainingSet, h: RBFHyperparameters) -> float:
    coords = np.asarray(coords, dtype=float)
    L = _rbf_factor(coords, D, h)
    a = solve_triangular(L, D.y, lower=True)
    return float(-0.5 * (a @ a) - np.log(np.diag(L)).sum() - 0.5 * len(D) * LOG_2PI)


def predict_rbf(coords, D: TrainingSet, h: RBFHyperparameters, center: bool = True) -> Posterior:
    """Exact GP posterior with the RBF kernel, ignoring any domain boundary."""
    if len(D) < 1:
        raise InputError("need at least one observation")
    coords = np.asarray(coords, dtype=float)
    yc, offset = _center(D.y, center)
    L = _rbf_factor(coords, D, h)
    Krd = h.sigma_r2 * np.exp(-_sqdist(coords, coords[D.indices]) / (2 * h.l**2))
    mean = Krd @ cho_solve((L, True), yc)
    V = solve_triangular(L, Krd.T, lower=True)
    var = h.sigma_r2 - np.einsum("ij,ij->j", V, V)
    return _clamped(mean + offset, var)


def rbf_posterior_covariance(coords, D: TrainingSet, h: RBFHyperparameters, points) -> np.ndarray:
    """Joint posterior covariance of the latent function at grid indices ``points``."""
    coords = np.asarray(coords, dtype=float)
    P = coords[np.asarray(points, dtype=int)]
    L = _rbf_factor(coords, D, h)
    Kpd = h.sigma_r2 * np.exp(-_sqdist(P, coords[D.indices]) / (2 * h.l**2))
    V = solve_triangular(L, Kpd.T, lower=True)
    return h.sigma_r2 * np.exp(-_sqdist(P, P) / (2 * h.l**2)) - V.T @ V
