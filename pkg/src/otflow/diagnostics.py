"""Validation oracles and run diagnostics.

Exact small-scale transport solvers (monotone rearrangement in 1-D, an
assignment solver in general dimension), closed-form Gaussian results,
a quantile-based marginal-fit metric, the relaxed-transport energy
monitor, and straight-line displacement interpolation of a coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

from .dynamics import CostFunction, cost_eval
from .kde import RbfKernel, log_kde_density
from .marginals import Marginal

__all__ = [
    "Coupling",
    "sorted_coupling_1d",
    "exact_assignment",
    "gaussian_map_1d",
    "gaussian_barycenter_1d",
    "marginal_w2_1d",
    "energy_estimate",
    "interpolate",
]

ASSIGNMENT_CAP = 512


@dataclass(frozen=True, eq=False)
class Coupling:
    """Equal-weight paired samples (x_i, y_i) from a transport plan."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if y.ndim == 1:
            y = y[:, None]
        if x.ndim != 2 or x.shape != y.shape or x.shape[0] == 0:
            raise ValueError(f"coupling needs matching non-empty (N, d) arrays, got {x.shape} and {y.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def mean_cost(self, cost: CostFunction = CostFunction()) -> float:
        return float(np.mean(cost_eval(cost, self.x, self.y)))


def sorted_coupling_1d(xs, ys, cost: CostFunction = CostFunction()) -> tuple[Coupling, float]:
    """Exact 1-D optimal coupling by monotone rearrangement.

    Pairs the i-th order statistic of xs with the i-th of ys, which is
    the unique optimum for strictly convex costs of the gap.

    Returns:
        The coupling and its mean cost.
    """
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    ys = np.asarray(ys, dtype=np.float64).reshape(-1)
    if xs.shape != ys.shape:
        raise ValueError(f"sample sizes differ: {len(xs)} vs {len(ys)}")
    if len(xs) == 0:
        raise ValueError("samples must be non-empty")
    coupling = Coupling(np.sort(xs), np.sort(ys))
    return coupling, coupling.mean_cost(cost)


def exact_assignment(
    xs, ys, cost: CostFunction = CostFunction(), cap: int = ASSIGNMENT_CAP
) -> tuple[Coupling, float]:
    """Minimum-cost perfect matching between two equal-size point clouds.

    Solves the N x N assignment problem exactly (O(N^3)); refuses inputs
    above the cap, where the empirical metric should be replaced by 1-D
    projections.

    Returns:
        The matched coupling (xs in input order) and its mean cost.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape != ys.shape:
        raise ValueError(f"point clouds differ in shape: {xs.shape} vs {ys.shape}")
    n = xs.shape[0]
    if n == 0:
        raise ValueError("point clouds must be non-empty")
    if n > cap:
        raise ValueError(f"assignment solver capped at {cap} points, got {n}")
    sq = np.sum((xs[:, None, :] - ys[None, :, :]) ** 2, axis=-1)
    matrix = sq if cost.kind == "quadratic" else sq ** (cost.exponent / 2.0)
    rows, cols = linear_sum_assignment(matrix)
    coupling = Coupling(xs[rows], ys[cols])
    return coupling, float(matrix[rows, cols].mean())


def gaussian_map_1d(mu: tuple[float, float], nu: tuple[float, float]) -> tuple[float, float]:
    """Affine monotone map pushing N(m1, s1^2) to N(m2, s2^2).

    Args:
        mu: (mean, std) of the source.
        nu: (mean, std) of the target.

    Returns:
        (slope, intercept) with slope = s2/s1 and intercept = m2 - slope*m1.
    """
    m1, s1 = mu
    m2, s2 = nu
    if s1 <= 0 or s2 <= 0:
        raise ValueError("standard deviations must be positive")
    slope = s2 / s1
    return slope, m2 - slope * m1


def gaussian_barycenter_1d(params, weights) -> tuple[float, float]:
    """Closed-form 1-D Gaussian barycenter.

    Args:
        params: List of (mean, std) pairs.
        weights: Barycentric weights, normalised on input.

    Returns:
        (mean, std) of the barycenter: the weighted mean of the means and
        the weighted mean of the stds.
    """
    w = np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    means = np.array([p[0] for p in params], dtype=np.float64)
    stds = np.array([p[1] for p in params], dtype=np.float64)
    return float(w @ means), float(w @ stds)


def _mixture_cdf_1d(m: Marginal, x: np.ndarray) -> np.ndarray:
    z = (x[:, None] - m.means[None, :, 0]) / np.sqrt(m.variances)[None, :]
    return ndtr(z) @ m.weights


def mixture_quantiles_1d(m: Marginal, probs: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Quantiles of a 1-D Gaussian mixture by bisection on the CDF."""
    if m.dim != 1:
        raise ValueError("quantiles are defined for 1-D marginals only")
    probs = np.asarray(probs, dtype=np.float64)
    sig = np.sqrt(m.variances)
    lo = np.full_like(probs, float(np.min(m.means[:, 0] - 12.0 * sig)))
    hi = np.full_like(probs, float(np.max(m.means[:, 0] + 12.0 * sig)))
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = _mixture_cdf_1d(m, mid) < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def marginal_w2_1d(sample, m: Marginal, quadrature_n: int | None = None) -> float:
    """Quadratic Wasserstein distance between a 1-D sample and a marginal.

    Matches the sample order statistics against the marginal's quantiles
    at the midpoint levels (i - 1/2)/N; the distance is zero exactly when
    the sample sits on those quantiles.

    Args:
        sample: 1-D sample values.
        m: Target marginal (dim 1).
        quadrature_n: Optional cap on the number of quantile levels; when
            smaller than the sample size, evenly spaced order statistics
            are compared instead of all of them.
    """
    xs = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    n = len(xs)
    if n == 0:
        raise ValueError("sample must be non-empty")
    if quadrature_n is not None and quadrature_n < n:
        idx = np.linspace(0, n - 1, quadrature_n).round().astype(int)
        xs = xs[idx]
        n = len(xs)
    probs = (np.arange(n) + 0.5) / n
    q = mixture_quantiles_1d(m, probs)
    return float(np.sqrt(np.mean((xs - q) ** 2)))


def energy_estimate(
    coupling: Coupling,
    mu: Marginal,
    nu: Marginal,
    relaxation: float,
    kernel_x: RbfKernel,
    kernel_y: RbfKernel,
    cost: CostFunction = CostFunction(),
) -> float:
    """Plug-in estimate of the relaxed transport energy of a coupling.

    Mean cost plus relaxation-weighted KDE estimates of the two marginal
    KL terms.  The KDE plug-in is biased; use it as a relative progress
    monitor, never as an absolute quantity.
    """
    value = coupling.mean_cost(cost)
    if relaxation != 0.0:
        kl_x = np.mean(
            log_kde_density(kernel_x, coupling.x, coupling.x) - mu.log_density(coupling.x)
        )
        kl_y = np.mean(
            log_kde_density(kernel_y, coupling.y, coupling.y) - nu.log_density(coupling.y)
        )
        value += relaxation * (float(kl_x) + float(kl_y))
    return float(value)


def interpolate(coupling: Coupling, t: float) -> np.ndarray:
    """Displacement interpolation (1 - t) x_i + t y_i of the coupled pairs.

    Args:
        t: Interpolation time in [0, 1]; 0 gives the X cloud, 1 the Y cloud.

    Returns:
        Point cloud, shape (N, d).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"interpolation time must lie in [0, 1], got {t!r}")
    return (1.0 - t) * coupling.x + t * coupling.y
