"""Target marginal densities.

Isotropic Gaussians and Gaussian mixtures, plus mixtures derived from
grayscale images (one component per bright pixel).  Each marginal exposes
its log-density up to a constant, the gradient of the log-density, and an
exact sampler for particle initialisation.  Gradients never depend on the
normalisation constant, so unnormalised densities work too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

__all__ = ["Marginal", "GrayImage", "image_to_mixture", "load_gray_image"]

_WEIGHT_TOL = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Marginal:
    """Mixture of isotropic Gaussians on R^d.

    Attributes:
        kind: ``"gaussian"``, ``"mixture"`` or ``"image-mixture"``.
        weights: Component weights, shape ``(K,)``, summing to one.
        means: Component means, shape ``(K, d)``.
        variances: Per-component isotropic variances, shape ``(K,)``.
        dim: Dimensionality ``d``.

    Instances are immutable after construction; every operation is pure
    and safe to call concurrently.
    """

    kind: str
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu.reshape(-1, 1)
        var = np.asarray(self.variances, dtype=np.float64).reshape(-1)

        if self.kind not in ("gaussian", "mixture", "image-mixture"):
            raise ValueError(f"unknown marginal kind {self.kind!r}")
        if not (len(w) == mu.shape[0] == len(var)):
            raise ValueError(
                "weights, means and variances must have one entry per component"
            )
        if len(w) == 0:
            raise ValueError("marginal needs at least one component")
        if np.any(w <= 0):
            raise ValueError("component weights must be strictly positive")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"component weights sum to {w.sum()!r}, expected 1")
        if np.any(var <= 0):
            raise ValueError("component variances must be strictly positive")

        # Re-normalise the residual O(1e-13) so downstream sums are clean.
        object.__setattr__(self, "weights", _freeze(w / w.sum()))
        object.__setattr__(self, "means", _freeze(mu))
        object.__setattr__(self, "variances", _freeze(var))
        object.__setattr__(self, "dim", mu.shape[1])

    # -----------------------------------------------------------------
    # Constructors
    # -----------------------------------------------------------------

    @classmethod
    def gaussian(cls, mean, variance: float) -> "Marginal":
        """Single isotropic Gaussian with the given mean vector and variance."""
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls("gaussian", np.array([1.0]), mean[None, :], np.array([variance]))

    @classmethod
    def mixture(cls, weights, means, variances) -> "Marginal":
        """Mixture of isotropic Gaussians; weights must sum to one."""
        return cls("mixture", weights, means, variances)

    # -----------------------------------------------------------------
    # Density evaluations
    # -----------------------------------------------------------------

    def _check_points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(
                f"query has dimension {x.shape[-1] if x.ndim else 0}, "
                f"marginal has dimension {self.dim}"
            )
        return x, single

    def _component_log_densities(self, x: np.ndarray) -> np.ndarray:
        # log w_j + log N(x; mu_j, sigma_j^2 I), shape (n, K)
        diff = x[:, None, :] - self.means[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        log_norm = -0.5 * self.dim * np.log(2.0 * np.pi * self.variances)
        return np.log(self.weights) + log_norm - 0.5 * sq / self.variances

    def log_density(self, x) -> np.ndarray | float:
        """Log of the mixture density, normalisation constants included.

        Args:
            x: Query point ``(d,)`` or batch ``(n, d)``.

        Returns:
            Scalar for a single query, array ``(n,)`` for a batch.
        """
        pts, single = self._check_points(x)
        out = logsumexp(self._component_log_densities(pts), axis=1)
        return float(out[0]) if single else out

    def grad_log_density(self, x) -> np.ndarray:
        """Gradient of the log-density.

        Responsibilities are computed with a max-shifted softmax, so deep
        tail queries return the dominant component's gradient rather than
        NaN, and the result is independent of any global rescaling of the
        density.

        Args:
            x: Query point ``(d,)`` or batch ``(n, d)``.

        Returns:
            Gradient with the same shape as ``x``.
        """
        pts, single = self._check_points(x)
        if len(self.weights) == 1:
            grad = -(pts - self.means[0]) / self.variances[0]
            return grad[0] if single else grad
        log_comp = self._component_log_densities(pts)  # (n, K)
        shifted = log_comp - log_comp.max(axis=1, keepdims=True)
        resp = np.exp(shifted)
        resp /= resp.sum(axis=1, keepdims=True)

        diff = pts[:, None, :] - self.means[None, :, :]  # (n, K, d)
        comp_grad = -diff / self.variances[None, :, None]
        grad = np.sum(resp[:, :, None] * comp_grad, axis=1)
        return grad[0] if single else grad

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``n`` i.i.d. samples; deterministic for a fixed seed.

        Args:
            n: Number of samples, at least 1.
            seed: Integer seed or ``numpy.random.Generator``.

        Returns:
            Samples, shape ``(n, d)``.
        """
        if n < 1:
            raise ValueError("sample count must be >= 1")
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[idx] + noise * np.sqrt(self.variances[idx])[:, None]

    def project(self, axis: int) -> "Marginal":
        """1-D coordinate projection (isotropic components project exactly)."""
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dimension {self.dim}")
        return Marginal(self.kind, self.weights, self.means[:, axis : axis + 1], self.variances)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale intensity grid, row-major, with at least one bright pixel.

    Attributes:
        intensities: Non-negative array, shape ``(height, width)``.
    """

    intensities: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.intensities, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image must be a 2-D grid with positive extent")
        if np.any(a < 0) or np.any(~np.isfinite(a)):
            raise ValueError("pixel intensities must be finite and non-negative")
        if not np.any(a > 0):
            raise ValueError("image has no strictly positive pixel")
        object.__setattr__(self, "intensities", _freeze(a))

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]


def image_to_mixture(img: GrayImage, bandwidth: float) -> Marginal:
    """Convert an intensity grid to a 2-D Gaussian mixture.

    One component per strictly positive pixel, weighted by intensity.
    Pixel centres are mapped into the unit square with x pointing right
    and y pointing up: pixel (r, c) sits at
    ``((c + 0.5)/width, (height - r - 0.5)/height)``.

    Args:
        img: Source image.
        bandwidth: Component standard deviation; variance is its square.

    Returns:
        Marginal of kind ``"image-mixture"`` with dim 2.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    rows, cols = np.nonzero(img.intensities > 0)
    w = img.intensities[rows, cols]
    means = np.column_stack(
        [
            (cols + 0.5) / img.width,
            (img.height - rows - 0.5) / img.height,
        ]
    )
    weights = w / w.sum()
    variances = np.full(len(w), float(bandwidth) ** 2)
    return Marginal("image-mixture", weights, means, variances)


def load_gray_image(path: str) -> GrayImage:
    """Load a GrayImage from an 8-bit grayscale PNG or a plain-text matrix.

    Text files hold whitespace-separated rows of non-negative numbers.
    """
    p = str(path)
    if p.lower().endswith(".png"):
        from PIL import Image

        with Image.open(p) as im:
            data = np.asarray(im.convert("L"), dtype=np.float64)
        return GrayImage(data)
    data = np.loadtxt(p, dtype=np.float64, ndmin=2)
    return GrayImage(data)
