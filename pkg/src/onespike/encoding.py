"""Image front-end: filter kernels, filter banks, normalization and
intensity-to-latency conversion.

All 2-D filtering here is cross-correlation (the kernel is not flipped), the
same convention used by the spiking convolution in :mod:`onespike.layers`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import LATENCY_DTYPE, NO_SPIKE, TimeConfig, latencies_to_spikewave


class DegenerateKernelWarning(UserWarning):
    """A generated kernel is identically zero and cannot be normalized."""


@dataclass(frozen=True)
class FilterKernel:
    """Square, odd-sized, zero-mean kernel scaled to max ``|value| = 1``.

    ``params`` keeps the generator arguments for provenance.
    """

    values: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"kernel must be square, got shape {v.shape}")
        if v.shape[0] < 3 or v.shape[0] % 2 == 0:
            raise ValueError(f"kernel side must be odd and >= 3, got {v.shape[0]}")
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return self.values.shape[0]


def _centered_grid(size):
    if int(size) != size or size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be an odd integer >= 3, got {size!r}")
    half = size // 2
    r = np.arange(-half, half + 1, dtype=np.float64)
    # y indexes rows, x indexes columns
    y, x = np.meshgrid(r, r, indexing="ij")
    return x, y


def _zero_mean_unit_max(raw, params):
    k = raw - raw.mean()
    peak = np.abs(k).max()
    if peak == 0:
        warnings.warn(
            f"kernel {params} is identically zero; returning the zero kernel",
            DegenerateKernelWarning,
            stacklevel=3,
        )
        return np.zeros_like(k)
    return k / peak


def make_dog_kernel(size, sigma1, sigma2):
    """Difference-of-Gaussians kernel ``G(sigma1) - G(sigma2)``.

    ``sigma1 < sigma2`` gives an on-center kernel, the reverse an off-center
    one. The result is mean-subtracted and divided by its largest magnitude.
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("DoG sigmas must be positive")
    x, y = _centered_grid(size)
    rr = x**2 + y**2
    g1 = np.exp(-rr / (2 * sigma1**2)) / sigma1**2
    g2 = np.exp(-rr / (2 * sigma2**2)) / sigma2**2
    raw = (g1 - g2) / (2 * math.pi)
    params = {"kind": "dog", "size": size, "sigma1": sigma1, "sigma2": sigma2}
    return FilterKernel(_zero_mean_unit_max(raw, params), params)


def make_gabor_kernel(size, lambda_, theta, sigma, gamma):
    """Cosine Gabor kernel with wavelength ``lambda_`` and orientation ``theta``."""
    if lambda_ <= 0 or sigma <= 0 or gamma <= 0:
        raise ValueError("Gabor lambda, sigma and gamma must be positive")
    x, y = _centered_grid(size)
    xr = x * math.cos(theta) + y * math.sin(theta)
    yr = -x * math.sin(theta) + y * math.cos(theta)
    raw = np.exp(-(xr**2 + gamma**2 * yr**2) / (2 * sigma**2)) * np.cos(
        2 * math.pi * xr / lambda_
    )
    params = {
        "kind": "gabor",
        "size": size,
        "lambda": lambda_,
        "theta": theta,
        "sigma": sigma,
        "gamma": gamma,
    }
    return FilterKernel(_zero_mean_unit_max(raw, params), params)


@dataclass(frozen=True)
class FilterBank:
    kernels: tuple
    padding: int = 0
    threshold: float = -math.inf

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValueError("filter bank needs at least one kernel")
        sizes = {k.size for k in kernels}
        if len(sizes) != 1:
            raise ValueError(f"all kernels in a bank must share one size, got {sorted(sizes)}")
        if self.padding < 0:
            raise ValueError("padding must be non-negative")
        object.__setattr__(self, "kernels", kernels)

    @property
    def weights(self):
        return np.stack([k.values for k in self.kernels])


def default_dog_bank(size=7, padding=3, threshold=50.0):
    """Six DoG kernels: on/off-center pairs at three scales."""
    scales = [(3 / 9, 6 / 9), (7 / 9, 14 / 9), (13 / 9, 26 / 9)]
    kernels = []
    for s1, s2 in scales:
        kernels.append(make_dog_kernel(size, s1, s2))
        kernels.append(make_dog_kernel(size, s2, s1))
    return FilterBank(tuple(kernels), padding=padding, threshold=threshold)


def apply_filter_bank(image, bank):
    """Correlate a 2-D image with every kernel of ``bank``.

    Values below ``bank.threshold`` are set to zero afterwards.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"image must be a non-empty 2-D grid, got shape {image.shape}")
    p = bank.padding
    padded = np.pad(image, p)
    k = bank.kernels[0].size
    if k > padded.shape[0] or k > padded.shape[1]:
        raise ValueError(f"kernel of size {k} does not fit padded image {padded.shape}")
    windows = sliding_window_view(padded, (k, k))
    out = np.tensordot(bank.weights, windows, axes=([1, 2], [2, 3]))
    out[out < bank.threshold] = 0.0
    return out


def _box_sum(x, radius):
    # sum over the (2r+1)^2 window, truncated at borders, via an integral image
    h, w = x.shape[-2:]
    ii = np.zeros(x.shape[:-2] + (h + 1, w + 1))
    ii[..., 1:, 1:] = x.cumsum(-2).cumsum(-1)
    r0 = np.clip(np.arange(h) - radius, 0, h)
    r1 = np.clip(np.arange(h) + radius + 1, 0, h)
    c0 = np.clip(np.arange(w) - radius, 0, w)
    c1 = np.clip(np.arange(w) + radius + 1, 0, w)
    s = (
        ii[..., r1[:, None], c1[None, :]]
        - ii[..., r0[:, None], c1[None, :]]
        - ii[..., r1[:, None], c0[None, :]]
        + ii[..., r0[:, None], c0[None, :]]
    )
    count = (r1 - r0)[:, None] * (c1 - c0)[None, :]
    return s, count


def local_normalization(intensities, radius, epsilon=1e-12):
    """Divide each value by the mean of its ``(2r+1)^2`` neighbourhood.

    Border windows are truncated to the grid, so a constant image maps to
    ones everywhere. The mean is clamped below by ``epsilon``.
    """
    if radius < 1:
        raise ValueError("radius must be positive")
    x = np.asarray(intensities, dtype=np.float64)
    s, count = _box_sum(x, radius)
    mean = np.maximum(s / count, epsilon)
    return x / mean


def generate_inhibition_kernel(factors):
    """Square kernel whose ring at Chebyshev distance ``d`` holds ``factors[d-1]``."""
    factors = [float(f) for f in factors]
    if not factors:
        raise ValueError("need at least one inhibition factor")
    for f in factors:
        if not 0 < f <= 1:
            raise ValueError(f"inhibition factors must lie in (0, 1], got {f}")
    n = len(factors)
    r = np.arange(-n, n + 1)
    ring = np.maximum(np.abs(r)[:, None], np.abs(r)[None, :])
    table = np.array([1.0] + factors)
    return table[ring]


def intensity_lateral_inhibition(intensities, kernel):
    """Scale each value down by the factor of every strictly stronger neighbour.

    A neighbour at offset ``(dy, dx)`` inside the kernel footprint whose
    original value is larger multiplies this location by ``kernel[dy, dx]``.
    Comparisons use the original values, so the result does not depend on
    sweep order. Channels are treated independently.
    """
    x = np.asarray(intensities, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1] or kernel.shape[0] % 2 == 0:
        raise ValueError("inhibition kernel must be square with odd side")
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    n = kernel.shape[0] // 2
    h, w = x.shape[-2:]
    padded = np.pad(x, ((0, 0), (n, n), (n, n)), constant_values=-np.inf)
    out = x.copy()
    for dy in range(-n, n + 1):
        for dx in range(-n, n + 1):
            if dy == 0 and dx == 0:
                continue
            neighbour = padded[:, n + dy : n + dy + h, n + dx : n + dx + w]
            out *= np.where(neighbour > x, kernel[n + dy, n + dx], 1.0)
    return out[0] if squeeze else out


def intensity_to_latency_grid(intensities, cfg):
    """Latency-grid form of :func:`intensity_to_latency`."""
    t_max = cfg.t_max if isinstance(cfg, TimeConfig) else TimeConfig(cfg).t_max
    x = np.asarray(intensities, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"intensities must be 3-D (F, H, W), got shape {x.shape}")
    flat = x.ravel()
    (positive,) = np.nonzero(flat > 0)
    # stable sort on -value keeps row-major order among ties
    order = positive[np.argsort(-flat[positive], kind="stable")]
    lat = np.full(flat.shape, NO_SPIKE, dtype=LATENCY_DTYPE)
    for t, chunk in enumerate(np.array_split(order, t_max)):
        lat[chunk] = t
    return lat.reshape(x.shape)


def intensity_to_latency(intensities, cfg):
    """Rank-order encode a 3-D intensity grid into a spike-wave.

    Strictly positive values are sorted by decreasing intensity (ties by
    row-major position) and split into ``t_max`` bins of near-equal size,
    earlier bins taking the remainder. Non-positive values never spike.
    """
    t_max = cfg.t_max if isinstance(cfg, TimeConfig) else TimeConfig(cfg).t_max
    return latencies_to_spikewave(intensity_to_latency_grid(intensities, t_max), t_max)
