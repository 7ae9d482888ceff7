"""Spiking convolution, pooling, firing and competition.

Every function takes and returns ``(T, F, H, W)`` arrays. Convolution is a
stride-1 valid cross-correlation applied to all time-steps at once; since
spike-waves are accumulative, the resulting potentials are too.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .tensor import SPIKE_DTYPE

DEFAULT_WEIGHT_MEAN = 0.8
DEFAULT_WEIGHT_STD = 0.05


def _pair(v, name):
    if np.isscalar(v):
        v = (v, v)
    v = tuple(int(i) for i in v)
    if len(v) != 2:
        raise ValueError(f"{name} must be an int or a pair of ints, got {v!r}")
    return v


class Winner(NamedTuple):
    feature: int
    row: int
    column: int


class ConvLayer:
    """Weights of a spiking convolution, shape ``(F_out, F_in, K_h, K_w)``.

    Weights are drawn from ``Normal(weight_mean, weight_std)`` using ``rng``
    (a seed or a :class:`numpy.random.Generator`).
    """

    def __init__(
        self,
        in_features,
        out_features,
        kernel_size,
        weight_mean=DEFAULT_WEIGHT_MEAN,
        weight_std=DEFAULT_WEIGHT_STD,
        rng=None,
    ):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.kernel_size = _pair(kernel_size, "kernel_size")
        if min(self.in_features, self.out_features, *self.kernel_size) < 1:
            raise ValueError("feature counts and kernel size must be positive")
        self.weight_mean = float(weight_mean)
        self.weight_std = float(weight_std)
        rng = np.random.default_rng(rng)
        shape = (self.out_features, self.in_features) + self.kernel_size
        self.weight = rng.normal(self.weight_mean, self.weight_std, size=shape)

    def __repr__(self):
        return (
            f"ConvLayer({self.in_features}, {self.out_features}, "
            f"kernel_size={self.kernel_size})"
        )

    def set_weight(self, weight):
        weight = np.asarray(weight, dtype=np.float64)
        expected = (self.out_features, self.in_features) + self.kernel_size
        if weight.shape != expected:
            raise ValueError(f"weight shape {weight.shape} != expected {expected}")
        if not np.all(np.isfinite(weight)):
            raise ValueError("weights must be finite")
        self.weight = weight.copy()


def _check_conv_input(layer, s):
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 4:
        raise ValueError(f"input must be 4-D (T, F, H, W), got shape {s.shape}")
    if s.shape[1] != layer.in_features:
        raise ValueError(
            f"input has {s.shape[1]} features, layer expects {layer.in_features}"
        )
    kh, kw = layer.kernel_size
    if s.shape[2] < kh or s.shape[3] < kw:
        raise ValueError(
            f"input {s.shape[2]}x{s.shape[3]} smaller than kernel {kh}x{kw}"
        )
    return s


def _im2col(x, kh, kw):
    # (..., F, H, W) -> (..., F*kh*kw, H_out*W_out), ordered like weight.reshape(F_out, -1)
    *lead, f, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = np.empty((*lead, f, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[..., i, j, :, :] = x[..., i : i + ho, j : j + wo]
    return cols.reshape(*lead, f * kh * kw, ho * wo), (ho, wo)


def conv_forward(layer, s):
    """Valid, stride-1 convolution of every time-step of ``s``.

    Output shape is ``(T, F_out, H - K_h + 1, W - K_w + 1)``.
    """
    s = _check_conv_input(layer, s)
    cols, (ho, wo) = _im2col(s, *layer.kernel_size)
    out = layer.weight.reshape(layer.out_features, -1) @ cols
    return out.reshape(s.shape[0], layer.out_features, ho, wo)


def conv_last_step(layer, s):
    """Potentials of the final time-step only, shape ``(F_out, H_out, W_out)``.

    Equivalent to ``conv_forward(layer, s)[-1]`` at a fraction of the cost;
    used where only the last step survives (:func:`fire_infinite`).
    """
    s = _check_conv_input(layer, s)
    cols, (ho, wo) = _im2col(s[-1], *layer.kernel_size)
    out = layer.weight.reshape(layer.out_features, -1) @ cols
    return out.reshape(layer.out_features, ho, wo)


def pad_spikewave(s, pad):
    """Zero-pad the spatial axes; ``pad`` is ``(top, bottom, left, right)``."""
    top, bottom, left, right = (int(p) for p in pad)
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding must be non-negative")
    s = np.asarray(s)
    t, f, h, w = s.shape
    out = np.zeros((t, f, h + top + bottom, w + left + right), dtype=s.dtype)
    out[:, :, top : top + h, left : left + w] = s
    return out


def threshold_cut(p, threshold):
    """Zero every potential strictly below ``threshold``."""
    p = np.asarray(p, dtype=np.float64)
    return np.where(p < threshold, 0.0, p)


def fire(p, threshold):
    """Spike-wave of neurons whose potential exceeds ``threshold``.

    Comparisons are OR-accumulated along time, so the output is a valid
    spike-wave even when ``p`` is not accumulative.
    """
    above = np.asarray(p) > threshold
    for t in range(1, above.shape[0]):
        above[t] |= above[t - 1]
    return above.astype(SPIKE_DTYPE)


def fire_infinite(p):
    """Firing with an infinite threshold.

    Potentials are zeroed at every step but the last; the returned spike-wave
    marks the nonzero final-step potentials at ``t = T - 1`` only.

    Returns
    -------
    (spikes, potentials)
    """
    p = np.asarray(p, dtype=np.float64)
    kept = np.zeros_like(p)
    kept[-1] = p[-1]
    spikes = np.zeros_like(p)
    spikes[-1] = kept[-1] != 0
    return spikes, kept


class PoolSpec(NamedTuple):
    window: tuple
    stride: tuple
    padding: tuple

    @classmethod
    def make(cls, window, stride=None, padding=0):
        window = _pair(window, "window")
        stride = window if stride is None else _pair(stride, "stride")
        padding = _pair(padding, "padding")
        if min(window + stride) < 1:
            raise ValueError("pooling window and stride must be positive")
        if min(padding) < 0:
            raise ValueError("pooling padding must be non-negative")
        return cls(window, stride, padding)


def pool_output_size(size, stride, padding):
    return (size + 2 * padding) // stride


def pool(x, spec):
    """Per-time-step max pooling.

    On a spike-wave this keeps the earliest spike in each window; on
    potentials it keeps the largest potential. The output spatial size is
    ``(H + 2*D) // R``; windows running past the padded edge see zeros.
    """
    if not isinstance(spec, PoolSpec):
        spec = PoolSpec.make(spec)
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"input must be 4-D (T, F, H, W), got shape {x.shape}")
    (ph, pw), (rh, rw), (dh, dw) = spec
    h, w = x.shape[2:]
    if ph > h + 2 * dh or pw > w + 2 * dw:
        raise ValueError(f"pooling window {ph}x{pw} larger than padded input")
    ho = pool_output_size(h, rh, dh)
    wo = pool_output_size(w, rw, dw)
    if ho == 0 or wo == 0:
        return np.zeros(x.shape[:2] + (ho, wo), dtype=x.dtype)
    need_h = max(h + 2 * dh, (ho - 1) * rh + ph)
    need_w = max(w + 2 * dw, (wo - 1) * rw + pw)
    padded = np.pad(
        x, ((0, 0), (0, 0), (dh, need_h - h - dh), (dw, need_w - w - dw))
    )
    out = None
    for i in range(ph):
        for j in range(pw):
            v = padded[:, :, i : i + (ho - 1) * rh + 1 : rh, j : j + (wo - 1) * rw + 1 : rw]
            out = v.copy() if out is None else np.maximum(out, v, out=out)
    return out


def pointwise_inhibition(p, s):
    """Keep only the most salient feature at every spatial location.

    The winner at ``(r, c)`` is the feature with the earliest spike, then the
    largest final-step potential, then the lowest index. All other features
    at that location are zeroed in both tensors.
    """
    p = np.asarray(p, dtype=np.float64)
    s = np.asarray(s)
    if p.shape != s.shape or p.ndim != 4:
        raise ValueError(f"shape mismatch: potentials {p.shape} vs spikes {s.shape}")
    count = s.sum(axis=0)
    cand = count == count.max(axis=0)
    last = np.where(cand, p[-1], -np.inf)
    cand &= last == last.max(axis=0)
    keep = np.arange(p.shape[1])[:, None, None] == cand.argmax(axis=0)
    return p * keep, s * keep


def feature_inhibition(x, features):
    """Zero the listed feature maps at all time-steps."""
    x = np.array(x, copy=True)
    features = [int(f) for f in features]
    n = x.shape[1]
    for f in features:
        if not 0 <= f < n:
            raise ValueError(f"feature index {f} out of range [0, {n})")
    x[:, features] = 0
    return x


def get_k_winners(thresholded, k=1, inhibition_radius=0):
    """Select up to ``k`` winners from thresholded potentials.

    Candidates are locations with a nonzero potential at some step. They are
    ranked by earliest nonzero step, then largest final-step potential, then
    feature index and row-major position. After each pick, the winner's
    feature map and a square of Chebyshev radius ``inhibition_radius`` around
    it in every map are excluded.
    """
    p = np.asarray(thresholded, dtype=np.float64)
    if p.ndim != 4:
        raise ValueError(f"potentials must be 4-D (T, F, H, W), got shape {p.shape}")
    if k < 1:
        raise ValueError("k must be at least 1")
    active = p != 0
    alive = active.any(axis=0)
    f_idx, r_idx, c_idx = np.nonzero(alive)
    if f_idx.size == 0:
        return []
    first = active[:, f_idx, r_idx, c_idx].argmax(axis=0)
    final = p[-1, f_idx, r_idx, c_idx]
    # np.nonzero is already row-major over (f, r, c), so a stable sort keeps it
    order = np.lexsort((-final, first))
    f_idx, r_idx, c_idx = f_idx[order], r_idx[order], c_idx[order]
    valid = np.ones(order.size, dtype=bool)
    winners = []
    while len(winners) < k:
        i = int(valid.argmax())
        if not valid[i]:
            break
        f, r, c = int(f_idx[i]), int(r_idx[i]), int(c_idx[i])
        winners.append(Winner(f, r, c))
        valid &= f_idx != f
        valid &= np.maximum(np.abs(r_idx - r), np.abs(c_idx - c)) > inhibition_radius
    return winners
