"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numpy as np

from .tensor import MalformedSpikeWaveError, validate


def check_images(X, name="X"):
    """Return ``X`` as a float64 ``(n, H, W)`` stack of finite grayscale images."""
    X = np.asarray(X)
    if X.dtype == object or not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got dtype {X.dtype}")
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_samples, height, width), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} has no samples")
    X = X.astype(np.float64, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinity")
    return X


def check_labels(y, n_samples):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if len(y) != n_samples:
        raise ValueError(f"{n_samples} samples but {len(y)} labels")
    return y


def check_spikewave(s):
    s = np.asarray(s)
    if not validate(s):
        raise MalformedSpikeWaveError("input is not a binary, accumulative (T, F, H, W) spike-wave")
    return s
