"""Spike-wave and latency representations.

A spike-wave is a ``(T, F, H, W)`` float array of zeros and ones in which a
neuron's entry switches to 1 at its first spike and stays there for the rest
of the stimulus. A latency grid is the compact ``(F, H, W)`` integer dual that
holds the first-spike bin of each neuron, or :data:`NO_SPIKE`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Out-of-band latency for a neuron that never fires.
NO_SPIKE = -1

SPIKE_DTYPE = np.float64
LATENCY_DTYPE = np.int64


class InvalidLatencyError(ValueError):
    """A latency grid holds a value outside ``[0, t_max)`` other than NO_SPIKE."""


class MalformedSpikeWaveError(ValueError):
    """A spike-wave is not binary or not accumulative along time."""


@dataclass(frozen=True)
class TimeConfig:
    t_max: int

    def __post_init__(self):
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ValueError(f"t_max must be a positive integer, got {self.t_max!r}")


def latencies_to_spikewave(lat, cfg):
    """Expand a latency grid into an accumulative spike-wave.

    ``S[t, f, r, c]`` is 0 while ``t`` is before the neuron's latency and 1
    from then on. NO_SPIKE neurons stay 0 at every step.

    Raises
    ------
    InvalidLatencyError
        If any latency is ``>= cfg.t_max`` or negative and not NO_SPIKE.
    """
    t_max = cfg.t_max if isinstance(cfg, TimeConfig) else TimeConfig(cfg).t_max
    lat = np.asarray(lat)
    if lat.ndim != 3:
        raise ValueError(f"latency grid must be 3-D (F, H, W), got shape {lat.shape}")
    if not np.issubdtype(lat.dtype, np.integer):
        if not np.all(np.equal(np.mod(lat, 1), 0)):
            raise InvalidLatencyError("latencies must be integers")
        lat = lat.astype(LATENCY_DTYPE)
    spiking = lat != NO_SPIKE
    bad = spiking & ((lat < 0) | (lat >= t_max))
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise InvalidLatencyError(
            f"latency {int(lat[idx])} at {idx} outside [0, {t_max}) and not NO_SPIKE"
        )
    steps = np.arange(t_max).reshape(-1, 1, 1, 1)
    return ((steps >= lat) & spiking).astype(SPIKE_DTYPE)


def validate(s):
    """True iff ``s`` is a 4-D binary array that never drops from 1 to 0 in time."""
    s = np.asarray(s)
    if s.ndim != 4 or s.shape[0] < 1:
        return False
    binary = (s == 0) | (s == 1)
    if not binary.all():
        return False
    return bool(np.all(s[1:] >= s[:-1]))


def spikewave_to_latencies(s):
    """First-spike bin of every neuron; NO_SPIKE for all-zero columns.

    Raises
    ------
    MalformedSpikeWaveError
        If ``s`` fails :func:`validate`.
    """
    s = np.asarray(s)
    if not validate(s):
        raise MalformedSpikeWaveError(
            "spike-wave must be 4-D, binary and non-decreasing along time"
        )
    count = s.sum(axis=0).astype(LATENCY_DTYPE)
    lat = s.shape[0] - count
    lat[count == 0] = NO_SPIKE
    return lat


def spike_counts(s):
    """Number of steps each neuron spends in the spiking state.

    Larger means earlier; 0 means the neuron never fired. This is the cheap
    form of latency used inside hot loops where validation is unwanted.
    """
    return np.asarray(s).sum(axis=0)
