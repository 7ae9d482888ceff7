"""STDP and reward-modulated STDP for single-spike convolutional layers.

Only the sign of the pre/post timing difference matters: a synapse whose
input fired no later than the winning neuron is potentiated by ``a_plus``,
every other synapse in the winner's receptive field is changed by
``a_minus``. With the stabilizer on, the change is scaled by
``(W - lower) * (upper - W)`` so weights approach the bounds softly;
without it, weights are clipped to the bounds after the update.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StdpRule:
    a_plus: float
    a_minus: float
    lower_bound: float = 0.0
    upper_bound: float = 1.0
    use_stabilizer: bool = True

    def __post_init__(self):
        if not self.lower_bound < self.upper_bound:
            raise ValueError(
                f"lower_bound {self.lower_bound} must be below upper_bound {self.upper_bound}"
            )

    def scaled(self, factor_plus, factor_minus=None):
        """Copy with the learning rates multiplied by the given factors."""
        if factor_minus is None:
            factor_minus = factor_plus
        return dataclasses.replace(
            self, a_plus=self.a_plus * factor_plus, a_minus=self.a_minus * factor_minus
        )


def anti_stdp_rule(rule):
    """The same rule with both learning-rate signs flipped."""
    return dataclasses.replace(rule, a_plus=-rule.a_plus, a_minus=-rule.a_minus)


@dataclass
class PlasticityContext:
    """Everything one plasticity call needs from a forward pass.

    ``input_spikes`` is the (already padded) input of the convolution;
    ``potentials`` and ``output_spikes`` are its thresholded output.
    """

    input_spikes: np.ndarray
    potentials: np.ndarray
    output_spikes: np.ndarray
    winners: list = field(default_factory=list)

    def __post_init__(self):
        if self.potentials.shape != self.output_spikes.shape:
            raise ValueError(
                f"potentials {self.potentials.shape} and output spikes "
                f"{self.output_spikes.shape} differ in shape"
            )
        if self.input_spikes.ndim != 4 or self.output_spikes.ndim != 4:
            raise ValueError("context tensors must be 4-D (T, F, H, W)")
        if self.input_spikes.shape[0] != self.output_spikes.shape[0]:
            raise ValueError("input and output disagree on the number of time-steps")


@dataclass
class WeightUpdate:
    """Applied change of one plasticity call.

    ``delta[i]`` is the change of the kernel of output feature ``features[i]``;
    every other kernel is untouched.
    """

    delta: np.ndarray
    features: tuple = ()
    potentiated: int = 0
    depressed: int = 0

    @property
    def total(self):
        return float(self.delta.sum())

    def dense(self, shape):
        """Full-size delta array for a weight tensor of ``shape``."""
        out = np.zeros(shape)
        out[list(self.features)] = self.delta
        return out


def stdp_step(layer, rule, ctx):
    """Apply one STDP update to ``layer.weight`` for the winners in ``ctx``.

    Deltas of all winners are computed from the pre-update weights. A
    presynaptic neuron that never fired counts as firing after the winner. A
    winner without an output spike (selected from final-step potentials) is
    treated as firing at the last time-step. If several winners share a
    feature, only the first one updates it.
    """
    weight = layer.weight
    f_out, f_in, kh, kw = weight.shape
    h_out = ctx.input_spikes.shape[2] - kh + 1
    w_out = ctx.input_spikes.shape[3] - kw + 1
    if ctx.output_spikes.shape[1:] != (f_out, h_out, w_out):
        raise ValueError(
            f"context output shape {ctx.output_spikes.shape[1:]} does not match "
            f"layer geometry {(f_out, h_out, w_out)}"
        )

    features = []
    rows = []
    potentiated = depressed = 0
    if ctx.winners:
        in_count = ctx.input_spikes.sum(axis=0)
        out_count = ctx.output_spikes.sum(axis=0)
    for f, r, c in ctx.winners:
        if not (0 <= f < f_out and 0 <= r < h_out and 0 <= c < w_out):
            raise ValueError(f"winner {(f, r, c)} outside output grid {(f_out, h_out, w_out)}")
        if f in features:
            continue
        post = out_count[f, r, c] or 1
        causal = in_count[:, r : r + kh, c : c + kw] >= post
        w = weight[f]
        d = np.where(causal, rule.a_plus, rule.a_minus)
        if rule.use_stabilizer:
            d = d * (w - rule.lower_bound) * (rule.upper_bound - w)
        row = w + d
        if not rule.use_stabilizer:
            row = np.clip(row, rule.lower_bound, rule.upper_bound)
        features.append(int(f))
        rows.append(row)
        n = int(causal.sum())
        potentiated += n
        depressed += causal.size - n
    if not features:
        return WeightUpdate(np.zeros((0, f_in, kh, kw)))
    old = weight[features]
    new = np.stack(rows)
    weight[features] = new
    return WeightUpdate(new - old, tuple(features), potentiated, depressed)


def reward(layer, rule, ctx):
    """Reward branch of R-STDP: plain STDP with ``rule``."""
    return stdp_step(layer, rule, ctx)


def punish(layer, anti_rule, ctx):
    """Punish branch of R-STDP: STDP with the sign-flipped ``anti_rule``."""
    return stdp_step(layer, anti_rule, ctx)


def convergence(weight, lower_bound=0.0, upper_bound=1.0):
    """Mean of ``(W - lower) * (upper - W)``; near zero once weights saturate."""
    w = np.asarray(weight, dtype=np.float64)
    return float(np.mean((w - lower_bound) * (upper_bound - w)))
