"""Three-stage convolutional spiking network for digit recognition.

The network is ``S1 -> C1 -> S2 -> C2 -> S3 -> C3``: three spiking
convolutions, each fed with a zero-padded copy of the previous pooled
spike-wave. S1 and S2 are trained one at a time with unsupervised STDP; S3
fires with an infinite threshold and is trained with reward-modulated STDP,
its global winner's feature mapped to a class label through a decision map.
"""

from __future__ import annotations

import hashlib
import zlib
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .layers import (
    ConvLayer,
    PoolSpec,
    Winner,
    conv_forward,
    conv_last_step,
    fire,
    fire_infinite,
    get_k_winners,
    pad_spikewave,
    pointwise_inhibition,
    pool,
    threshold_cut,
)
from .plasticity import (
    PlasticityContext,
    StdpRule,
    anti_stdp_rule,
    convergence,
    punish,
    reward,
    stdp_step,
)
from .tensor import TimeConfig, latencies_to_spikewave, spikewave_to_latencies


@dataclass(frozen=True)
class LayerSpec:
    """One spiking convolution plus the pooling that follows it.

    ``threshold=None`` selects the infinite threshold of the decision layer.
    ``punish_rule`` defaults to the sign-flipped ``rule``.
    """

    in_features: int
    out_features: int
    kernel_size: int
    threshold: float | None
    k: int
    inhibition_radius: int
    rule: StdpRule
    pool: PoolSpec | None = None
    punish_rule: StdpRule | None = None
    weight_mean: float = 0.8
    weight_std: float = 0.05

    @property
    def padding(self):
        # preserves the spatial size through the valid convolution
        return self.kernel_size // 2

    @property
    def anti_rule(self):
        return self.punish_rule if self.punish_rule is not None else anti_stdp_rule(self.rule)


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple
    decision_map: tuple
    t_max: int = 15
    input_size: tuple = (28, 28)
    n_classes: int | None = None

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "decision_map", tuple(int(c) for c in self.decision_map))
        object.__setattr__(self, "input_size", tuple(self.input_size))
        TimeConfig(self.t_max)
        if len(layers) != 3:
            raise ValueError(f"expected 3 layer specs, got {len(layers)}")
        for a, b in zip(layers, layers[1:]):
            if a.out_features != b.in_features:
                raise ValueError(
                    f"layer with {a.out_features} outputs feeds one expecting {b.in_features}"
                )
            if a.threshold is None:
                raise ValueError("only the last layer may use an infinite threshold")
        if len(self.decision_map) != layers[-1].out_features:
            raise ValueError(
                f"decision map has {len(self.decision_map)} entries for "
                f"{layers[-1].out_features} decision features"
            )
        n = self.n_classes if self.n_classes is not None else max(self.decision_map) + 1
        missing = set(range(n)) - set(self.decision_map)
        if missing:
            raise ValueError(f"decision map never predicts classes {sorted(missing)}")
        object.__setattr__(self, "n_classes", n)


def tutorial_config(
    t_max=15, features=(30, 250, 200), n_classes=10, in_features=6, input_size=(28, 28)
):
    """Default geometry and learning parameters for 28x28 digit images.

    Thresholds, winner counts, inhibition radii and learning rates are
    choices of this package tuned for its own DoG front-end.
    """
    f1, f2, f3 = features
    if f3 % n_classes:
        raise ValueError("decision features must split evenly across classes")
    per_class = f3 // n_classes
    layers = (
        LayerSpec(
            in_features, f1, 5, threshold=15.0, k=5, inhibition_radius=3,
            rule=StdpRule(0.004, -0.003), pool=PoolSpec.make(2, 2, 1),
        ),
        LayerSpec(
            f1, f2, 3, threshold=10.0, k=8, inhibition_radius=1,
            rule=StdpRule(0.004, -0.003), pool=PoolSpec.make(3, 3, 1),
        ),
        LayerSpec(
            f2, f3, 5, threshold=None, k=1, inhibition_radius=0,
            rule=StdpRule(0.004, -0.003, 0.2, 0.8, use_stabilizer=False),
        ),
    )
    decision_map = tuple(f // per_class for f in range(f3))
    return NetworkConfig(layers, decision_map, t_max, tuple(input_size), n_classes)


class SpikingNetwork:
    """Weights and forward passes of a three-stage network.

    ``random_state`` seeds the normal weight initialization. ``rules`` holds
    the current learning rule of each layer; schedules replace entries.
    """

    def __init__(self, config, random_state=None):
        self.config = config
        rng = np.random.default_rng(random_state)
        self.layers = [
            ConvLayer(
                s.in_features, s.out_features, s.kernel_size,
                weight_mean=s.weight_mean, weight_std=s.weight_std, rng=rng,
            )
            for s in config.layers
        ]
        self.rules = [s.rule for s in config.layers]
        self.punish_rule = config.layers[-1].anti_rule
        self.steps = [0, 0, 0]

    def check_input(self, s):
        s = np.asarray(s)
        expected = (self.config.t_max, self.config.layers[0].in_features) + self.config.input_size
        if s.shape != expected:
            raise ValueError(f"input shape {s.shape} does not match network geometry {expected}")
        return s

    def _pad(self, x, idx):
        p = self.config.layers[idx - 1].padding
        return pad_spikewave(x, (p, p, p, p))

    def layer_input(self, s, layer_idx):
        """Padded spike-wave entering convolution ``layer_idx`` (1-based).

        Lower layers run in test mode: fire at their threshold, then pool.
        """
        if layer_idx not in (1, 2, 3):
            raise ValueError(f"layer index must be 1, 2 or 3, got {layer_idx}")
        x = self.check_input(s)
        for i in range(layer_idx - 1):
            spec = self.config.layers[i]
            p = conv_forward(self.layers[i], self._pad(x, i + 1))
            x = pool(fire(p, spec.threshold), spec.pool)
        return self._pad(x, layer_idx)

    def train_context(self, layer_idx, x):
        """Thresholded output, spikes and winners of one layer for input ``x``."""
        spec = self.config.layers[layer_idx - 1]
        layer = self.layers[layer_idx - 1]
        if spec.threshold is None:
            last = conv_last_step(layer, x)
            p = np.zeros((x.shape[0],) + last.shape)
            p[-1] = last
            spikes, p = fire_infinite(p)
        else:
            raw = conv_forward(layer, x)
            p, spikes = pointwise_inhibition(
                threshold_cut(raw, spec.threshold), fire(raw, spec.threshold)
            )
        winners = get_k_winners(p, spec.k, spec.inhibition_radius)
        return PlasticityContext(x, p, spikes, winners)

    def forward_train(self, s, max_layer):
        """Run up to ``max_layer`` and return that layer's plasticity context."""
        return self.train_context(max_layer, self.layer_input(s, max_layer))

    def decide(self, winners):
        if not winners:
            return None
        return self.config.decision_map[winners[0].feature]

    def decide_from_input(self, x):
        """Global winner of the decision layer for its padded input ``x``."""
        last = conv_last_step(self.layers[2], x)
        winners = get_k_winners(last[None], 1, 0)
        if not winners:
            return None, None
        return self.decide(winners), winners[0]

    def forward_test(self, s):
        """Class decision (or None when silent) and the global winner."""
        return self.decide_from_input(self.layer_input(s, 3))

    def predict_one(self, s):
        return self.forward_test(s)[0]

    def weights_checksum(self):
        h = hashlib.sha256()
        for layer in self.layers:
            h.update(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class EvalTally:
    correct: int = 0
    wrong: int = 0
    silent: int = 0

    def record(self, decision, label):
        if decision is None:
            self.silent += 1
            return "silent"
        if decision == label:
            self.correct += 1
            return "correct"
        self.wrong += 1
        return "wrong"

    @property
    def total(self):
        return self.correct + self.wrong + self.silent

    @property
    def accuracy(self):
        return self.correct / self.total if self.total else 0.0

    @property
    def silent_rate(self):
        return self.silent / self.total if self.total else 0.0

    def __add__(self, other):
        return EvalTally(
            self.correct + other.correct, self.wrong + other.wrong, self.silent + other.silent
        )

    def as_dict(self):
        return {
            "correct": self.correct,
            "wrong": self.wrong,
            "silent": self.silent,
            "total": self.total,
            "accuracy": self.accuracy,
            "silent_rate": self.silent_rate,
        }


@dataclass
class TrainState:
    epochs: dict = field(default_factory=lambda: {"layer1": 0, "layer2": 0, "rl": 0})
    convergence: dict = field(default_factory=lambda: {"layer1": [], "layer2": []})
    rl_history: list = field(default_factory=list)
    best_accuracy: float | None = None
    best_epoch: int | None = None
    best_weights: np.ndarray | None = None


class StageInputs(Sequence):
    """Precomputed padded inputs of one layer for a whole dataset.

    Valid only while the layers below stay frozen. Inputs are kept as
    latency grids and expanded on access.
    """

    def __init__(self, net, data, layer_idx):
        self.layer_idx = layer_idx
        self.t_max = net.config.t_max
        self._lat = [
            spikewave_to_latencies(net.layer_input(s, layer_idx)).astype(np.int16) for s in data
        ]

    def __len__(self):
        return len(self._lat)

    def __getitem__(self, i):
        return latencies_to_spikewave(self._lat[i], TimeConfig(self.t_max))


def derive_seed(root, phase):
    """Per-phase 64-bit seed: ``SeedSequence([root, crc32(phase)])``'s first word."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(phase.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _order(n, rng):
    return rng.permutation(n) if rng is not None else np.arange(n)


def step_schedule(every, factor, max_rate):
    """Learning-rate hook: multiply both rates by ``factor`` every ``every`` samples.

    Growth stops once ``|a_plus|`` reaches ``max_rate``.
    """

    def hook(step, rule):
        if step == 0 or step % every:
            return rule
        f = min(factor, max_rate / abs(rule.a_plus)) if rule.a_plus else factor
        return rule.scaled(f) if f > 1 else rule

    return hook


def train_unsupervised(
    net, data, layer_idx, epochs, rng=None, lr_hook=None, state=None, stage_inputs=None
):
    """Layer-wise STDP on one layer; returns the convergence metric per epoch.

    ``lr_hook(step, rule) -> rule`` is consulted before every sample with the
    number of samples this layer has already learned from. ``stage_inputs``
    may hold the precomputed inputs of the layer, valid because lower layers
    are frozen.
    """
    if layer_idx not in (1, 2):
        raise ValueError("unsupervised training applies to layers 1 and 2")
    j = layer_idx - 1
    layer = net.layers[j]
    history = []
    for _ in range(epochs):
        for i in _order(len(data), rng):
            if lr_hook is not None:
                net.rules[j] = lr_hook(net.steps[j], net.rules[j])
            if stage_inputs is not None:
                ctx = net.train_context(layer_idx, stage_inputs[i])
            else:
                ctx = net.forward_train(data[i], layer_idx)
            stdp_step(layer, net.rules[j], ctx)
            net.steps[j] += 1
        history.append(convergence(layer.weight))
        if state is not None:
            state.epochs[f"layer{layer_idx}"] += 1
            state.convergence[f"layer{layer_idx}"].append(history[-1])
    return history


def _check_labels(data, labels):
    if len(data) != len(labels):
        raise ValueError(f"{len(data)} samples but {len(labels)} labels")


def train_rl(net, data, labels, rng=None, stage_inputs=None, trace=None):
    """One R-STDP epoch over ``data``; returns the running tally.

    Correct decisions call :func:`reward`, wrong ones :func:`punish`, silent
    samples leave the weights alone. ``stage_inputs`` may hold the
    precomputed decision-layer inputs of ``data``. When ``trace`` is a list,
    ``(index, decision, label, outcome)`` tuples are appended to it.
    """
    _check_labels(data, labels)
    layer = net.layers[2]
    tally = EvalTally()
    for i in _order(len(data), rng):
        x = stage_inputs[i] if stage_inputs is not None else net.layer_input(data[i], 3)
        ctx = net.train_context(3, x)
        decision = net.decide(ctx.winners)
        outcome = tally.record(decision, int(labels[i]))
        if outcome == "correct":
            reward(layer, net.rules[2], ctx)
        elif outcome == "wrong":
            punish(layer, net.punish_rule, ctx)
        if trace is not None:
            trace.append((int(i), decision, int(labels[i]), outcome))
    return tally


def evaluate(net, data, labels, stage_inputs=None):
    """Tally decisions against labels without touching any weight."""
    _check_labels(data, labels)
    tally = EvalTally()
    for i in range(len(data)):
        x = stage_inputs[i] if stage_inputs is not None else net.layer_input(data[i], 3)
        decision, _ = net.decide_from_input(x)
        tally.record(decision, int(labels[i]))
    return tally


def adaptive_rl_rates(reward_rule, punish_rule):
    """R-STDP hook scaling rewards by the last error rate and punishments by
    the last accuracy, so learning slows where it is already succeeding."""

    def hook(epoch, tally):
        if tally is None or tally.total == 0:
            return reward_rule, punish_rule
        err = (tally.wrong + tally.silent) / tally.total
        return reward_rule.scaled(err), punish_rule.scaled(tally.accuracy)

    return hook


def train_rl_epochs(
    net, data, labels, epochs, rng=None, rl_hook=None, state=None, stage_inputs=None,
    restore_best=True, on_epoch=None,
):
    """Several R-STDP epochs with best-accuracy checkpointing.

    The decision-layer weights of the epoch with the highest training
    accuracy are snapshotted into ``state`` and restored at the end when
    ``restore_best`` is set.
    """
    state = state if state is not None else TrainState()
    last = None
    for epoch in range(epochs):
        if rl_hook is not None:
            net.rules[2], net.punish_rule = rl_hook(epoch, last)
        last = train_rl(net, data, labels, rng=rng, stage_inputs=stage_inputs)
        state.epochs["rl"] += 1
        state.rl_history.append(last.as_dict())
        if state.best_accuracy is None or last.accuracy > state.best_accuracy:
            state.best_accuracy = last.accuracy
            state.best_epoch = state.epochs["rl"]
            state.best_weights = net.layers[2].weight.copy()
        if on_epoch is not None:
            on_epoch(state.epochs["rl"], last)
    if restore_best and state.best_weights is not None:
        net.layers[2].set_weight(state.best_weights)
    return state


__all__ = [
    "EvalTally",
    "LayerSpec",
    "NetworkConfig",
    "SpikingNetwork",
    "StageInputs",
    "TrainState",
    "Winner",
    "adaptive_rl_rates",
    "derive_seed",
    "evaluate",
    "step_schedule",
    "train_rl",
    "train_rl_epochs",
    "train_unsupervised",
    "tutorial_config",
]
