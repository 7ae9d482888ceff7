"""scikit-learn style wrappers around the encoder and the three-stage network."""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_is_fitted

from .data import ImageTransform
from .encoding import default_dog_bank, generate_inhibition_kernel
from .pipeline import (
    EvalTally,
    SpikingNetwork,
    StageInputs,
    TrainState,
    adaptive_rl_rates,
    derive_seed,
    step_schedule,
    train_rl_epochs,
    train_unsupervised,
    tutorial_config,
)
from .tensor import TimeConfig, latencies_to_spikewave
from .validation import check_images, check_labels


class SpikeEncoder(BaseEstimator, TransformerMixin):
    """DoG filtering, local normalization and rank-order latency coding.

    ``transform`` returns latency grids of shape ``(n, 6, H, W)`` with -1 for
    silent neurons; :meth:`spikewave` expands one grid into its spike-wave.
    Grids are 15x smaller than the spike-waves they encode.
    """

    def __init__(self, t_max=15, kernel_size=7, threshold=50.0, norm_radius=8, inhibition_factors=None):
        self.t_max = t_max
        self.kernel_size = kernel_size
        self.threshold = threshold
        self.norm_radius = norm_radius
        self.inhibition_factors = inhibition_factors

    def _make_transform(self):
        TimeConfig(self.t_max)
        kernel = None
        if self.inhibition_factors is not None:
            kernel = tuple(map(tuple, generate_inhibition_kernel(self.inhibition_factors)))
        bank = default_dog_bank(self.kernel_size, self.kernel_size // 2, self.threshold)
        return ImageTransform(bank, self.norm_radius, self.t_max, inhibition_kernel=kernel)

    def fit(self, X, y=None):
        X = check_images(X)
        self.transform_ = self._make_transform()
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "transform_")
        X = check_images(X)
        if X.shape[1:] != self.image_shape_:
            raise ValueError(f"images are {X.shape[1:]}, encoder was fitted on {self.image_shape_}")
        return np.stack([self.transform_.latencies(img) for img in X])

    def spikewave(self, grid):
        return latencies_to_spikewave(grid, TimeConfig(self.t_max))


class _Waves(Sequence):
    def __init__(self, grids, t_max):
        self.grids = grids
        self.t_max = t_max

    def __len__(self):
        return len(self.grids)

    def __getitem__(self, i):
        return latencies_to_spikewave(self.grids[i], TimeConfig(self.t_max))


class SpikingDigitClassifier(ClassifierMixin, BaseEstimator):
    """Three-stage spiking network trained with STDP and R-STDP.

    S1 and S2 learn without labels for ``layer_epochs`` epochs each; S3 is
    trained for ``rl_epochs`` epochs with reward-modulated STDP. Samples that
    reach no decision are predicted as ``silent_label``.

    Parameters
    ----------
    encoder : SpikeEncoder or None
        Front-end; a default ``SpikeEncoder(t_max=t_max)`` when None.
    features : tuple of int
        Feature maps of S1, S2 and S3. S3's count must be a multiple of the
        number of classes.
    lr_growth : tuple or None
        ``(every, factor, max_rate)`` passed to :func:`step_schedule` for the
        unsupervised layers.
    punish_rates : tuple or None
        ``(a_plus, a_minus)`` of the anti-STDP rule applied on wrong
        decisions. None flips the signs of the reward rule.
    adaptive_rl : bool
        Rescale R-STDP rates each epoch by the previous error and accuracy.
    """

    def __init__(
        self,
        encoder=None,
        features=(30, 250, 200),
        t_max=15,
        layer_epochs=(2, 4),
        rl_epochs=50,
        lr_growth=(500, 2.0, 0.15),
        punish_rates=(-0.004, 0.0005),
        adaptive_rl=True,
        restore_best=True,
        silent_label=-1,
        random_state=0,
    ):
        self.encoder = encoder
        self.features = features
        self.t_max = t_max
        self.layer_epochs = layer_epochs
        self.rl_epochs = rl_epochs
        self.lr_growth = lr_growth
        self.punish_rates = punish_rates
        self.adaptive_rl = adaptive_rl
        self.restore_best = restore_best
        self.silent_label = silent_label
        self.random_state = random_state

    def _encode(self, X):
        return _Waves(self.encoder_.transform(X), self.encoder_.t_max)

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if self.encoder is None:
            self.encoder_ = SpikeEncoder(t_max=self.t_max).fit(X)
        else:
            self.encoder_ = clone(self.encoder).fit(X)
        config = tutorial_config(
            t_max=self.encoder_.t_max,
            features=tuple(self.features),
            n_classes=len(self.classes_),
            in_features=len(self.encoder_.transform_.bank.kernels),
            input_size=X.shape[1:],
        )
        if self.punish_rates is not None:
            s3 = config.layers[2]
            a_plus, a_minus = self.punish_rates
            punish_rule = dataclasses.replace(s3.rule, a_plus=a_plus, a_minus=a_minus)
            config = dataclasses.replace(
                config, layers=config.layers[:2] + (dataclasses.replace(s3, punish_rule=punish_rule),)
            )
        root = 0 if self.random_state is None else int(self.random_state)
        self.network_ = SpikingNetwork(config, random_state=derive_seed(root, "init"))
        self.state_ = TrainState()
        data = self._encode(X)
        for idx, epochs in zip((1, 2), self.layer_epochs):
            hook = step_schedule(*self.lr_growth) if self.lr_growth is not None else None
            stage = StageInputs(self.network_, data, idx) if idx > 1 else None
            rng = np.random.default_rng(derive_seed(root, f"layer{idx}"))
            train_unsupervised(self.network_, data, idx, epochs, rng, hook, self.state_, stage)
        net = self.network_
        hook = adaptive_rl_rates(net.rules[2], net.punish_rule) if self.adaptive_rl else None
        train_rl_epochs(
            net, data, y_idx, self.rl_epochs,
            rng=np.random.default_rng(derive_seed(root, "rl")), rl_hook=hook,
            state=self.state_, stage_inputs=StageInputs(net, data, 3),
            restore_best=self.restore_best,
        )
        return self

    def decisions(self, X):
        """Class indices into ``classes_``, with None for silent samples."""
        check_is_fitted(self, "network_")
        data = self._encode(check_images(X))
        return [self.network_.predict_one(s) for s in data]

    def predict(self, X):
        out = [self.silent_label if d is None else self.classes_[d] for d in self.decisions(X)]
        return np.array(out)

    def evaluate(self, X, y):
        """Correct, wrong and silent counts on labelled data."""
        y = check_labels(y, len(check_images(X)))
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        tally = EvalTally()
        for d, label in zip(self.decisions(X), y.tolist()):
            tally.record(d, index.get(label, -1))
        return tally
