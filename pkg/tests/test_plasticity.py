import numpy as np
import pytest

from onespike.layers import ConvLayer, Winner
from onespike.plasticity import (
    PlasticityContext,
    StdpRule,
    anti_stdp_rule,
    convergence,
    punish,
    reward,
    stdp_step,
)
from onespike.tensor import NO_SPIKE, latencies_to_spikewave


def single_synapse(w, in_lat, out_lat, t_max=4):
    layer = ConvLayer(1, 1, 1)
    layer.set_weight(np.full((1, 1, 1, 1), float(w)))
    s_in = latencies_to_spikewave(np.array([[[in_lat]]]), t_max)
    s_out = latencies_to_spikewave(np.array([[[out_lat]]]), t_max)
    return layer, PlasticityContext(s_in, s_out * 5.0, s_out, [Winner(0, 0, 0)])


def stdp_by_hand(weight, rule, s_in, s_out, winners):
    # literal per-synapse evaluation from latencies, batched on the old weights
    t_max = s_in.shape[0]
    lat_in = [[[int(t_max - s_in[:, f, r, c].sum()) if s_in[:, f, r, c].any() else None
                for c in range(s_in.shape[3])] for r in range(s_in.shape[2])] for f in range(s_in.shape[1])]
    new = weight.copy()
    done = set()
    f_out, f_in, kh, kw = weight.shape
    for f, r, c in winners:
        if f in done:
            continue
        done.add(f)
        post = t_max - s_out[:, f, r, c].sum() if s_out[:, f, r, c].any() else t_max - 1
        for i in range(f_in):
            for a in range(kh):
                for b in range(kw):
                    pre = lat_in[i][r + a][c + b]
                    w = weight[f, i, a, b]
                    rate = rule.a_plus if pre is not None and pre <= post else rule.a_minus
                    stab = (w - rule.lower_bound) * (rule.upper_bound - w) if rule.use_stabilizer else 1.0
                    v = w + rate * stab
                    if not rule.use_stabilizer:
                        v = min(max(v, rule.lower_bound), rule.upper_bound)
                    new[f, i, a, b] = v
    return new


def random_context(rng, layer, t_max=5, h=7, n_winners=3):
    lat = rng.integers(0, t_max, size=(layer.in_features, h, h))
    lat[rng.random(lat.shape) < 0.4] = NO_SPIKE
    s_in = latencies_to_spikewave(lat, t_max)
    kh, kw = layer.kernel_size
    shape = (layer.out_features, h - kh + 1, h - kw + 1)
    out_lat = rng.integers(0, t_max, size=shape)
    s_out = latencies_to_spikewave(out_lat, t_max)
    winners = [
        Winner(int(rng.integers(shape[0])), int(rng.integers(shape[1])), int(rng.integers(shape[2])))
        for _ in range(n_winners)
    ]
    return PlasticityContext(s_in, s_out * 3.0, s_out, winners)


def test_hand_case_quarter():
    layer, ctx = single_synapse(0.5, 0, 2)
    up = stdp_step(layer, StdpRule(0.1, -0.1), ctx)
    assert abs(up.total - 0.025) <= 1e-12
    assert layer.weight.item() == pytest.approx(0.525, abs=1e-12)


def test_same_step_counts_as_causal():
    layer, ctx = single_synapse(0.5, 2, 2)
    assert stdp_step(layer, StdpRule(0.1, -0.2), ctx).total > 0


def test_late_and_silent_inputs_depress():
    for pre in (3, NO_SPIKE):
        layer, ctx = single_synapse(0.5, pre, 2)
        assert stdp_step(layer, StdpRule(0.1, -0.2), ctx).total == pytest.approx(-0.05)


@pytest.mark.parametrize("w", [0.0, 1.0])
def test_zero_change_at_bounds(w):
    for pre in (0, 3):
        layer, ctx = single_synapse(w, pre, 1)
        assert stdp_step(layer, StdpRule(0.3, -0.3), ctx).total == 0.0
        assert layer.weight.item() == w


def test_no_stabilizer_exact_and_clamped():
    rule = StdpRule(0.004, -0.003, use_stabilizer=False)
    layer, ctx = single_synapse(0.5, 0, 1)
    stdp_step(layer, rule, ctx)
    assert layer.weight.item() == 0.5 + 0.004
    layer, ctx = single_synapse(0.998, 0, 1)
    stdp_step(layer, rule, ctx)
    assert layer.weight.item() == 1.0


def test_punish_clamps_at_lower_bound():
    anti = anti_stdp_rule(StdpRule(0.004, -0.003, 0.2, 0.8, use_stabilizer=False))
    layer, ctx = single_synapse(0.201, 0, 1)
    punish(layer, anti, ctx)
    assert layer.weight.item() == 0.2


def test_anti_rule():
    r = StdpRule(0.004, -0.003, 0.2, 0.8, use_stabilizer=False)
    a = anti_stdp_rule(r)
    assert (a.a_plus, a.a_minus) == (-0.004, 0.003)
    assert (a.lower_bound, a.upper_bound, a.use_stabilizer) == (0.2, 0.8, False)
    assert anti_stdp_rule(a) == r


def test_anti_rule_flips_hand_case():
    layer, ctx = single_synapse(0.5, 0, 2)
    assert stdp_step(layer, anti_stdp_rule(StdpRule(0.1, -0.1)), ctx).total == pytest.approx(-0.025, abs=1e-12)


def test_rule_bounds_validated():
    with pytest.raises(ValueError):
        StdpRule(0.1, -0.1, 1.0, 1.0)


def test_matches_literal_evaluation():
    rng = np.random.default_rng(0)
    for stab in (True, False):
        rule = StdpRule(0.05, -0.04, 0.0, 1.0, use_stabilizer=stab)
        for _ in range(20):
            layer = ConvLayer(3, 4, 3, rng=rng)
            layer.set_weight(rng.random(layer.weight.shape))
            ctx = random_context(rng, layer)
            expected = stdp_by_hand(layer.weight.copy(), rule, ctx.input_spikes, ctx.output_spikes, ctx.winners)
            stdp_step(layer, rule, ctx)
            np.testing.assert_allclose(layer.weight, expected, atol=1e-15)


def test_infinite_threshold_winner_uses_last_step():
    layer = ConvLayer(1, 1, 1)
    layer.set_weight(np.full((1, 1, 1, 1), 0.5))
    t_max = 4
    s_in = latencies_to_spikewave(np.array([[[t_max - 1]]]), t_max)
    no_spikes = np.zeros((t_max, 1, 1, 1))
    ctx = PlasticityContext(s_in, no_spikes, no_spikes, [Winner(0, 0, 0)])
    assert stdp_step(layer, StdpRule(0.1, -0.1), ctx).total > 0


def test_only_winner_features_change():
    rng = np.random.default_rng(1)
    layer = ConvLayer(2, 5, 3, rng=rng)
    before = layer.weight.copy()
    ctx = random_context(rng, layer, n_winners=2)
    up = stdp_step(layer, StdpRule(0.1, -0.1), ctx)
    touched = {w.feature for w in ctx.winners}
    assert set(up.features) == touched
    for f in range(5):
        if f not in touched:
            np.testing.assert_array_equal(layer.weight[f], before[f])
    np.testing.assert_allclose(layer.weight - before, up.dense(before.shape), atol=1e-15)


def test_first_winner_per_feature_wins():
    rng = np.random.default_rng(2)
    layer = ConvLayer(1, 1, 2, rng=rng)
    ctx = random_context(rng, layer, n_winners=1)
    ctx2 = PlasticityContext(ctx.input_spikes, ctx.potentials, ctx.output_spikes,
                             ctx.winners + [Winner(0, 4, 4)])
    a = ConvLayer(1, 1, 2)
    a.set_weight(layer.weight)
    stdp_step(layer, StdpRule(0.1, -0.1), ctx)
    stdp_step(a, StdpRule(0.1, -0.1), ctx2)
    np.testing.assert_array_equal(layer.weight, a.weight)


def test_winner_out_of_bounds():
    layer = ConvLayer(1, 1, 3)
    s = np.zeros((2, 1, 5, 5))
    out = np.zeros((2, 1, 3, 3))
    with pytest.raises(ValueError):
        stdp_step(layer, StdpRule(0.1, -0.1), PlasticityContext(s, out, out, [Winner(0, 3, 0)]))


def test_geometry_mismatch():
    layer = ConvLayer(1, 2, 3)
    s = np.zeros((2, 1, 5, 5))
    out = np.zeros((2, 2, 2, 2))
    with pytest.raises(ValueError):
        stdp_step(layer, StdpRule(0.1, -0.1), PlasticityContext(s, out, out, []))


def test_soft_bound_containment():
    rng = np.random.default_rng(3)
    lb, ub = 0.2, 0.8
    limit = 1.0 / (ub - lb)
    for _ in range(10_000):
        w = rng.uniform(lb, ub)
        if rng.random() < 0.1:
            w = lb if rng.random() < 0.5 else ub
        rule = StdpRule(rng.uniform(-limit, limit), rng.uniform(-limit, limit), lb, ub)
        layer, ctx = single_synapse(w, int(rng.integers(-1, 4)), int(rng.integers(0, 4)))
        stdp_step(layer, rule, ctx)
        assert lb <= layer.weight.item() <= ub


class TestRewardPunish:
    def setup_method(self):
        rng = np.random.default_rng(4)
        self.layer = ConvLayer(2, 4, 3, rng=rng)
        self.layer.set_weight(rng.uniform(0.3, 0.7, size=self.layer.weight.shape))
        self.ctx = random_context(rng, self.layer, n_winners=2)
        self.rule = StdpRule(0.004, -0.003, 0.2, 0.8, use_stabilizer=False)

    def copy_layer(self):
        other = ConvLayer(2, 4, 3)
        other.set_weight(self.layer.weight)
        return other

    def test_reward_is_stdp(self):
        other = self.copy_layer()
        reward(self.layer, self.rule, self.ctx)
        stdp_step(other, self.rule, self.ctx)
        np.testing.assert_array_equal(self.layer.weight, other.weight)

    def test_reward_then_punish_restores(self):
        start = self.layer.weight.copy()
        reward(self.layer, self.rule, self.ctx)
        punish(self.layer, anti_stdp_rule(self.rule), self.ctx)
        np.testing.assert_allclose(self.layer.weight, start, atol=1e-15)

    def test_punish_is_negated_stdp(self):
        other = self.copy_layer()
        a = reward(other, self.rule, self.ctx)
        b = punish(self.layer, anti_stdp_rule(self.rule), self.ctx)
        np.testing.assert_allclose(b.delta, -a.delta, atol=1e-15)

    def test_empty_winners(self):
        ctx = PlasticityContext(self.ctx.input_spikes, self.ctx.potentials, self.ctx.output_spikes, [])
        start = self.layer.weight.copy()
        assert reward(self.layer, self.rule, ctx).total == 0
        assert punish(self.layer, anti_stdp_rule(self.rule), ctx).total == 0
        np.testing.assert_array_equal(self.layer.weight, start)


def test_convergence_metric():
    assert convergence(np.array([0.0, 1.0])) == 0.0
    assert convergence(np.full(4, 0.5)) == 0.25
    assert convergence(np.array([0.2, 0.8]), 0.2, 0.8) == 0.0
