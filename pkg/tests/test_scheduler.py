import numpy as np
import pytest

from src.bridge import ann_to_snn, init_ann
from src.dynamics import network_forward
from src.errors import ConfigError, DimensionError
from src.models import AlphaPolicy, AnnLayer
from src.scheduler import (
    LayerStats,
    SchedulerConfig,
    adapt_tmax,
    adapt_windows,
    chain_windows,
    compute_tmax_delta,
    forward_with_adaptation,
    gather_layer_stats,
    init_windows_and_thresholds,
    rechain,
    tighten_for_inference,
)


def _fresh_network(sizes, rng, policy=AlphaPolicy.LINEAR):
    ann = init_ann(sizes, rng, zero_row_sum=policy == AlphaPolicy.CONSTANT)
    windows = chain_windows([1.0] * (len(sizes) - 2), 1.0)
    return ann_to_snn(ann, policy, windows, 1.0)


def _thresholds_consistent(network):
    return all(
        np.allclose(layer.theta_tilde, layer.slope() * layer.width / network.config.tau_c)
        for layer in network.layers
    )


class TestSchedulerConfig:
    def test_defaults(self):
        config = SchedulerConfig()
        assert (config.zeta, config.gamma, config.B0) == (0.5, 10.0, 1.0)

    @pytest.mark.parametrize(
        "kwargs", [{"zeta": -0.1}, {"gamma": 1.0}, {"B0": 2.0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SchedulerConfig(**kwargs)


class TestInitWindows:
    def test_single_layer_substitution(self):
        """max V(t_min) = 2, zeta = 0.5, t_min = 1 -> t_max = 4, θ̃ = 3."""
        ann = [AnnLayer(np.array([[2.0]]), np.zeros(1)), AnnLayer(np.ones((1, 1)), np.zeros(1))]
        network = ann_to_snn(ann, AlphaPolicy.LINEAR, [(1.0, 2.0)], 1.0)
        init_windows_and_thresholds(network, np.array([[1.0]]), SchedulerConfig())
        layer = network.layers[0]
        assert (layer.t_min, layer.t_max) == (1.0, 4.0)
        assert layer.theta_tilde[0] == pytest.approx(3.0)
        assert network.latency == 4.0

    @pytest.mark.parametrize("policy", [AlphaPolicy.LINEAR, AlphaPolicy.CONSTANT])
    def test_calibration_batch_not_saturated(self, rng, batch, policy):
        network = _fresh_network([6, 8, 8, 8, 3], rng, policy)
        init_windows_and_thresholds(network, batch, SchedulerConfig())
        trace = network_forward(batch, network)
        assert network.check_chain()
        assert _thresholds_consistent(network)
        assert trace.saturated_count == 0
        for lt in trace.layers:
            assert lt.output.mask.any()

    def test_zero_margin_spans_max_potential(self, rng, batch):
        network = _fresh_network([6, 8, 3], rng)
        init_windows_and_thresholds(network, batch, SchedulerConfig(zeta=0.0))
        layer = network.layers[0]
        trace = network_forward(batch, network)
        v_max = ((layer.t_min - trace.encoded.times) @ layer.W.T).max()
        assert layer.width == pytest.approx(v_max)
        assert trace.layers[0].output.times.min() == pytest.approx(layer.t_min, abs=1e-12)

    def test_dead_layer_gets_minimum_width(self, batch, caplog):
        ann = [AnnLayer(-np.ones((2, 6)), np.zeros(2)), AnnLayer(np.ones((1, 2)), np.zeros(1))]
        network = ann_to_snn(ann, AlphaPolicy.LINEAR, [(1.0, 2.0)], 1.0)
        init_windows_and_thresholds(network, batch, SchedulerConfig(min_width=0.5))
        assert network.layers[0].width == 0.5
        assert "[SCHEDULER_WARN]" in caplog.text


class TestAdaptTmax:
    def test_expansion_rule(self):
        stats = LayerStats(min_spike_time=1.2, max_potential_at_t_min=0.0, t_min=1.0, t_max=2.0)
        delta = compute_tmax_delta(stats, 1.0, SchedulerConfig(gamma=2.0))
        assert delta == pytest.approx(0.6)

    def test_all_forced_gives_zero(self):
        stats = LayerStats(min_spike_time=2.0, max_potential_at_t_min=0.0, t_min=1.0, t_max=2.0)
        assert compute_tmax_delta(stats, 1.0, SchedulerConfig()) == 0.0

    def test_wide_window_is_never_shrunk(self):
        stats = LayerStats(min_spike_time=1.99, max_potential_at_t_min=0.0, t_min=1.0, t_max=2.0)
        assert compute_tmax_delta(stats, 1.0, SchedulerConfig(gamma=2.0)) == 0.0

    def test_shift_propagates_downstream(self, rng):
        network = _fresh_network([3, 2, 2, 2], rng)
        stats = LayerStats(min_spike_time=1.2, max_potential_at_t_min=0.0, t_min=1.0, t_max=2.0)
        delta = adapt_tmax(network, 0, stats, SchedulerConfig(gamma=2.0))
        assert delta == pytest.approx(0.6)
        assert np.allclose(network.windows(), [(1.0, 2.6), (2.6, 3.6)])
        assert network.check_chain()
        assert _thresholds_consistent(network)

    def test_equilibrium_after_adaptation(self, rng, batch):
        network = _fresh_network([6, 8, 8, 3], rng)
        config = SchedulerConfig()
        init_windows_and_thresholds(network, batch, config)
        forward_with_adaptation(network, batch, config)
        trace = network_forward(batch, network)
        for layer, stats in zip(network.layers, gather_layer_stats(network, trace)):
            assert compute_tmax_delta(stats, layer.width, config) == pytest.approx(
                0.0, abs=1e-12
            )

    def test_adaptation_preserves_mapped_ann(self, rng, batch):
        network = _fresh_network([6, 8, 8, 3], rng)
        config = SchedulerConfig()
        init_windows_and_thresholds(network, batch, config)
        before = network_forward(batch, network).potentials
        _, deltas = forward_with_adaptation(network, batch, config)
        assert all(d >= 0.0 for d in deltas)
        after = network_forward(batch, network).potentials
        assert np.allclose(before, after, atol=1e-9)

    def test_disabled_rule_is_noop(self, rng, batch):
        network = _fresh_network([6, 8, 3], rng)
        init_windows_and_thresholds(network, batch, SchedulerConfig())
        windows = network.windows()
        trace = network_forward(batch, network)
        deltas = adapt_windows(network, trace, SchedulerConfig(adaptive=False))
        assert deltas == [0.0]
        assert network.windows() == windows


class TestTighten:
    def test_latency_drops_and_logits_hold(self, rng, batch):
        network = _fresh_network([6, 8, 8, 3], rng)
        init_windows_and_thresholds(network, batch, SchedulerConfig())
        before_latency = network.latency
        before = network_forward(batch, network).potentials
        tighten_for_inference(network, batch)
        trace = network_forward(batch, network)
        assert network.latency < before_latency
        assert np.allclose(trace.potentials, before, atol=1e-9)
        assert trace.saturated_count == 0
        assert network.check_chain()
        assert _thresholds_consistent(network)

    def test_tight_network_is_a_fixed_point(self, rng, batch):
        network = _fresh_network([6, 8, 3], rng)
        init_windows_and_thresholds(network, batch, SchedulerConfig())
        tighten_for_inference(network, batch)
        latency = network.latency
        tighten_for_inference(network, batch)
        assert network.latency == pytest.approx(latency, abs=1e-8)


class TestRechain:
    def test_width_count_checked(self, rng):
        network = _fresh_network([3, 2, 2, 2], rng)
        with pytest.raises(DimensionError):
            rechain(network, [1.0])

    def test_readout_bias_preserved(self, rng):
        network = _fresh_network([3, 2, 2, 2], rng)
        out = network.output
        out.alpha = np.array([0.3, -0.2])
        bias = out.alpha * (out.t_read - out.t_min)
        rechain(network, [2.0, 0.5])
        assert network.windows() == [(1.0, 3.0), (3.0, 3.5)]
        assert np.allclose(out.alpha * (out.t_read - out.t_min), bias)
