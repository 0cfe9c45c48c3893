import json

import numpy as np
import pandas as pd
import pytest

from src.bridge import ann_to_snn, init_ann, snn_to_ann
from src.data_provider import DataProvider
from src.diagnostics import (
    TRAJECTORY_COLUMNS,
    ann_spectrum_report,
    gradient_norm_profile,
    jacobian_spectrum_report,
    run_dual_track,
    weight_cosine_similarity,
    write_spectrum_json,
    write_trajectory_csv,
)
from src.dynamics import network_forward
from src.errors import ConfigError
from src.learning import backward, layer_jacobian
from src.models import AlphaPolicy, AnnLayer, LayerTrace, SnnLayer, SpikeVector
from src.scheduler import chain_windows
from tests.helpers import mapped_network, random_ann


def _square_network(n, depth, rng, policy, std=None):
    """depth hidden layers of width n with N(0, std^2) weights."""
    std = std if std is not None else 1.0 / np.sqrt(n)
    ann = [AnnLayer(rng.normal(0.0, std, size=(n, n)), np.zeros(n)) for _ in range(depth)]
    ann.append(AnnLayer(rng.normal(0.0, std, size=(2, n)), np.zeros(2)))
    windows = chain_windows([1.0] * depth, 1.0)
    if policy == AlphaPolicy.LINEAR:
        return ann_to_snn(ann, policy, windows, 1.0)
    # naive CONSTANT init: the SNN weights themselves are drawn, alpha = 1
    network = ann_to_snn(ann, AlphaPolicy.LINEAR, windows, 1.0)
    for layer in network.layers:
        layer.policy = AlphaPolicy.CONSTANT
        layer.alpha_const = np.ones(n)
    return network


class TestJacobianSpectrum:
    def test_zero_weights(self):
        ann = [AnnLayer(np.zeros((4, 4)), np.zeros(4)), AnnLayer(np.zeros((2, 4)), np.zeros(2))]
        network = ann_to_snn(ann, AlphaPolicy.LINEAR, [(1.0, 2.0)], 1.0)
        report = jacobian_spectrum_report(network)
        assert np.all(report.spectra[0] == 0.0)
        assert report.radii == [0.0]
        assert report.fraction_outside == [0.0]

    def test_non_square_layer_skipped(self, linear_setup):
        network, _, _ = linear_setup
        report = jacobian_spectrum_report(network)
        assert report.spectra[0] is None
        assert report.spectra[1] is not None
        assert report.spectra[2] is None
        assert len(report.notes) == 2

    def test_snn_and_mapped_ann_agree(self, rng):
        network = _square_network(12, 2, rng, AlphaPolicy.CONSTANT, std=0.05)
        snn_report = jacobian_spectrum_report(network)
        ann_report = ann_spectrum_report(snn_to_ann(network))
        for a, b in zip(snn_report.spectra, ann_report.spectra):
            assert np.allclose(a, b)

    def test_masked_requires_batch(self, linear_setup):
        network, _, _ = linear_setup
        with pytest.raises(ConfigError):
            jacobian_spectrum_report(network, masked=True)

    def test_masked_with_all_neurons_firing_matches_plain(self, linear_setup):
        network, _, x = linear_setup
        trace = network_forward(x, network)
        masked = jacobian_spectrum_report(network, x, masked=True)
        plain = jacobian_spectrum_report(network)
        if trace.layers[1].output.effective_mask.all():
            assert np.allclose(masked.spectra[1], plain.spectra[1])
        else:
            assert masked.spectra[1] is not None
            assert masked.spectra[1].shape == (5,)

    @pytest.mark.slow
    def test_linear_stays_in_unit_circle_constant_spreads(self, rng):
        linear = jacobian_spectrum_report(_square_network(340, 1, rng, AlphaPolicy.LINEAR))
        assert linear.radii[0] == pytest.approx(1.0, abs=0.1)
        assert linear.fraction_outside[0] < 0.1

        constant = jacobian_spectrum_report(_square_network(340, 1, rng, AlphaPolicy.CONSTANT))
        assert np.sum(np.abs(constant.spectra[0]) > 1.0) > 1
        assert constant.fraction_outside[0] > linear.fraction_outside[0]

    @pytest.mark.slow
    def test_radius_over_sixteen_seeds(self):
        constant_outside = linear_inside = 0
        for seed in range(16):
            rng = np.random.default_rng(seed)
            constant = jacobian_spectrum_report(
                _square_network(340, 1, rng, AlphaPolicy.CONSTANT)
            )
            linear = jacobian_spectrum_report(_square_network(340, 1, rng, AlphaPolicy.LINEAR))
            constant_outside += constant.radii[0] > 1.0
            linear_inside += linear.radii[0] <= 1.1
        assert constant_outside >= 15
        assert linear_inside >= 15

    def test_constant_spreads_at_small_width(self, rng):
        network = _square_network(60, 1, rng, AlphaPolicy.CONSTANT)
        report = jacobian_spectrum_report(network)
        linear = jacobian_spectrum_report(_square_network(60, 1, rng, AlphaPolicy.LINEAR))
        assert report.max_radius > linear.max_radius

    def test_report_json(self, linear_setup, tmp_path):
        network, _, _ = linear_setup
        path = write_spectrum_json(
            jacobian_spectrum_report(network), tmp_path / "spectrum.json", {"seed": 3}
        )
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["seed"] == 3
        assert len(data["layers"]) == network.depth
        assert data["layers"][0]["eigenvalues"] is None


class TestGradientNormProfile:
    def test_single_layer(self):
        profile = gradient_norm_profile([np.array([3.0, 4.0])])
        assert profile.norms == [5.0]
        assert profile.growth_rate == 1.0

    def test_geometric_chain(self):
        # norms 8, 4, 2, 1 from input to output: doubling towards the input
        chain = [np.array([8.0]), np.array([4.0]), np.array([2.0]), np.array([1.0])]
        assert gradient_norm_profile(chain).growth_rate == pytest.approx(2.0)

    def test_linear_deep_network_is_stable(self, rng):
        sizes = [16] + [32] * 16 + [4]
        ann = init_ann(sizes, rng)
        x = rng.uniform(size=(8, 16))
        network = mapped_network(ann, x, zeta=0.5)
        grads = backward(network_forward(x, network), network, rng.integers(0, 4, size=8))
        profile = gradient_norm_profile(grads.dL_dt)
        assert 0.5 <= profile.growth_rate <= 2.0

    def test_constant_naive_init_explodes(self, rng):
        n, depth = 32, 16
        layers, chain_rows = [], []
        for _ in range(depth):
            # naive draw: redraw rows whose slope 1 + sum(W) is not positive
            W = rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, n))
            while np.any(1.0 + W.sum(axis=1) <= 0.1):
                bad = 1.0 + W.sum(axis=1) <= 0.1
                W[bad] = rng.normal(0.0, 1.0 / np.sqrt(n), size=(int(bad.sum()), n))
            layers.append(W)
        g = rng.normal(size=n)
        for W in reversed(layers):
            spikes = SpikeVector(
                times=np.zeros(n),
                mask=np.ones(n, dtype=bool),
                saturated_low=np.zeros(n, dtype=bool),
                t_min=0.0,
                t_max=1.0,
            )
            B = 1.0 + W.sum(axis=1)
            lt = LayerTrace(input=spikes, output=spikes, A=B, B=B)
            chain_rows.insert(0, g)
            g = g @ layer_jacobian(lt, _layer_from(W))
        profile = gradient_norm_profile(chain_rows)
        assert profile.growth_rate > 1.0


def _layer_from(W):
    n = W.shape[0]
    return SnnLayer(
        W=W,
        D=np.zeros(n),
        theta_tilde=np.ones(n),
        t_min=0.0,
        t_max=1.0,
        policy=AlphaPolicy.CONSTANT,
        alpha_const=np.ones(n),
    )


class TestCosineSimilarity:
    def test_identical_is_one(self, linear_setup):
        network, ann, _ = linear_setup
        assert weight_cosine_similarity(network, ann) == pytest.approx([1.0] * 4)

    def test_negated_is_minus_one(self, linear_setup):
        network, ann, _ = linear_setup
        flipped = [AnnLayer(-layer.w, layer.b) for layer in ann]
        assert weight_cosine_similarity(network, flipped) == pytest.approx([-1.0] * 4)

    def test_zero_vectors(self, linear_setup):
        network, ann, _ = linear_setup
        network.layers[0].W = np.zeros_like(network.layers[0].W)
        zeros = [AnnLayer(np.zeros_like(layer.w), layer.b) for layer in ann]
        cos = weight_cosine_similarity(network, zeros)
        assert cos[0] == 1.0
        assert cos[1] == 0.0


class TestDualTrack:
    def test_linear_tracks_ann_exactly(self, rng):
        data = DataProvider.synthetic_dataset(64, 8, 3, seed=1)
        ann = random_ann([8, 6, 6, 3], rng)
        network = mapped_network(ann, data.images)
        report = run_dual_track(network, data, steps=100, lr=0.02, batch=8)
        assert report.max_loss_gap() <= 1e-9
        assert min(report.frame()["cosine"]) >= 1.0 - 1e-9
        assert report.frame()["step"].nunique() == 100

    @pytest.mark.slow
    def test_deep_linear_tracks_ann_over_hundred_steps(self, rng):
        data = DataProvider.synthetic_dataset(1000, 16, 10, seed=5)
        ann = random_ann([16] + [64] * 7 + [10], rng)
        network = mapped_network(ann, data.images)
        report = run_dual_track(network, data, steps=100, lr=0.01, batch=8)
        assert report.frame()["step"].nunique() == 100
        assert report.max_loss_gap() <= 1e-9
        assert min(report.frame()["cosine"]) >= 1.0 - 1e-6

    def test_constant_drifts_apart(self, rng):
        data = DataProvider.synthetic_dataset(64, 8, 3, seed=2)
        ann = random_ann([8, 6, 3], rng, zero_row_sum=True)
        network = mapped_network(ann, data.images, policy=AlphaPolicy.CONSTANT)
        report = run_dual_track(network, data, steps=150, lr=0.02, batch=8)
        assert min(report.final_cosines()) < 0.999

    def test_input_network_untouched(self, rng):
        data = DataProvider.synthetic_dataset(32, 8, 3, seed=3)
        network = mapped_network(random_ann([8, 5, 3], rng), data.images)
        before = network.layers[0].W.copy()
        run_dual_track(network, data, steps=5, lr=0.1, batch=4)
        assert np.array_equal(network.layers[0].W, before)

    def test_stride_and_csv_schema(self, rng, tmp_path):
        data = DataProvider.synthetic_dataset(32, 8, 3, seed=4)
        network = mapped_network(random_ann([8, 5, 3], rng), data.images)
        report = run_dual_track(network, data, steps=10, lr=0.01, batch=4, stride=4)
        assert sorted(report.frame()["step"].unique()) == [0, 4, 8, 9]
        path = write_trajectory_csv(report, tmp_path / "trajectory.csv")
        frame = pd.read_csv(path)
        assert list(frame.columns) == TRAJECTORY_COLUMNS
        assert len(frame) == 4 * 2
        assert report.mean_cosine_by_step().index.tolist() == [0, 4, 8, 9]
