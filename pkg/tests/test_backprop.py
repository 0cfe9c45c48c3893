import numpy as np
import pytest

from src.bridge import relu_backward, relu_forward
from src.dynamics import layer_forward, network_forward, softmax_cross_entropy
from src.errors import ConfigError
from src.learning import backward, central_difference, finite_diff_grad, layer_jacobian
from src.models import AlphaPolicy, SpikeVector
from tests.helpers import mapped_network, random_ann


def _shift_input(spikes: SpikeVector, j: int, eps: float) -> SpikeVector:
    shifted = spikes.copy()
    shifted.times = spikes.times.copy()
    shifted.times[j] += eps
    return shifted


class TestLayerJacobian:
    def test_linear_unmasked_equals_weights(self, linear_setup):
        network, _, x = linear_setup
        trace = network_forward(x[0], network)
        lt, layer = trace.layers[0], network.layers[0]
        lt.output.mask[:] = True
        lt.output.saturated_low[:] = False
        assert np.array_equal(layer_jacobian(lt, layer), layer.W)

    def test_all_forced_is_zero(self, linear_setup):
        network, _, x = linear_setup
        trace = network_forward(x, network)
        lt = trace.layers[1]
        lt.output.mask[:] = False
        J = layer_jacobian(lt, network.layers[1])
        assert J.shape == (x.shape[0], 5, 5)
        assert np.all(J == 0.0)

    def test_matches_spike_time_differences(self, constant_setup):
        network, _, x = constant_setup
        trace = network_forward(x[0], network)
        lt, layer = trace.layers[0], network.layers[0]
        J = layer_jacobian(lt, layer)
        eps = 1e-6
        tau_c = network.config.tau_c
        for j in range(layer.n_in):
            up, _, _ = layer_forward(_shift_input(lt.input, j, eps), layer, tau_c)
            down, _, _ = layer_forward(_shift_input(lt.input, j, -eps), layer, tau_c)
            numeric = (up.times - down.times) / (2 * eps)
            assert np.allclose(J[:, j], numeric, rtol=1e-6, atol=1e-9)


class TestBackward:
    def test_linear_gradient_equals_ann_gradient(self, linear_setup, labels):
        network, ann, x = linear_setup
        grads = backward(network_forward(x, network), network, labels)

        acts, logits = relu_forward(ann, x)
        ann_loss, dlogits = softmax_cross_entropy(logits, labels)
        dw, db = relu_backward(ann, acts, dlogits)

        assert grads.loss == pytest.approx(ann_loss, abs=1e-12)
        for snn_dw, ann_dw in zip(grads.dW, dw):
            np.testing.assert_allclose(snn_dw, ann_dw, rtol=1e-9, atol=1e-12)
        for snn_dD, ann_db in zip(grads.dD, db[:-1]):
            np.testing.assert_allclose(snn_dD, -ann_db, rtol=1e-9, atol=1e-12)

    def test_forced_neuron_has_zero_gradient(self, linear_setup, labels):
        network, _, x = linear_setup
        # push neuron 0 of the first layer past t_max for every sample
        network.layers[0].D[0] += 100.0
        trace = network_forward(x, network)
        assert not trace.layers[0].output.mask[:, 0].any()
        grads = backward(trace, network, labels)
        assert np.all(grads.dW[0][0] == 0.0)
        assert grads.dD[0][0] == 0.0

    def test_single_sample_matches_batch_of_one(self, linear_setup):
        network, _, x = linear_setup
        single = backward(network_forward(x[0], network), network, 1)
        batched = backward(network_forward(x[:1], network), network, np.array([1]))
        for a, b in zip(single.dW, batched.dW):
            assert np.allclose(a, b)
        assert single.dL_dt[0].shape == (5,)

    def test_chain_is_masked(self, linear_setup, labels):
        network, _, x = linear_setup
        trace = network_forward(x, network)
        grads = backward(trace, network, labels)
        for g, lt in zip(grads.dL_dt, trace.layers):
            assert np.all(g[~lt.output.effective_mask] == 0.0)

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("policy", [AlphaPolicy.LINEAR, AlphaPolicy.CONSTANT])
    def test_matches_finite_differences(self, seed, policy):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(4, 5))
        labels = np.array([0, 1, 2, 1])
        ann = random_ann([5, 4, 4, 4, 3], rng, zero_row_sum=policy == AlphaPolicy.CONSTANT)
        network = mapped_network(ann, x, policy=policy)

        analytic = backward(network_forward(x, network), network, labels)
        numeric = finite_diff_grad(network, x, labels, eps=1e-6)

        assert numeric.grads.loss == pytest.approx(analytic.loss)
        assert numeric.max_rel_error(analytic, floor=1e-3) < 1e-5


class TestFiniteDiff:
    def test_quadratic_is_exact(self):
        assert central_difference(lambda p: 3.0 * p**2, 2.0, 1e-4) == pytest.approx(
            12.0, abs=1e-8
        )

    @pytest.mark.parametrize("eps", [1e-9, 1e-3])
    def test_eps_outside_range_raises(self, linear_setup, labels, eps):
        network, _, x = linear_setup
        with pytest.raises(ConfigError):
            finite_diff_grad(network, x, labels, eps=eps)

    def test_does_not_mutate_network(self, linear_setup, labels):
        network, _, x = linear_setup
        before = [layer.W.copy() for layer in network.layers]
        finite_diff_grad(network, x[:2], labels[:2], eps=1e-6)
        assert all(np.array_equal(a, layer.W) for a, layer in zip(before, network.layers))

    def test_spike_on_window_edge_is_switching(self, linear_setup, labels):
        network, _, x = linear_setup
        x = x[:1]
        trace = network_forward(x, network)
        layer = network.layers[0]
        out = trace.layers[0].output
        i = int(np.flatnonzero(out.effective_mask[0])[0])
        # candidate moves to t_max - 0.5e-6, so a +eps shift of D forces it
        layer.D[i] += layer.t_max - out.times[0, i] - 0.5e-6
        result = finite_diff_grad(network, x, labels[:1], eps=1e-6)
        assert result.switching_D[0][i]
        assert result.switching_count >= 1
