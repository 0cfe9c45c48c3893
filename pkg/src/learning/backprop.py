"""
厳密勾配モジュール

スパイク時刻を通した誤差逆伝播（サロゲート勾配なし）。
発火パターン（マスク）は与えられた forward トレースで固定し、
t_min / t_max / θ̃ はスケジューラ所有の定数として扱います。
"""

import numpy as np

from src.dynamics import softmax_cross_entropy
from src.models import (
    AlphaPolicy,
    ForwardTrace,
    GradientSet,
    LayerTrace,
    SnnLayer,
    TtfsNetwork,
)


def layer_jacobian(layer_trace: LayerTrace, layer: SnnLayer) -> np.ndarray:
    """
    dt^(n) / dt^(n-1) of one hidden layer: J_ij = M_i * W_ij / B_i.

    Rows of forced or clamped neurons are zero. For a batch trace the
    result has shape (samples, out, in).
    """
    scaled = layer.W / layer_trace.B[:, None]
    mask = layer_trace.output.effective_mask
    if mask.ndim == 1:
        return mask[:, None] * scaled
    return mask[:, :, None] * scaled[None, :, :]


def backward(
    trace: ForwardTrace, network: TtfsNetwork, labels: np.ndarray | int
) -> GradientSet:
    """
    Exact gradient of the mean softmax cross-entropy over the traced batch.

    Args:
        trace: result of network_forward on the same parameters
        network: the traced network
        labels: class index (single sample) or indices (batch)

    Returns:
        GradientSet with dW for every hidden layer plus the read-out,
        dD for every hidden layer and the masked dL/dt chain
    """
    tau_c = network.config.tau_c
    loss, dV = softmax_cross_entropy(trace.potentials, labels)
    single = np.ndim(trace.potentials) == 1
    dV = np.atleast_2d(dV)

    last = np.atleast_2d(trace.last_spikes.times)
    out = network.output
    dW_out = dV.T @ (out.t_read - last) / tau_c

    hidden = list(zip(network.layers, trace.layers))
    dW: list[np.ndarray] = [None] * len(hidden)
    dD: list[np.ndarray] = [None] * len(hidden)
    chain: list[np.ndarray] = [None] * len(hidden)

    g = dV @ (-out.W / tau_c)
    for n in range(len(hidden) - 1, -1, -1):
        layer, lt = hidden[n]
        g = g * np.atleast_2d(lt.output.effective_mask)
        chain[n] = g[0] if single else g

        t_in = np.atleast_2d(lt.input.times)
        s = g / lt.B
        if layer.policy == AlphaPolicy.LINEAR:
            dW[n] = s.T @ (t_in - layer.t_min)
        else:
            t_out = np.atleast_2d(lt.output.times)
            dW[n] = s.T @ t_in - (s * t_out).sum(axis=0)[:, None]
        dD[n] = tau_c * s.sum(axis=0)

        g = s @ layer.W

    return GradientSet(dW=[*dW, dW_out], dD=dD, dL_dt=chain, loss=loss)
