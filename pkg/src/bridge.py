"""
ANN ブリッジモジュール

SNN と ReLU ネットワークのパラメータ空間を双方向に厳密変換します。
  w_ij = W_ij / B_i,  b_i = -θ_i / B_i + (t_max - t_min) / tau_c
参照用の ReLU forward/backward と等価性チェッカーも提供します。
"""

from typing import Optional, Sequence

import numpy as np

from src.constants import EQUIVALENCE_TOL
from src.dynamics import decode_ttfs, network_forward, softmax_cross_entropy
from src.errors import (
    InfeasibleMappingError,
    InvalidSlopeError,
    ShapeMismatchError,
)
from src.log_config import get_logger
from src.models import (
    AlphaPolicy,
    AnnLayer,
    EquivalenceReport,
    NetworkConfig,
    OutputLayer,
    SnnLayer,
    TtfsNetwork,
)
from src.scheduler import base_threshold, chain_windows

logger = get_logger(__name__)


def slope_at_threshold(layer: SnnLayer) -> np.ndarray:
    """B_i = alpha_i + sum_k W_ik (exactly one under LINEAR)."""
    return layer.slope()


def snn_to_ann(network: TtfsNetwork) -> list[AnnLayer]:
    """
    Reverse mapping SNN -> ReLU network (hidden layers then affine read-out).

    Raises:
        InvalidSlopeError: some B_i <= 0
    """
    tau_c = network.config.tau_c
    ann = []
    for index, layer in enumerate(network.layers, start=1):
        B = slope_at_threshold(layer)
        if np.any(B <= 0.0):
            raise InvalidSlopeError(f"layer {index}: B <= 0, no equivalent ReLU layer")
        w = layer.W / B[:, None]
        b = -layer.threshold / B + layer.width / tau_c
        ann.append(AnnLayer(w=w, b=b))
    out = network.output
    ann.append(
        AnnLayer(w=out.W.copy(), b=out.alpha * (out.t_read - out.t_min) / tau_c)
    )
    return ann


def _constant_alpha(alpha, index: int, n_out: int) -> np.ndarray:
    if alpha is None:
        return np.ones(n_out)
    value = alpha[index] if isinstance(alpha, (list, tuple)) else alpha
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (n_out,)).copy()


def ann_to_snn(
    ann: Sequence[AnnLayer],
    policy: AlphaPolicy,
    windows: Sequence[tuple[float, float]],
    tau_c: float,
    alpha=None,
) -> TtfsNetwork:
    """
    Build the SNN that reproduces a ReLU network exactly.

    Args:
        ann: hidden ReLU layers followed by the affine read-out
        policy: LINEAR (W = w) or CONSTANT (alpha fixed)
        windows: chained hidden windows [(t_min, t_max), ...] from the scheduler
        tau_c: conversion parameter
        alpha: CONSTANT only; scalar, per-layer list or vectors (default 1)

    Raises:
        InfeasibleMappingError: CONSTANT with alpha / (1 - sum_j w_ij) <= 0
    """
    hidden, readout = list(ann[:-1]), ann[-1]
    if len(windows) != len(hidden):
        raise ShapeMismatchError(
            f"{len(hidden)} hidden layers but {len(windows)} windows"
        )

    layers = []
    for index, (layer, (t_min, t_max)) in enumerate(zip(hidden, windows)):
        width = t_max - t_min
        n_out = layer.w.shape[0]
        if policy == AlphaPolicy.LINEAR:
            W = layer.w.copy()
            B = np.ones(n_out)
            alpha_const = None
        else:
            alpha_const = _constant_alpha(alpha, index, n_out)
            with np.errstate(divide="ignore", invalid="ignore"):
                B = alpha_const / (1.0 - layer.w.sum(axis=1))
            bad = np.flatnonzero(~np.isfinite(B) | (B <= 0.0))
            if bad.size:
                raise InfeasibleMappingError(
                    f"layer {index + 1}: alpha / (1 - sum_j w_ij) <= 0 for neurons "
                    f"{bad[:10].tolist()}"
                )
            W = B[:, None] * layer.w
        theta = B * (width / tau_c - layer.b)
        theta_tilde = base_threshold(B, width, tau_c)
        layers.append(
            SnnLayer(
                W=W,
                D=theta - theta_tilde,
                theta_tilde=theta_tilde,
                t_min=t_min,
                t_max=t_max,
                policy=policy,
                alpha_const=alpha_const,
            )
        )

    if layers:
        out_t_min, t_read = layers[-1].t_min, layers[-1].t_max
    else:
        out_t_min, t_read = 0.0, tau_c
    output = OutputLayer(
        W=readout.w.copy(),
        alpha=readout.b * tau_c / (t_read - out_t_min),
        t_min=out_t_min,
        t_read=t_read,
    )
    sizes = [hidden[0].w.shape[1] if hidden else readout.w.shape[1]]
    sizes += [layer.w.shape[0] for layer in ann]
    return TtfsNetwork(
        config=NetworkConfig(tau_c=tau_c, layer_sizes=sizes),
        layers=layers,
        output=output,
    )


def relu_forward(
    ann: Sequence[AnnLayer], x: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """
    Reference ReLU network.

    Returns:
        (activations x^(0..N) with x^(0) the input, logits)
    """
    activations = [np.asarray(x, dtype=np.float64)]
    for layer in ann[:-1]:
        z = activations[-1] @ layer.w.T + layer.b
        activations.append(np.maximum(z, 0.0))
    logits = activations[-1] @ ann[-1].w.T + ann[-1].b
    return activations, logits


def relu_backward(
    ann: Sequence[AnnLayer], activations: list[np.ndarray], dL_dlogits: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Plain backprop of the ReLU network; returns (dL/dw, dL/db) per layer."""
    dw: list[np.ndarray] = [None] * len(ann)
    db: list[np.ndarray] = [None] * len(ann)
    g = dL_dlogits
    for n in range(len(ann) - 1, -1, -1):
        x_prev = activations[n]
        if g.ndim == 1:
            dw[n] = np.outer(g, x_prev)
            db[n] = g.copy()
        else:
            dw[n] = g.T @ x_prev
            db[n] = g.sum(axis=0)
        if n > 0:
            g = (g @ ann[n].w) * (activations[n] > 0.0)
    return dw, db


def ann_windows_from_activations(
    ann: Sequence[AnnLayer],
    x: np.ndarray,
    zeta: float,
    tau_c: float,
    percentile: float = 100.0,
    min_width: Optional[float] = None,
) -> list[tuple[float, float]]:
    """
    Windows sized to hold the given percentile of each layer's ReLU outputs.

    width^(n) = tau_c * (1 + zeta) * percentile(x^(n)); empty layers get
    ``min_width`` (default tau_c).
    """
    activations, _ = relu_forward(ann, np.atleast_2d(x))
    widths = []
    for index, act in enumerate(activations[1:], start=1):
        level = float(np.percentile(act, percentile)) if act.size else 0.0
        if level > 0.0:
            widths.append(tau_c * (1.0 + zeta) * level)
        else:
            fallback = min_width if min_width is not None else tau_c
            logger.warning(
                f"[BRIDGE_WARN] layer {index}: percentile {percentile} of activations "
                f"is 0, using width {fallback}"
            )
            widths.append(fallback)
    return chain_windows(widths, tau_c)


def init_ann(
    layer_sizes: Sequence[int],
    rng: np.random.Generator,
    scale: str = "he",
    zero_row_sum: bool = False,
) -> list[AnnLayer]:
    """
    Standard ReLU-network initialisation with zero biases.

    ``scale`` is "he" (N(0, 2/fan_in)) or "lecun" (N(0, 1/fan_in)) for the
    hidden layers; the read-out always uses lecun. ``zero_row_sum`` centres
    each hidden row so that a CONSTANT-alpha SNN starts with B = alpha.
    """
    gain = {"he": 2.0, "lecun": 1.0}[scale]
    ann = []
    pairs = list(zip(layer_sizes[:-1], layer_sizes[1:]))
    for index, (fan_in, fan_out) in enumerate(pairs):
        is_readout = index == len(pairs) - 1
        std = np.sqrt((1.0 if is_readout else gain) / fan_in)
        w = rng.normal(0.0, std, size=(fan_out, fan_in))
        if zero_row_sum and not is_readout:
            w -= w.mean(axis=1, keepdims=True)
        ann.append(AnnLayer(w=w, b=np.zeros(fan_out)))
    return ann


def check_equivalence(
    network: TtfsNetwork,
    ann: Sequence[AnnLayer],
    x: np.ndarray,
    labels: Optional[np.ndarray] = None,
    tol: float = EQUIVALENCE_TOL,
) -> EquivalenceReport:
    """
    Run both forwards and report residuals of x^(n) * tau_c == t_max^(n) - t^(n).

    Raises:
        ShapeMismatchError: layer count or weight shapes differ
    """
    if len(ann) != network.depth + 1:
        raise ShapeMismatchError(
            f"ANN has {len(ann)} layers, SNN has {network.depth} hidden + read-out"
        )
    snn_shapes = [layer.W.shape for layer in network.layers] + [network.output.W.shape]
    for index, (shape, layer) in enumerate(zip(snn_shapes, ann)):
        if layer.w.shape != shape:
            raise ShapeMismatchError(
                f"layer {index + 1}: SNN {shape} vs ANN {layer.w.shape}"
            )

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tau_c = network.config.tau_c
    trace = network_forward(x, network)
    activations, logits = relu_forward(ann, x)

    layer_diffs = []
    for lt, act in zip(trace.layers, activations[1:]):
        decoded = decode_ttfs(lt.output, lt.output.t_max, tau_c)
        layer_diffs.append(float(np.max(np.abs(act - decoded) * tau_c, initial=0.0)))

    if labels is None:
        labels = np.argmax(logits, axis=1)
    snn_loss, _ = softmax_cross_entropy(trace.potentials, labels)
    ann_loss, _ = softmax_cross_entropy(logits, labels)

    return EquivalenceReport(
        layer_max_diff=layer_diffs,
        logit_max_diff=float(np.max(np.abs(trace.potentials - logits), initial=0.0)),
        loss_diff=abs(snn_loss - ann_loss),
        tol=tol,
        saturated_count=trace.saturated_count,
    )
