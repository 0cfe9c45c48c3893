"""
最適化モジュール
SGD / Adam と指数減衰の学習率スケジュール。
更新対象は隠れ層の W, D と読み出し層の W のみです（t_max, θ̃ はスケジューラ所有）。
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from src.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    LR_DECAY_BASE,
    LR_DECAY_ITERATIONS,
)
from src.errors import ShapeMismatchError
from src.models import GradientSet, TtfsNetwork


class OptimizerKind(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass
class OptimizerState:
    """Moment accumulators (Adam only) and the step counter."""

    kind: OptimizerKind = OptimizerKind.ADAM
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def lr_schedule(lr0: float, it: int) -> float:
    """lr0 * 0.9^(it / 5000)."""
    return lr0 * LR_DECAY_BASE ** (it / LR_DECAY_ITERATIONS)


def _check_shapes(params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    if len(params) != len(grads) or any(
        p.shape != g.shape for p, g in zip(params, grads)
    ):
        raise ShapeMismatchError("gradient shapes do not match parameters")


def sgd_step(
    params: list[np.ndarray], grads: list[np.ndarray], lr: float
) -> list[np.ndarray]:
    _check_shapes(params, grads)
    return [p - lr * g for p, g in zip(params, grads)]


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: OptimizerState,
    lr: float,
) -> tuple[list[np.ndarray], OptimizerState]:
    """Bias-corrected Adam; state is updated in place and returned."""
    _check_shapes(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    updated = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g**2
        m_hat = state.m[i] / (1.0 - state.beta1**t)
        v_hat = state.v[i] / (1.0 - state.beta2**t)
        updated.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated, state


def network_params(network: TtfsNetwork) -> list[np.ndarray]:
    """Trainable arrays in fixed order: (W, D) per hidden layer, then read-out W."""
    params = []
    for layer in network.layers:
        params.extend([layer.W, layer.D])
    params.append(network.output.W)
    return params


def gradient_list(grads: GradientSet) -> list[np.ndarray]:
    """GradientSet flattened in the order of ``network_params``."""
    flat = []
    for dW, dD in zip(grads.dW[:-1], grads.dD):
        flat.extend([dW, dD])
    flat.append(grads.dW[-1])
    return flat


def set_network_params(network: TtfsNetwork, params: list[np.ndarray]) -> None:
    it = iter(params)
    for layer in network.layers:
        layer.W = next(it)
        layer.D = next(it)
    network.output.W = next(it)


def apply_update(
    network: TtfsNetwork, grads: GradientSet, state: OptimizerState, lr: float
) -> OptimizerState:
    """One optimizer step written back into the network."""
    params = network_params(network)
    flat = gradient_list(grads)
    if state.kind == OptimizerKind.SGD:
        state.step += 1
        params = sgd_step(params, flat, lr)
    else:
        params, state = adam_step(params, flat, state, lr)
    set_network_params(network, params)
    return state
