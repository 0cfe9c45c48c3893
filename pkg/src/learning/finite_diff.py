"""
有限差分オラクル

中心差分で全パラメータの勾配を数値的に求め、摂動で発火マスクや
飽和フラグが変わるパラメータを "switching" として除外対象にします。
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.dynamics import network_forward, softmax_cross_entropy
from src.errors import ConfigError
from src.models import ForwardTrace, GradientSet, TtfsNetwork

FD_EPS_RANGE = (1e-8, 1e-4)


def central_difference(fn: Callable[[float], float], p: float, eps: float) -> float:
    """(f(p + eps) - f(p - eps)) / (2 eps)."""
    return (fn(p + eps) - fn(p - eps)) / (2.0 * eps)


@dataclass
class FiniteDiffResult:
    """Numerical gradients and the parameters whose perturbation flips a spike state."""

    grads: GradientSet
    switching_W: list[np.ndarray]
    switching_D: list[np.ndarray]

    @property
    def switching_count(self) -> int:
        return int(sum(m.sum() for m in [*self.switching_W, *self.switching_D]))

    def max_rel_error(self, analytic: GradientSet, floor: float = 1e-12) -> float:
        """Largest |a - n| / max(|a|, |n|, floor) over non-switching entries."""
        worst = 0.0
        pairs = [
            *zip(analytic.dW, self.grads.dW, self.switching_W),
            *zip(analytic.dD, self.grads.dD, self.switching_D),
        ]
        for a, n, switching in pairs:
            keep = ~switching
            if not keep.any():
                continue
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n)[keep] / denom[keep])))
        return worst


def _pattern(trace: ForwardTrace) -> list[np.ndarray]:
    states = []
    for lt in trace.layers:
        states.append(lt.output.mask)
        states.append(lt.output.saturated_low)
    return states


def _same_pattern(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_grad(
    network: TtfsNetwork, x: np.ndarray, labels, eps: float = 1e-6
) -> FiniteDiffResult:
    """
    Central differences of the mean loss for every W, D and read-out W entry.

    Raises:
        ConfigError: eps outside [1e-8, 1e-4]
    """
    if not FD_EPS_RANGE[0] <= eps <= FD_EPS_RANGE[1]:
        raise ConfigError(f"eps must lie in {list(FD_EPS_RANGE)}, got {eps}")

    net = network.copy()
    base = _pattern(network_forward(x, net))

    def central(array: np.ndarray, index: tuple) -> tuple[float, bool]:
        original = array[index]
        losses, switched = [], False
        for sign in (1.0, -1.0):
            array[index] = original + sign * eps
            trace = network_forward(x, net)
            losses.append(softmax_cross_entropy(trace.potentials, labels)[0])
            switched |= not _same_pattern(base, _pattern(trace))
        array[index] = original
        return (losses[0] - losses[1]) / (2.0 * eps), switched

    def sweep(array: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad = np.zeros_like(array)
        switching = np.zeros(array.shape, dtype=bool)
        for index in np.ndindex(array.shape):
            grad[index], switching[index] = central(array, index)
        return grad, switching

    dW, dD, sw_W, sw_D = [], [], [], []
    for layer in net.layers:
        g, s = sweep(layer.W)
        dW.append(g)
        sw_W.append(s)
        g, s = sweep(layer.D)
        dD.append(g)
        sw_D.append(s)
    g, s = sweep(net.output.W)
    dW.append(g)
    sw_W.append(s)

    trace = network_forward(x, net)
    loss = softmax_cross_entropy(trace.potentials, labels)[0]
    return FiniteDiffResult(
        grads=GradientSet(dW=dW, dD=dD, loss=loss),
        switching_W=sw_W,
        switching_D=sw_D,
    )
