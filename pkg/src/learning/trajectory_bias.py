"""
ANN 空間での更新バイアス予測

α 一定（CONSTANT）のとき SNN 重みの勾配更新は、写像後の ANN 空間では
要素ごとに (dw/dW)^2 倍に歪みます。LINEAR では dw/dW = 1 なので歪みはありません。
"""

import numpy as np

from src.errors import PolicyError
from src.models import AlphaPolicy, SnnLayer


def _require_constant(layer: SnnLayer) -> None:
    if layer.policy != AlphaPolicy.CONSTANT:
        raise PolicyError(
            "update bias is only defined for the CONSTANT alpha policy "
            "(LINEAR maps updates one-to-one)"
        )


def mapped_weight_derivative(layer: SnnLayer) -> np.ndarray:
    """Entrywise dw_ij / dW_ij = (B_i - W_ij) / B_i^2 with alpha held fixed."""
    _require_constant(layer)
    B = layer.slope()[:, None]
    return (B - layer.W) / B**2


def snn_grad_from_ann_grad(layer: SnnLayer, dL_dw: np.ndarray) -> np.ndarray:
    """Entrywise chain rule dL/dW_ij = (dw_ij/dW_ij) * dL/dw_ij."""
    return mapped_weight_derivative(layer) * dL_dw


def predicted_ann_update(layer: SnnLayer, dL_dw: np.ndarray, eta: float) -> np.ndarray:
    """
    First-order ANN-space change caused by an SGD step on W.

    δw_ij = -eta * (dw/dW)^2 * dL/dw_ij

    Raises:
        PolicyError: layer uses the LINEAR policy
    """
    return -eta * mapped_weight_derivative(layer) ** 2 * dL_dw


def mapped_entry_update(layer: SnnLayer, dW: np.ndarray, eta: float) -> np.ndarray:
    """
    Exact per-entry ANN change when W_ij alone moves by -eta * dW_ij.

    (W_ij - eta*g) / (B_i - eta*g) - W_ij / B_i, the reference the
    first-order prediction is measured against.
    """
    _require_constant(layer)
    B = layer.slope()[:, None]
    step = eta * dW
    return (layer.W - step) / (B - step) - layer.W / B
