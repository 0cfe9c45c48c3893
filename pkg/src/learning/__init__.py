from .backprop import backward, layer_jacobian
from .finite_diff import FiniteDiffResult, central_difference, finite_diff_grad
from .optimizers import (
    OptimizerKind,
    OptimizerState,
    adam_step,
    apply_update,
    gradient_list,
    lr_schedule,
    network_params,
    set_network_params,
    sgd_step,
)
from .trajectory_bias import (
    mapped_entry_update,
    mapped_weight_derivative,
    predicted_ann_update,
    snn_grad_from_ann_grad,
)

__all__ = [
    "backward",
    "layer_jacobian",
    "FiniteDiffResult",
    "central_difference",
    "finite_diff_grad",
    "OptimizerKind",
    "OptimizerState",
    "adam_step",
    "apply_update",
    "gradient_list",
    "lr_schedule",
    "network_params",
    "set_network_params",
    "sgd_step",
    "mapped_entry_update",
    "mapped_weight_derivative",
    "predicted_ann_update",
    "snn_grad_from_ann_grad",
]
