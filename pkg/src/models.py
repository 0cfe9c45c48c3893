"""
Data Models
TTFSネットワークの共有データ構造を dataclass で定義します。
時間は tau_c と同じ単位、電位・重み・閾値は無次元です。
ベクトル量は1サンプル (n,) でもバッチ (samples, n) でも扱えます。
"""

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from src.constants import SLOPE_UNIT_TOL
from src.errors import DimensionError, InvalidSlopeError


class AlphaPolicy(str, Enum):
    """Choice of the ramp strength alpha of a hidden layer."""

    LINEAR = "linear"  # alpha_i = 1 - sum_j W_ij, hence B_i = 1
    CONSTANT = "constant"  # alpha_i fixed, independent of W


@dataclass
class NetworkConfig:
    """Global coding parameters."""

    tau_c: float
    layer_sizes: list[int]  # [inputs, hidden..., classes]

    def __post_init__(self):
        if self.tau_c <= 0:
            raise DimensionError(f"tau_c must be positive, got {self.tau_c}")
        if len(self.layer_sizes) < 2:
            raise DimensionError("layer_sizes needs at least inputs and classes")

    @property
    def t_min_0(self) -> float:
        return 0.0

    @property
    def t_max_0(self) -> float:
        # 入力層の窓は符号化で固定
        return self.tau_c


@dataclass
class SnnLayer:
    """Hidden spiking layer: synapses, thresholds and coding window."""

    W: np.ndarray  # (out, in)
    D: np.ndarray  # trainable threshold shift
    theta_tilde: np.ndarray  # base threshold, owned by the scheduler
    t_min: float
    t_max: float
    policy: AlphaPolicy = AlphaPolicy.LINEAR
    alpha_const: Optional[np.ndarray] = None  # only under CONSTANT

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def width(self) -> float:
        return self.t_max - self.t_min

    @property
    def threshold(self) -> np.ndarray:
        return self.theta_tilde + self.D

    @property
    def alpha(self) -> np.ndarray:
        if self.policy == AlphaPolicy.LINEAR:
            return 1.0 - self.W.sum(axis=1)
        return self.alpha_const

    def slope(self) -> np.ndarray:
        """
        Slope-at-threshold B_i = alpha_i + sum_k W_ik.

        Under LINEAR the ramp cancels the row sum and B is exactly one.
        """
        if self.policy == AlphaPolicy.LINEAR:
            return np.ones(self.n_out)
        return self.alpha_const + self.W.sum(axis=1)

    def validate(self) -> None:
        """Shape, window and slope checks; raises on violation."""
        n_out = self.W.shape[0]
        if self.W.ndim != 2 or not np.all(np.isfinite(self.W)):
            raise DimensionError("W must be a finite 2-D matrix")
        for name in ("D", "theta_tilde"):
            if getattr(self, name).shape != (n_out,):
                raise DimensionError(f"{name} must have shape ({n_out},)")
        if not self.t_max > self.t_min:
            raise DimensionError(
                f"empty window [{self.t_min}, {self.t_max}] (t_max must exceed t_min)"
            )
        if self.policy == AlphaPolicy.CONSTANT:
            if self.alpha_const is None or self.alpha_const.shape != (n_out,):
                raise DimensionError("CONSTANT policy needs alpha_const of shape (out,)")
            bad = np.flatnonzero(self.slope() <= 0)
            if bad.size:
                raise InvalidSlopeError(
                    f"slope-at-threshold B <= 0 for neurons {bad[:10].tolist()}"
                )
        elif np.max(np.abs(self.slope() - 1.0)) >= SLOPE_UNIT_TOL:
            raise InvalidSlopeError("LINEAR policy must have B == 1")

    def copy(self) -> "SnnLayer":
        return copy.deepcopy(self)


@dataclass
class OutputLayer:
    """
    Non-spiking read-out.

    The ramp of strength alpha starts at ``t_min`` (window start of the last
    hidden layer) and integration stops at ``t_read`` (its window end).
    """

    W: np.ndarray  # (classes, n_last)
    alpha: np.ndarray  # (classes,)
    t_min: float
    t_read: float

    def copy(self) -> "OutputLayer":
        return copy.deepcopy(self)


@dataclass
class SpikeVector:
    """Spike times of one layer plus the fired-before-t_max mask M."""

    times: np.ndarray
    mask: np.ndarray  # True iff fired strictly before t_max
    saturated_low: np.ndarray  # True iff clamped at t_min
    t_min: float
    t_max: float

    @property
    def effective_mask(self) -> np.ndarray:
        """Neurons that carry gradient: fired inside the window, not clamped."""
        return self.mask & ~self.saturated_low

    def copy(self) -> "SpikeVector":
        return copy.deepcopy(self)


@dataclass
class LayerTrace:
    """Forward record of one hidden layer."""

    input: SpikeVector
    output: SpikeVector
    A: np.ndarray  # spike-time numerator
    B: np.ndarray  # slope-at-threshold


@dataclass
class ForwardTrace:
    """Full forward record; ``potentials`` are the read-out V^(N+1)."""

    encoded: SpikeVector
    layers: list[LayerTrace]
    potentials: np.ndarray

    @property
    def last_spikes(self) -> SpikeVector:
        return self.layers[-1].output if self.layers else self.encoded

    @property
    def saturated_count(self) -> int:
        return int(sum(lt.output.saturated_low.sum() for lt in self.layers))


@dataclass
class TtfsNetwork:
    """Hidden layers plus read-out sharing one NetworkConfig."""

    config: NetworkConfig
    layers: list[SnnLayer]
    output: OutputLayer

    @property
    def latency(self) -> float:
        return self.output.t_read

    @property
    def depth(self) -> int:
        return len(self.layers)

    def windows(self) -> list[tuple[float, float]]:
        return [(layer.t_min, layer.t_max) for layer in self.layers]

    def check_chain(self, tol: float = 1e-12) -> bool:
        """t_min^(n) == t_max^(n-1) everywhere, read-out attached to the last window."""
        prev_max = self.config.t_max_0
        prev_min = self.config.t_min_0
        for layer in self.layers:
            if abs(layer.t_min - prev_max) > tol:
                return False
            prev_min, prev_max = layer.t_min, layer.t_max
        return (
            abs(self.output.t_read - prev_max) <= tol
            and abs(self.output.t_min - prev_min) <= tol
        )

    def copy(self) -> "TtfsNetwork":
        return copy.deepcopy(self)


@dataclass
class AnnLayer:
    """Equivalent ReLU (or affine read-out) layer."""

    w: np.ndarray
    b: np.ndarray


@dataclass
class EquivalenceReport:
    """Residuals of the mapping identity x * tau_c == t_max - t."""

    layer_max_diff: list[float]
    logit_max_diff: float
    loss_diff: float
    tol: float
    saturated_count: int = 0

    @property
    def passed(self) -> bool:
        diffs = [*self.layer_max_diff, self.logit_max_diff, self.loss_diff]
        return all(d < self.tol for d in diffs)

    def to_dict(self) -> dict:
        return {
            "layer_max_diff": self.layer_max_diff,
            "logit_max_diff": self.logit_max_diff,
            "loss_diff": self.loss_diff,
            "tol": self.tol,
            "saturated_count": self.saturated_count,
            "passed": self.passed,
        }


@dataclass
class GradientSet:
    """
    dL/dW per layer (hidden layers then read-out) and dL/dD per hidden layer.

    ``dL_dt`` keeps the masked chain dL/dt^(n) per hidden layer for the
    gradient-norm diagnostics.
    """

    dW: list[np.ndarray]
    dD: list[np.ndarray]
    dL_dt: list[np.ndarray] = field(default_factory=list)
    loss: float = 0.0


@dataclass
class Dataset:
    """Flattened samples with intensities in [0, 1] and integer labels."""

    images: np.ndarray  # (samples, features)
    labels: np.ndarray  # (samples,)
    split: str = "train"

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.images.shape[1])

    def subset(self, count: int) -> "Dataset":
        return Dataset(self.images[:count], self.labels[:count], self.split)
