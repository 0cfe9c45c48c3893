"""
時間窓スケジューラモジュール

各層の [t_min, t_max] 窓と基準閾値 θ̃ の初期化・適応更新・推論時の窓縮小を担当します。
窓は t_min^(n) = t_max^(n-1) で連鎖し、θ̃_i = B_i (t_max - t_min) / tau_c を常に保ちます。
スケジューラは唯一の書き込み役で、更新中に forward/backward を走らせてはいけません。
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.constants import (
    DEFAULT_GAMMA,
    DEFAULT_ZETA,
    REFERENCE_SLOPE_B0,
    TIGHTEN_MARGIN,
)
from src.dynamics import encode_ttfs, layer_forward, network_forward
from src.errors import ConfigError, DimensionError
from src.log_config import get_logger
from src.models import ForwardTrace, TtfsNetwork

logger = get_logger(__name__)


@dataclass
class SchedulerConfig:
    """Margins of the window construction."""

    zeta: float = DEFAULT_ZETA
    gamma: float = DEFAULT_GAMMA
    B0: float = REFERENCE_SLOPE_B0
    min_width: Optional[float] = None  # defaults to tau_c
    adaptive: bool = True

    def __post_init__(self):
        if self.zeta < 0:
            raise ConfigError(f"zeta must be >= 0, got {self.zeta}")
        if self.gamma <= 1:
            raise ConfigError(f"gamma must be > 1, got {self.gamma}")
        if self.B0 != 1.0:
            raise ConfigError("reference slope B0 is fixed to 1")


@dataclass
class LayerStats:
    """Batch statistics of one hidden layer, measured in its window at the time."""

    min_spike_time: float
    max_potential_at_t_min: float
    t_min: float
    t_max: float

    @property
    def earliest_gap(self) -> float:
        """t_max - min_{i,mu} t_i; invariant under window shifts."""
        return self.t_max - self.min_spike_time


def base_threshold(B: np.ndarray, width: float, tau_c: float) -> np.ndarray:
    """θ̃_i = B_i * (t_max - t_min) / tau_c."""
    return B * (width / tau_c)


def chain_windows(widths: list[float], tau_c: float) -> list[tuple[float, float]]:
    """Chained hidden windows starting at the end of the input window."""
    windows = []
    t_min = tau_c
    for width in widths:
        windows.append((t_min, t_min + width))
        t_min += width
    return windows


def rechain(network: TtfsNetwork, widths: list[float]) -> None:
    """Set per-layer widths, rebuild the chain and the read-out window."""
    if len(widths) != network.depth:
        raise DimensionError(f"expected {network.depth} widths, got {len(widths)}")
    for layer, (t_min, t_max) in zip(
        network.layers, chain_windows(widths, network.config.tau_c)
    ):
        layer.t_min, layer.t_max = t_min, t_max
    _attach_readout(network)


def _attach_readout(network: TtfsNetwork) -> None:
    """Move the read-out onto the last window, keeping its bias alpha*span/tau_c."""
    out = network.output
    old_span = out.t_read - out.t_min
    if network.layers:
        out.t_min = network.layers[-1].t_min
        out.t_read = network.layers[-1].t_max
    else:
        out.t_min = network.config.t_min_0
        out.t_read = network.config.t_max_0
    new_span = out.t_read - out.t_min
    if old_span > 0.0 and new_span != old_span:
        out.alpha = out.alpha * (old_span / new_span)


def recompute_base_thresholds(network: TtfsNetwork) -> None:
    """Re-derive θ̃ of every layer from its current slope and width."""
    tau_c = network.config.tau_c
    for layer in network.layers:
        layer.theta_tilde = base_threshold(layer.slope(), layer.width, tau_c)


def shift_downstream(network: TtfsNetwork, index: int, delta: float) -> None:
    """Move t_max of layer ``index`` and every deeper window by ``delta``."""
    layers = network.layers
    layers[index].t_max += delta
    for layer in layers[index + 1 :]:
        layer.t_min += delta
        layer.t_max += delta
    _attach_readout(network)


def _min_width(network: TtfsNetwork, config: SchedulerConfig) -> float:
    return config.min_width if config.min_width is not None else network.config.tau_c


def init_windows_and_thresholds(
    network: TtfsNetwork, sample_batch: np.ndarray, config: SchedulerConfig
) -> TtfsNetwork:
    """
    Recursive window/threshold initialisation on a calibration batch.

    Layer by layer: t_min = previous t_max, V0 = (1 + zeta) * max V_i(t_min)
    over neurons and samples, t_max = t_min + tau_c * V0 / B0, θ̃ = B * width / tau_c.
    A layer whose potentials are all <= 0 at t_min gets ``min_width``.
    """
    tau_c = network.config.tau_c
    spikes = encode_ttfs(np.atleast_2d(sample_batch), network.config)
    t_min = network.config.t_max_0

    for index, layer in enumerate(network.layers, start=1):
        potential_at_t_min = (t_min - spikes.times) @ layer.W.T / tau_c
        v_max = float(potential_at_t_min.max()) if potential_at_t_min.size else 0.0
        if v_max > 0.0:
            width = tau_c * (1.0 + config.zeta) * v_max / config.B0
        else:
            width = _min_width(network, config)
            logger.warning(
                f"[SCHEDULER_WARN] layer {index}: no positive potential at t_min, "
                f"using minimum width {width}"
            )
        layer.t_min, layer.t_max = t_min, t_min + width
        layer.theta_tilde = base_threshold(layer.slope(), width, tau_c)
        spikes, _, _ = layer_forward(spikes, layer, tau_c)
        t_min = layer.t_max

    _attach_readout(network)
    logger.info(f"windows initialised, latency {network.latency:.4f}")
    return network


def gather_layer_stats(network: TtfsNetwork, trace: ForwardTrace) -> list[LayerStats]:
    """Per hidden layer: earliest spike over the batch and max potential at t_min."""
    tau_c = network.config.tau_c
    stats = []
    for layer, lt in zip(network.layers, trace.layers):
        out = lt.output
        potential = (out.t_min - lt.input.times) @ layer.W.T / tau_c
        stats.append(
            LayerStats(
                min_spike_time=float(out.times.min()),
                max_potential_at_t_min=float(potential.max()),
                t_min=out.t_min,
                t_max=out.t_max,
            )
        )
    return stats


def compute_tmax_delta(stats: LayerStats, width: float, config: SchedulerConfig) -> float:
    """
    Adaptive t_max rule (expansion only).

    Δ = γ (t_max - min t) - (t_max - t_min) when the width is below
    γ (t_max - min t), else 0.
    """
    target = config.gamma * stats.earliest_gap
    return target - width if width < target else 0.0


def adapt_tmax(
    network: TtfsNetwork, index: int, stats: LayerStats, config: SchedulerConfig
) -> float:
    """Apply the adaptive rule to hidden layer ``index`` (0-based) and shift downstream."""
    delta = compute_tmax_delta(stats, network.layers[index].width, config)
    if delta > 0.0:
        shift_downstream(network, index, delta)
        recompute_base_thresholds(network)
    return delta


def adapt_windows(
    network: TtfsNetwork, trace: ForwardTrace, config: SchedulerConfig
) -> list[float]:
    """Adaptive rule over all hidden layers, sequentially from the first."""
    if not config.adaptive:
        return [0.0] * network.depth
    stats = gather_layer_stats(network, trace)
    deltas = [adapt_tmax(network, i, s, config) for i, s in enumerate(stats)]
    if any(deltas):
        logger.debug(f"t_max expanded: {[round(d, 6) for d in deltas]}")
    return deltas


def tighten_for_inference(network: TtfsNetwork, sample_batch: np.ndarray) -> TtfsNetwork:
    """
    Shrink each window so the earliest calibration spike lands just after t_min.

    Spike offsets t_max - t are unchanged by the shrink, so decoded
    activations and logits are preserved on the calibration batch.
    """
    trace = network_forward(np.atleast_2d(sample_batch), network)
    stats = gather_layer_stats(network, trace)
    tau_c = network.config.tau_c
    widths = []
    for layer, s in zip(network.layers, stats):
        tight = s.earliest_gap + TIGHTEN_MARGIN * tau_c
        if s.earliest_gap > 0.0 and tight < layer.width:
            widths.append(tight)
        else:
            widths.append(layer.width)
    before = network.latency
    rechain(network, widths)
    recompute_base_thresholds(network)
    logger.info(f"latency tightened {before:.4f} -> {network.latency:.4f}")
    return network


def forward_with_adaptation(
    network: TtfsNetwork,
    x: np.ndarray,
    config: SchedulerConfig,
    perturb=None,
    max_rounds: int = 8,
) -> tuple[ForwardTrace, list[float]]:
    """
    Forward pass followed by the adaptive t_max rule.

    When a window expands the batch is re-run so that the returned trace
    matches the current windows. Repeats while spikes stay clamped at t_min.
    """
    trace = network_forward(x, network, perturb)
    total = [0.0] * network.depth
    for _ in range(max_rounds):
        deltas = adapt_windows(network, trace, config)
        if not any(deltas):
            break
        total = [a + b for a, b in zip(total, deltas)]
        trace = network_forward(x, network, perturb)
        if not trace.saturated_count:
            break
    return trace, total
