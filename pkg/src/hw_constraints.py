"""
ハードウェア制約モジュール

実機デプロイ向けの摂動と実現可能性チェック:
  - スパイク時刻ジッタ（ガウスノイズ）
  - 時間量子化（窓上の一様グリッド）
  - 重み量子化（パーセンタイルクリップ + 2^q レベル）
  - レイテンシ削減（ANN 活性のパーセンタイルで窓を縮小）
  - 二重指数カーネルの線形化妥当性チェック
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.bridge import relu_forward, snn_to_ann
from src.constants import (
    DEFAULT_WEIGHT_CLIP,
    DOUBLE_EXP_LINEAR_FRACTION,
    LOW_BIT_WEIGHT_CLIP,
    TIGHTEN_MARGIN,
)
from src.errors import ConfigError
from src.log_config import get_logger
from src.models import SpikeVector, TtfsNetwork
from src.scheduler import rechain, recompute_base_thresholds

logger = get_logger(__name__)


def default_weight_clip(bits: int) -> tuple[float, float]:
    """1st/99th percentiles, 4th/96th for four bits or fewer."""
    return LOW_BIT_WEIGHT_CLIP if bits <= 4 else DEFAULT_WEIGHT_CLIP


@dataclass
class QuantSpec:
    """One set of deployment constraints; unset fields are not applied."""

    time_steps: Optional[int] = None
    weight_bits: Optional[int] = None
    percentile_clip: Optional[tuple[float, float]] = None
    jitter_sd: float = 0.0
    latency_percentile: Optional[float] = None

    def __post_init__(self):
        if self.time_steps is not None and self.time_steps < 2:
            raise ConfigError(f"time_steps must be >= 2, got {self.time_steps}")
        if self.weight_bits is not None and self.weight_bits < 2:
            raise ConfigError(f"weight_bits must be >= 2, got {self.weight_bits}")
        if self.percentile_clip is not None:
            low, high = self.percentile_clip
            if not 0.0 <= low < high <= 100.0:
                raise ConfigError(f"invalid percentile clip {self.percentile_clip}")
        if self.jitter_sd < 0.0:
            raise ConfigError(f"jitter_sd must be >= 0, got {self.jitter_sd}")
        if self.latency_percentile is not None and not (
            0.0 < self.latency_percentile <= 100.0
        ):
            raise ConfigError(
                f"latency_percentile must be in (0, 100], got {self.latency_percentile}"
            )

    @property
    def is_empty(self) -> bool:
        return (
            self.time_steps is None
            and self.weight_bits is None
            and self.jitter_sd == 0.0
            and self.latency_percentile is None
        )

    def weight_clip(self) -> tuple[float, float]:
        if self.percentile_clip is not None:
            return self.percentile_clip
        return default_weight_clip(self.weight_bits or 8)


@dataclass
class DoubleExpConfig:
    """Time constants of the double-exponential synaptic kernel."""

    tau_1: float
    tau_2: float

    def __post_init__(self):
        if not (self.tau_1 > 0 and self.tau_2 >= 2.0 * self.tau_1):
            raise ConfigError(
                f"need tau_2 >= 2*tau_1 > 0, got tau_1={self.tau_1}, tau_2={self.tau_2}"
            )


@dataclass
class DoubleExpReport:
    passed: bool
    max_span: float
    binding_layer: Optional[int]  # 1-based hidden layer with the largest span
    min_tau_1: float
    margin: float
    spans: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_span": self.max_span,
            "binding_layer": self.binding_layer,
            "min_tau_1": self.min_tau_1,
            "margin": self.margin,
            "spans": self.spans,
        }


def _restate(spikes: SpikeVector, times: np.ndarray, low_clipped: np.ndarray) -> SpikeVector:
    return SpikeVector(
        times=times,
        mask=times < spikes.t_max,
        saturated_low=spikes.saturated_low | low_clipped,
        t_min=spikes.t_min,
        t_max=spikes.t_max,
    )


def add_spike_jitter(
    spikes: SpikeVector, sd: float, rng: int | np.random.Generator | None = None
) -> SpikeVector:
    """
    Add N(0, sd^2) to every spike time, clamp to the window and recompute masks.

    A jittered spike that reaches t_max becomes forced.
    """
    if sd < 0:
        raise ConfigError(f"jitter sd must be >= 0, got {sd}")
    if sd == 0.0:
        return spikes.copy()
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    noisy = spikes.times + gen.normal(0.0, sd, size=np.shape(spikes.times))
    times = np.clip(noisy, spikes.t_min, spikes.t_max)
    return _restate(spikes, times, noisy < spikes.t_min)


def quantize_times(
    spikes: SpikeVector,
    steps: int,
    interval: Optional[tuple[float, float]] = None,
) -> SpikeVector:
    """
    Snap spike times onto ``steps`` uniform intervals of ``interval``.

    A fired spike takes one of the ``steps`` levels low + k * width / steps,
    so the error is at most width / (2 * steps). The interval end is the
    extra level meaning "no spike": a spike rounded onto the window end
    becomes forced. Times before the interval start are clipped to it; the
    interval defaults to the layer window.
    """
    if steps < 2:
        raise ConfigError(f"time quantization needs >= 2 steps, got {steps}")
    low, high = interval if interval is not None else (spikes.t_min, spikes.t_max)
    spacing = (high - low) / steps
    clipped = np.clip(spikes.times, low, high)
    times = low + np.rint((clipped - low) / spacing) * spacing
    times = np.minimum(times, spikes.t_max)
    return _restate(spikes, times, spikes.times < low)


@dataclass(frozen=True)
class QuantGrid:
    """
    Affine 2^bits-level grid on [low, high] mapped to signed integers.

    Integer q stands for low + (q + 2^(bits-1)) * scale, so both clip ends are
    levels and 0 is one only when it happens to fall on the grid.
    """

    low: float
    high: float
    bits: int

    @classmethod
    def from_weights(
        cls, W: np.ndarray, bits: int, percentile_clip: Optional[tuple] = None
    ) -> "QuantGrid":
        clip = percentile_clip if percentile_clip is not None else default_weight_clip(bits)
        low, high = np.percentile(W, clip)
        return cls(low=float(low), high=float(high), bits=bits)

    @property
    def levels(self) -> int:
        return 2**self.bits

    @property
    def offset(self) -> int:
        return 2 ** (self.bits - 1)

    @property
    def scale(self) -> float:
        return (self.high - self.low) / (self.levels - 1)

    @property
    def degenerate(self) -> bool:
        return self.scale == 0.0

    def quantize(self, W: np.ndarray) -> np.ndarray:
        """Integers in [-2^(bits-1), 2^(bits-1) - 1]."""
        if self.degenerate:
            return np.zeros(np.shape(W), dtype=np.int64)
        steps = np.rint((np.clip(W, self.low, self.high) - self.low) / self.scale)
        return steps.astype(np.int64) - self.offset

    def dequantize(self, q: np.ndarray) -> np.ndarray:
        return self.low + (q + self.offset) * self.scale

    def apply(self, W: np.ndarray) -> np.ndarray:
        if self.degenerate:
            return np.array(W, dtype=np.float64)
        return self.dequantize(self.quantize(W))


def quantize_weights(
    W: np.ndarray, bits: int, percentile_clip: Optional[tuple] = None
) -> tuple[np.ndarray, QuantGrid]:
    """
    Percentile-clipped uniform quantization of one weight tensor.

    Returns:
        (dequantized weights used in forward, grid metadata)
    """
    if bits < 2:
        raise ConfigError(f"weight quantization needs >= 2 bits, got {bits}")
    grid = QuantGrid.from_weights(W, bits, percentile_clip)
    if grid.degenerate:
        logger.info("[QUANT_WARN] constant weight tensor, quantization skipped")
    return grid.apply(W), grid


def make_weight_grids(
    network: TtfsNetwork, bits: int, percentile_clip: Optional[tuple] = None
) -> list[QuantGrid]:
    """Grids for every hidden layer and the read-out, fixed from current weights."""
    weights = [layer.W for layer in network.layers] + [network.output.W]
    return [QuantGrid.from_weights(W, bits, percentile_clip) for W in weights]


def quantize_network_weights(
    network: TtfsNetwork, grids: Sequence[QuantGrid]
) -> TtfsNetwork:
    """Copy of ``network`` with every weight matrix snapped to its grid."""
    quantized = network.copy()
    for layer, grid in zip(quantized.layers, grids):
        layer.W = grid.apply(layer.W)
    quantized.output.W = grids[-1].apply(quantized.output.W)
    return quantized


def collect_ann_activations(network: TtfsNetwork, x: np.ndarray) -> list[np.ndarray]:
    """ReLU outputs x^(1..N) of the mapped ANN on a calibration batch."""
    activations, _ = relu_forward(snn_to_ann(network), np.atleast_2d(x))
    return activations[1:]


def reduce_latency(
    network: TtfsNetwork,
    percentile: float,
    activations: Sequence[np.ndarray],
    min_width: Optional[float] = None,
) -> TtfsNetwork:
    """
    Shrink each window to hold ``percentile`` of its layer's ANN activations.

    Larger activations are clipped at t_min. The ANN mapping of every neuron
    is unchanged, only its clipping level moves. A layer without positive
    activation keeps a window of ``min_width`` (default tau_c). Returns a new
    network.
    """
    if not 0.0 < percentile <= 100.0:
        raise ConfigError(f"percentile must be in (0, 100], got {percentile}")
    reduced = network.copy()
    tau_c = reduced.config.tau_c
    fallback = min_width if min_width is not None else tau_c
    if fallback <= 0.0:
        raise ConfigError(f"min_width must be > 0, got {fallback}")
    widths = []
    for index, act in enumerate(activations, start=1):
        level = float(np.percentile(act, percentile)) if np.size(act) else 0.0
        if level <= 0.0:
            logger.warning(
                f"[QUANT_WARN] layer {index}: no positive activation, width {fallback}"
            )
            widths.append(fallback)
        else:
            widths.append(tau_c * level + TIGHTEN_MARGIN * tau_c)
    before = reduced.latency
    rechain(reduced, widths)
    recompute_base_thresholds(reduced)
    logger.info(
        f"latency {before:.4f} -> {reduced.latency:.4f} at percentile {percentile}"
    )
    return reduced


def check_double_exp_validity(
    network: TtfsNetwork, cfg: DoubleExpConfig
) -> DoubleExpReport:
    """
    Linearized kernel validity: every span t_max^(n) - t_min^(n-1) must stay
    within half of tau_1 (t_min^(0) = 0).
    """
    spans = []
    prev_min = network.config.t_min_0
    for layer in network.layers:
        spans.append(layer.t_max - prev_min)
        prev_min = layer.t_min
    if not spans:
        return DoubleExpReport(True, 0.0, None, 0.0, DOUBLE_EXP_LINEAR_FRACTION * cfg.tau_1)
    binding = int(np.argmax(spans))
    max_span = spans[binding]
    limit = DOUBLE_EXP_LINEAR_FRACTION * cfg.tau_1
    return DoubleExpReport(
        passed=max_span <= limit,
        max_span=max_span,
        binding_layer=binding + 1,
        min_tau_1=max_span / DOUBLE_EXP_LINEAR_FRACTION,
        margin=limit - max_span,
        spans=spans,
    )


class JitterHook:
    """Forward hook adding Gaussian jitter to the encoding and every hidden layer."""

    def __init__(self, sd: float, seed: int | None = None):
        self.sd = sd
        self.rng = np.random.default_rng(seed)

    def __call__(self, spikes: SpikeVector, index: int) -> SpikeVector:
        return add_spike_jitter(spikes, self.sd, self.rng)


class TimeQuantHook:
    """Forward hook snapping spike times of every layer onto ``steps`` grid intervals."""

    def __init__(self, steps: int):
        if steps < 2:
            raise ConfigError(f"time quantization needs >= 2 steps, got {steps}")
        self.steps = steps

    def __call__(self, spikes: SpikeVector, index: int) -> SpikeVector:
        return quantize_times(spikes, self.steps)
