"""
TTFS ダイナミクスモジュール

入力符号化、閉形式のスパイク時刻計算（t_max での強制発火を含む）、
出力層ポテンシャル、および時間刻み積分による検証用オラクルを提供します。
"""

from typing import Callable, Optional

import numpy as np
from scipy.special import log_softmax, softmax

from src.errors import DimensionError, EncodingDomainError, InvalidSlopeError
from src.log_config import get_logger
from src.models import (
    AlphaPolicy,
    ForwardTrace,
    LayerTrace,
    NetworkConfig,
    OutputLayer,
    SnnLayer,
    SpikeVector,
    TtfsNetwork,
)

logger = get_logger(__name__)

# (spikes, layer index) -> spikes; index 0 is the input encoding
SpikeHook = Callable[[SpikeVector, int], SpikeVector]


def encode_ttfs(x: np.ndarray, config: NetworkConfig) -> SpikeVector:
    """
    Intensities in [0, 1] -> input spike times tau_c * (1 - x).

    Raises:
        EncodingDomainError: any value outside [0, 1] (caller must normalise)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and (not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
        raise EncodingDomainError(
            f"inputs must lie in [0, 1], got range [{x.min()}, {x.max()}]"
        )
    times = config.tau_c * (1.0 - x)
    return SpikeVector(
        times=times,
        mask=np.ones(times.shape, dtype=bool),
        saturated_low=np.zeros(times.shape, dtype=bool),
        t_min=config.t_min_0,
        t_max=config.t_max_0,
    )


def decode_ttfs(spikes: SpikeVector, t_max: float, tau_c: float) -> np.ndarray:
    """Mapping identity: x = (t_max - t) / tau_c. Forced spikes decode to 0."""
    return (t_max - spikes.times) / tau_c


def layer_forward(
    inputs: SpikeVector, layer: SnnLayer, tau_c: float
) -> tuple[SpikeVector, np.ndarray, np.ndarray]:
    """
    Closed-form spike times of one hidden layer.

    Candidate t_i = A_i / B_i with B_i = alpha_i + sum_k W_ik and
    A_i = tau_c*theta_i + alpha_i*t_min + sum_j W_ij*t_j. Candidates at or
    after t_max are forced to t_max (mask False); candidates before t_min are
    clamped to t_min and flagged ``saturated_low``.

    Returns:
        (output spikes, A, B)

    Raises:
        InvalidSlopeError: B_i <= 0 under the CONSTANT policy
    """
    B = layer.slope()
    if layer.policy == AlphaPolicy.CONSTANT and np.any(B <= 0.0):
        bad = np.flatnonzero(B <= 0.0)
        raise InvalidSlopeError(
            f"slope-at-threshold B <= 0 for neurons {bad[:10].tolist()}"
        )

    # alpha*t_min + W@t == B*t_min + W@(t - t_min) since alpha = B - sum(W)
    A = tau_c * layer.threshold + B * layer.t_min + (inputs.times - layer.t_min) @ layer.W.T
    candidate = A / B

    forced = candidate >= layer.t_max
    low = candidate < layer.t_min
    times = np.where(forced, layer.t_max, np.where(low, layer.t_min, candidate))

    spikes = SpikeVector(
        times=times,
        mask=~forced,
        saturated_low=low,
        t_min=layer.t_min,
        t_max=layer.t_max,
    )
    return spikes, A, B


def output_potentials(spikes: SpikeVector, out: OutputLayer, tau_c: float) -> np.ndarray:
    """Read-out potentials V_m at t_read (non-spiking integrators)."""
    ramp = out.alpha * (out.t_read - out.t_min)
    return (ramp + (out.t_read - spikes.times) @ out.W.T) / tau_c


def network_forward(
    x: np.ndarray, network: TtfsNetwork, perturb: Optional[SpikeHook] = None
) -> ForwardTrace:
    """
    Encode -> hidden layers -> read-out.

    Args:
        x: intensities, shape (features,) or (samples, features)
        network: network with a consistent window chain
        perturb: optional hook applied to the encoding and each hidden output

    Returns:
        ForwardTrace with every layer's spikes, A and B and the read-out V
    """
    if not network.check_chain():
        raise DimensionError("window chain broken: t_min^(n) must equal t_max^(n-1)")
    tau_c = network.config.tau_c

    encoded = encode_ttfs(x, network.config)
    if perturb is not None:
        encoded = perturb(encoded, 0)

    spikes = encoded
    layer_traces = []
    for index, layer in enumerate(network.layers, start=1):
        out, A, B = layer_forward(spikes, layer, tau_c)
        if perturb is not None:
            out = perturb(out, index)
        layer_traces.append(LayerTrace(input=spikes, output=out, A=A, B=B))
        spikes = out

    trace = ForwardTrace(
        encoded=encoded,
        layers=layer_traces,
        potentials=output_potentials(spikes, network.output, tau_c),
    )
    if trace.saturated_count:
        logger.warning(
            f"[DYNAMICS_WARN] {trace.saturated_count} spikes clamped at t_min "
            "(window too narrow for current parameters)"
        )
    return trace


def predict(network: TtfsNetwork, x: np.ndarray) -> np.ndarray:
    """Class index with the largest read-out potential."""
    return np.argmax(network_forward(x, network).potentials, axis=-1)


def softmax_cross_entropy(
    V: np.ndarray, label: np.ndarray | int
) -> tuple[float, np.ndarray]:
    """
    Cross-entropy of softmax(V) and its gradient.

    For a batch (samples, classes) the loss is the mean over samples and the
    returned gradient is that of the mean.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        log_p = log_softmax(V)
        grad = softmax(V)
        grad[label] -= 1.0
        return float(-log_p[label]), grad

    labels = np.asarray(label, dtype=np.int64)
    rows = np.arange(V.shape[0])
    log_p = log_softmax(V, axis=1)
    grad = softmax(V, axis=1)
    grad[rows, labels] -= 1.0
    return float(-log_p[rows, labels].mean()), grad / V.shape[0]


def integrate_potential_oracle(
    inputs: SpikeVector, layer: SnnLayer, tau_c: float, dt: float
) -> SpikeVector:
    """
    Time-stepped integration of the membrane dynamics (verification oracle).

    Steps the piecewise-linear potential with step ``dt`` from the earliest
    input spike to t_max. The threshold is inactive before t_min; the first
    crossing afterwards is located by linear interpolation within the step.
    Neurons still below threshold at t_max are forced there.
    """
    t_in = np.asarray(inputs.times, dtype=np.float64)
    if t_in.ndim != 1:
        raise DimensionError("oracle integrates one sample at a time")
    W, alpha, theta = layer.W, layer.alpha, layer.threshold
    t_min, t_max = layer.t_min, layer.t_max
    n_out = W.shape[0]

    def advance(v: np.ndarray, start: float, stop: float) -> np.ndarray:
        # slope is piecewise constant; integrate each Heaviside term over the step
        active_inputs = np.clip(stop - np.maximum(start, t_in), 0.0, None)
        ramp = max(0.0, stop - max(start, t_min))
        return v + (alpha * ramp + W @ active_inputs) / tau_c

    v = np.zeros(n_out)
    now = min(float(t_in.min()) if t_in.size else t_min, t_min)
    while now < t_min:
        nxt = min(now + dt, t_min)
        v = advance(v, now, nxt)
        now = nxt

    times = np.full(n_out, t_max)
    fired = v >= theta
    times[fired] = t_min
    saturated = fired.copy()

    now = t_min
    while now < t_max and not fired.all():
        nxt = min(now + dt, t_max)
        v_next = advance(v, now, nxt)
        crossing = ~fired & (v < theta) & (v_next >= theta)
        if crossing.any():
            frac = (theta[crossing] - v[crossing]) / (v_next[crossing] - v[crossing])
            times[crossing] = now + frac * (nxt - now)
            fired |= crossing
        v = v_next
        now = nxt

    mask = times < t_max
    times[~mask] = t_max
    return SpikeVector(
        times=times,
        mask=mask,
        saturated_low=saturated,
        t_min=t_min,
        t_max=t_max,
    )
