"""
診断モジュール

学習ダイナミクスの定量解析:
  - 層ごとの Jacobian (1/B)·W の固有値スペクトル
  - 深さ方向の勾配ノルムプロファイル
  - SNN と写像先 ANN の重みコサイン類似度（ロックステップ学習の軌跡）
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from src.bridge import relu_backward, relu_forward, snn_to_ann
from src.dynamics import network_forward, softmax_cross_entropy
from src.errors import ConfigError
from src.learning import OptimizerKind, OptimizerState, apply_update, backward
from src.linalg import eig_spectrum
from src.log_config import get_logger
from src.models import AnnLayer, Dataset, TtfsNetwork
from src.scheduler import SchedulerConfig, forward_with_adaptation

logger = get_logger(__name__)

TRAJECTORY_COLUMNS = [
    "step",
    "layer",
    "cosine",
    "snn_loss",
    "ann_loss",
    "snn_acc",
    "ann_acc",
]


@dataclass
class SpectrumReport:
    """Eigenvalues per hidden layer; ``None`` for skipped (non-square) layers."""

    spectra: list[Optional[np.ndarray]]
    radii: list[Optional[float]]
    fraction_outside: list[Optional[float]]
    notes: list[str] = field(default_factory=list)

    @property
    def max_radius(self) -> float:
        values = [r for r in self.radii if r is not None]
        return max(values) if values else 0.0

    def to_dict(self) -> dict:
        return {
            "layers": [
                {
                    "layer": index,
                    "spectral_radius": radius,
                    "fraction_outside_unit_circle": frac,
                    "eigenvalues": None
                    if spectrum is None
                    else [[float(z.real), float(z.imag)] for z in spectrum],
                }
                for index, (spectrum, radius, frac) in enumerate(
                    zip(self.spectra, self.radii, self.fraction_outside), start=1
                )
            ],
            "notes": self.notes,
        }


def matrix_spectrum_report(matrices: Sequence[np.ndarray]) -> SpectrumReport:
    """Spectra of a list of per-layer matrices, skipping non-square ones."""
    spectra, radii, fractions, notes = [], [], [], []
    for index, m in enumerate(matrices, start=1):
        if m.shape[0] != m.shape[1]:
            notes.append(f"layer {index}: shape {m.shape} is not square, skipped")
            spectra.append(None)
            radii.append(None)
            fractions.append(None)
            continue
        spectrum = eig_spectrum(m)
        modulus = np.abs(spectrum)
        spectra.append(spectrum)
        radii.append(float(modulus.max()) if modulus.size else 0.0)
        fractions.append(float(np.mean(modulus > 1.0)) if modulus.size else 0.0)
    for note in notes:
        logger.info(f"[DIAG] {note}")
    return SpectrumReport(spectra, radii, fractions, notes)


def jacobian_spectrum_report(
    network: TtfsNetwork, batch: Optional[np.ndarray] = None, masked: bool = False
) -> SpectrumReport:
    """
    Eigenvalues of (1/B^(n))·W^(n) for every hidden layer.

    With ``masked`` the batch-averaged M·(1/B)·W is used instead, which
    needs a calibration ``batch``.
    """
    matrices = [layer.W / layer.slope()[:, None] for layer in network.layers]
    if masked:
        if batch is None:
            raise ConfigError("masked spectrum needs a calibration batch")
        trace = network_forward(np.atleast_2d(batch), network)
        matrices = [
            np.atleast_2d(lt.output.effective_mask).mean(axis=0)[:, None] * m
            for lt, m in zip(trace.layers, matrices)
        ]
    return matrix_spectrum_report(matrices)


def ann_spectrum_report(ann: Sequence[AnnLayer]) -> SpectrumReport:
    """Same report on the hidden weights w^(n) of a ReLU network."""
    return matrix_spectrum_report([layer.w for layer in ann[:-1]])


@dataclass
class GradientProfile:
    norms: list[float]  # layer 1..N
    growth_rate: float  # per layer, from the output towards the input


def gradient_norm_profile(chain: Sequence[np.ndarray]) -> GradientProfile:
    """
    L2 norms of dL/dt^(n) and their geometric growth rate with depth.

    The rate is exp of the slope of a least-squares fit of log-norm against
    distance from the output; 1.0 when fewer than two layers carry gradient.
    """
    norms = [float(np.linalg.norm(g)) for g in chain]
    depth = np.arange(len(norms))[::-1]
    positive = np.array(norms) > 0.0
    if positive.sum() < 2:
        return GradientProfile(norms=norms, growth_rate=1.0)
    slope = np.polyfit(depth[positive], np.log(np.array(norms)[positive]), 1)[0]
    return GradientProfile(norms=norms, growth_rate=float(np.exp(slope)))


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))


def weight_cosine_similarity(
    network: TtfsNetwork, ann: Sequence[AnnLayer]
) -> list[float]:
    """Cosine between mapped weights W/B and w, per hidden layer then read-out."""
    mapped = [layer.W / layer.slope()[:, None] for layer in network.layers]
    mapped.append(network.output.W)
    return [_cosine(m, layer.w) for m, layer in zip(mapped, ann)]


@dataclass
class TrajectoryReport:
    """One row per logged step and layer (fixed column schema)."""

    rows: list[dict] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=TRAJECTORY_COLUMNS)

    def max_loss_gap(self) -> float:
        df = self.frame()
        if df.empty:
            return 0.0
        return float((df["snn_loss"] - df["ann_loss"]).abs().max())

    def final_cosines(self) -> list[float]:
        df = self.frame()
        if df.empty:
            return []
        last = df[df["step"] == df["step"].max()]
        return last.sort_values("layer")["cosine"].tolist()

    def mean_cosine_by_step(self) -> pd.Series:
        return self.frame().groupby("step")["cosine"].mean()


def _ann_sgd(ann: list[AnnLayer], dw, db, lr: float) -> None:
    # read-out bias frozen, matching the untrained SNN read-out ramp
    for index, layer in enumerate(ann):
        layer.w = layer.w - lr * dw[index]
        if index < len(ann) - 1:
            layer.b = layer.b - lr * db[index]


def run_dual_track(
    network: TtfsNetwork,
    dataset: Dataset,
    steps: int,
    lr: float,
    batch: int,
    scheduler: Optional[SchedulerConfig] = None,
    stride: int = 1,
    seed: int = 0,
) -> TrajectoryReport:
    """
    Train the SNN and its mapped ReLU network side by side with plain SGD.

    Both start from the same weights (the ANN is the image of ``network``)
    and see the same batches. The input network is not modified.
    """
    snn = network.copy()
    ann = snn_to_ann(snn)
    scheduler = scheduler or SchedulerConfig()
    state = OptimizerState(kind=OptimizerKind.SGD)
    order = np.random.default_rng(seed).permutation(len(dataset))
    report = TrajectoryReport()

    for step in range(steps):
        start = (step * batch) % len(dataset)
        idx = order[np.arange(start, start + batch) % len(dataset)]
        xb, yb = dataset.images[idx], dataset.labels[idx]

        trace, _ = forward_with_adaptation(snn, xb, scheduler)
        grads = backward(trace, snn, yb)
        snn_acc = float(np.mean(np.argmax(trace.potentials, axis=1) == yb))
        apply_update(snn, grads, state, lr)

        activations, logits = relu_forward(ann, xb)
        ann_loss, dlogits = softmax_cross_entropy(logits, yb)
        ann_acc = float(np.mean(np.argmax(logits, axis=1) == yb))
        dw, db = relu_backward(ann, activations, dlogits)
        _ann_sgd(ann, dw, db, lr)

        if step % stride == 0 or step == steps - 1:
            for layer, cos in enumerate(weight_cosine_similarity(snn, ann), start=1):
                report.rows.append(
                    {
                        "step": step,
                        "layer": layer,
                        "cosine": cos,
                        "snn_loss": grads.loss,
                        "ann_loss": ann_loss,
                        "snn_acc": snn_acc,
                        "ann_acc": ann_acc,
                    }
                )
    logger.info(
        f"dual track: {steps} steps, max loss gap {report.max_loss_gap():.3e}, "
        f"final cosines {[round(c, 6) for c in report.final_cosines()]}"
    )
    return report


def write_trajectory_csv(report: TrajectoryReport, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.frame().to_csv(path, index=False)
    return path


def write_spectrum_json(
    report: SpectrumReport, path: str | Path, extra: Optional[dict] = None
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
    return path
