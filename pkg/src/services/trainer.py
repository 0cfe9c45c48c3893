"""
Trainer Service Module
ミニバッチ学習ループ: forward → t_max 適応 → 厳密 backward → 最適化ステップ。
制約付きファインチューニング（ジッタ / 時間量子化フック、重み量子化 QAT）にも対応します。
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from src.bridge import relu_forward
from src.dynamics import SpikeHook, network_forward
from src.hw_constraints import QuantGrid, quantize_network_weights
from src.learning import OptimizerState, apply_update, backward, lr_schedule
from src.log_config import get_logger
from src.models import AnnLayer, Dataset, TtfsNetwork
from src.run_history import append_metrics
from src.scheduler import (
    SchedulerConfig,
    forward_with_adaptation,
    recompute_base_thresholds,
)

logger = get_logger(__name__)

EVAL_CHUNK = 512


@dataclass
class TrainResult:
    epochs: int = 0
    iterations: int = 0
    train_loss: float = 0.0
    train_acc: float = 0.0
    test_acc: Optional[float] = None
    warnings: int = 0
    history: list[dict] = field(default_factory=list)


def deployed(network: TtfsNetwork, grids: Optional[Sequence[QuantGrid]]) -> TtfsNetwork:
    """The network actually run in forward (weights snapped when QAT is on)."""
    return quantize_network_weights(network, grids) if grids else network


def _sync_windows(src: TtfsNetwork, dst: TtfsNetwork) -> None:
    """Carry window moves of the deployed copy back; θ̃ follows dst's own slope."""
    for a, b in zip(src.layers, dst.layers):
        b.t_min, b.t_max = a.t_min, a.t_max
    dst.output.t_min, dst.output.t_read = src.output.t_min, src.output.t_read
    dst.output.alpha = src.output.alpha.copy()
    recompute_base_thresholds(dst)


def evaluate(
    network: TtfsNetwork,
    dataset: Dataset,
    perturb: Optional[SpikeHook] = None,
    grids: Optional[Sequence[QuantGrid]] = None,
) -> float:
    """Classification accuracy of the SNN under the given deployment constraints."""
    if len(dataset) == 0:
        return 0.0
    net = deployed(network, grids)
    correct = 0
    for start in range(0, len(dataset), EVAL_CHUNK):
        x = dataset.images[start : start + EVAL_CHUNK]
        y = dataset.labels[start : start + EVAL_CHUNK]
        potentials = network_forward(x, net, perturb).potentials
        correct += int(np.sum(np.argmax(potentials, axis=1) == y))
    return correct / len(dataset)


def evaluate_ann(ann: Sequence[AnnLayer], dataset: Dataset) -> float:
    if len(dataset) == 0:
        return 0.0
    _, logits = relu_forward(ann, dataset.images)
    return float(np.mean(np.argmax(logits, axis=1) == dataset.labels))


def train_network(
    network: TtfsNetwork,
    train: Dataset,
    test: Optional[Dataset],
    *,
    epochs: int,
    batch_size: int,
    lr0: float,
    state: OptimizerState,
    scheduler: SchedulerConfig,
    rng: np.random.Generator,
    perturb: Optional[SpikeHook] = None,
    grids: Optional[Sequence[QuantGrid]] = None,
    out_dir: Optional[str] = None,
    trial: int = 0,
) -> TrainResult:
    """
    Train ``network`` in place.

    With ``grids`` the forward/backward run on the snapped copy and the update
    lands on the float weights of ``network`` (straight-through quantizer).
    """
    result = TrainResult()
    n = len(train)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        losses, hits, seen, saturated = [], 0, 0, 0
        dtmax = np.zeros(network.depth)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = train.images[idx], train.labels[idx]

            net = deployed(network, grids)
            trace, deltas = forward_with_adaptation(net, xb, scheduler, perturb)
            if net is not network and any(deltas):
                _sync_windows(net, network)
            grads = backward(trace, net, yb)
            apply_update(network, grads, state, lr_schedule(lr0, result.iterations))
            result.iterations += 1

            losses.append(grads.loss * len(idx))
            hits += int(np.sum(np.argmax(trace.potentials, axis=1) == yb))
            seen += len(idx)
            dtmax += deltas
            if trace.saturated_count:
                saturated += trace.saturated_count
                result.warnings += 1

        result.epochs = epoch
        result.train_loss = float(np.sum(losses) / max(seen, 1))
        result.train_acc = hits / max(seen, 1)
        result.test_acc = evaluate(network, test, perturb, grids) if test is not None else None

        row = {
            "trial": trial,
            "epoch": epoch,
            "step": result.iterations,
            "train_loss": result.train_loss,
            "train_acc": result.train_acc,
            "test_acc": result.test_acc,
            "saturated": saturated,
            "warnings": result.warnings,
            **{f"dtmax_{k}": float(d) for k, d in enumerate(dtmax, start=1)},
        }
        result.history.append(row)
        if out_dir is not None:
            append_metrics(out_dir, row, network.depth)
        logger.info(
            f"epoch {epoch}: loss {result.train_loss:.4f}, train acc "
            f"{result.train_acc:.4f}, test acc {result.test_acc}, latency {network.latency:.3f}"
        )
    return result
