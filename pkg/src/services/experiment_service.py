"""
Experiment Service Module
train / finetune / convert / diagnose の各モードを組み立てて実行し、
メトリクス・サマリー・チェックポイントを出力ディレクトリに書き出します。
"""

import json
import time
from pathlib import Path
from typing import Optional

import numpy as np

from src.bridge import (
    ann_to_snn,
    ann_windows_from_activations,
    check_equivalence,
    init_ann,
    snn_to_ann,
)
from src.checkpoint_storage import load_checkpoint, save_checkpoint
from src.constants import DEFAULT_TIME_PERCENTILE
from src.data_provider import DataProvider
from src.diagnostics import (
    gradient_norm_profile,
    jacobian_spectrum_report,
    run_dual_track,
    write_spectrum_json,
    write_trajectory_csv,
)
from src.dynamics import SpikeHook, network_forward
from src.errors import ConfigError, TtfsError
from src.hw_constraints import (
    JitterHook,
    TimeQuantHook,
    collect_ann_activations,
    make_weight_grids,
    reduce_latency,
)
from src.learning import OptimizerState, backward
from src.log_config import get_logger
from src.models import AlphaPolicy, Dataset, TtfsNetwork
from src.run_history import RunSummary, save_summary
from src.scheduler import (
    SchedulerConfig,
    chain_windows,
    init_windows_and_thresholds,
    tighten_for_inference,
)
from src.services.trainer import evaluate, evaluate_ann, train_network
from src.settings_storage import ExperimentConfig

logger = get_logger(__name__)

CALIBRATION_SAMPLES = 256
SYNTHETIC_TEST_FRACTION = 0.2


def load_datasets(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """学習・テスト用データセットを設定に従って読み込みます。"""
    data = config.data
    if data.source == "synthetic":
        full = DataProvider.synthetic_dataset(
            data.synthetic_samples,
            data.synthetic_features,
            data.synthetic_classes,
            seed=config.training.seed,
        )
        cut = int(len(full) * (1.0 - SYNTHETIC_TEST_FRACTION))
        train = Dataset(full.images[:cut], full.labels[:cut], "train")
        test = Dataset(full.images[cut:], full.labels[cut:], "test")
    else:
        train = DataProvider.load_mnist_split(data.data_dir, "train")
        test = DataProvider.load_mnist_split(data.data_dir, "test")

    if config.training.max_train_samples:
        train = train.subset(config.training.max_train_samples)
    if config.training.max_test_samples:
        test = test.subset(config.training.max_test_samples)

    features = config.network.layer_sizes[0]
    if train.num_features != features:
        raise ConfigError(
            f"dataset has {train.num_features} features, network expects {features}"
        )
    return train, test


def build_network(
    config: ExperimentConfig, calibration: np.ndarray, rng: np.random.Generator
) -> TtfsNetwork:
    """
    Fresh SNN: standard ReLU init mapped through the inverse map, then
    window/threshold initialisation on the calibration batch.
    """
    net_cfg = config.network
    constant = net_cfg.alpha_policy == AlphaPolicy.CONSTANT
    ann = init_ann(net_cfg.layer_sizes, rng, net_cfg.init_scale, zero_row_sum=constant)
    depth = len(net_cfg.layer_sizes) - 2
    windows = chain_windows([net_cfg.tau_c] * depth, net_cfg.tau_c)
    network = ann_to_snn(
        ann, net_cfg.alpha_policy, windows, net_cfg.tau_c, alpha=net_cfg.alpha_value
    )
    return init_windows_and_thresholds(network, calibration, config.scheduler)


def _network_from_checkpoint(
    config: ExperimentConfig, calibration: np.ndarray
) -> tuple[TtfsNetwork, Optional[list]]:
    """SNN checkpoints load as-is; ANN checkpoints go through the exact mapping."""
    path = config.training.checkpoint
    if path is None:
        raise ConfigError(f"mode {config.mode} needs training.checkpoint")
    ckpt = load_checkpoint(path)
    if ckpt.kind == "snn":
        return ckpt.network, None
    windows = ann_windows_from_activations(
        ckpt.ann, calibration, config.scheduler.zeta, ckpt.tau_c
    )
    network = ann_to_snn(
        ckpt.ann,
        config.network.alpha_policy,
        windows,
        ckpt.tau_c,
        alpha=config.network.alpha_value,
    )
    return network, ckpt.ann


def _compose(hooks: list[SpikeHook]) -> Optional[SpikeHook]:
    if not hooks:
        return None

    def hook(spikes, index):
        for h in hooks:
            spikes = h(spikes, index)
        return spikes

    return hook


def _reference_ann_acc(network: TtfsNetwork, test: Dataset) -> Optional[float]:
    try:
        return evaluate_ann(snn_to_ann(network), test)
    except TtfsError as e:
        logger.warning(f"[EXPERIMENT_WARN] no reference ANN: {e}")
        return None


def _run_train(config, train, test, rng, out_dir, trial, seed) -> RunSummary:
    calibration = train.images[:CALIBRATION_SAMPLES]
    network = build_network(config, calibration, rng)
    state = OptimizerState(kind=config.optimizer)
    result = train_network(
        network,
        train,
        test,
        epochs=config.training.epochs,
        batch_size=config.training.batch_size,
        lr0=config.lr0,
        state=state,
        scheduler=config.scheduler,
        rng=rng,
        out_dir=out_dir,
        trial=trial,
    )
    trained_latency = network.latency
    tighten_for_inference(network, calibration)
    save_checkpoint(network, Path(out_dir) / f"checkpoint_seed{seed}.ttfs", state, rng)
    return RunSummary(
        mode="train",
        seed=seed,
        train_acc=result.train_acc,
        test_acc=evaluate(network, test),
        ann_test_acc=_reference_ann_acc(network, test),
        latency=network.latency,
        warnings=result.warnings,
        details={"latency_before_tighten": trained_latency, "epochs": result.epochs},
    )


def _run_finetune(config, train, test, rng, out_dir, trial, seed) -> RunSummary:
    calibration = train.images[:CALIBRATION_SAMPLES]
    network, _ = _network_from_checkpoint(config, calibration)
    spec = config.constraints
    scheduler = config.scheduler
    clean_acc = evaluate(network, test)

    hooks: list[SpikeHook] = []
    grids = None
    window_percentile = spec.latency_percentile
    if window_percentile is None and spec.time_steps is not None:
        window_percentile = DEFAULT_TIME_PERCENTILE
    if window_percentile is not None:
        activations = collect_ann_activations(network, train.images)
        network = reduce_latency(
            network, window_percentile, activations, scheduler.min_width
        )
        scheduler = SchedulerConfig(
            zeta=scheduler.zeta,
            gamma=scheduler.gamma,
            min_width=scheduler.min_width,
            adaptive=False,
        )
    if spec.jitter_sd > 0.0:
        hooks.append(JitterHook(spec.jitter_sd, seed))
    if spec.time_steps is not None:
        hooks.append(TimeQuantHook(spec.time_steps))
    if spec.weight_bits is not None:
        grids = make_weight_grids(network, spec.weight_bits, spec.weight_clip())
    perturb = _compose(hooks)

    before_acc = evaluate(network, test, perturb, grids)
    state = OptimizerState(kind=config.optimizer)
    result = train_network(
        network,
        train,
        test,
        epochs=config.training.epochs,
        batch_size=config.training.batch_size,
        lr0=config.lr0,
        state=state,
        scheduler=scheduler,
        rng=rng,
        perturb=perturb,
        grids=grids,
        out_dir=out_dir,
        trial=trial,
    )
    after_acc = evaluate(network, test, perturb, grids)
    save_checkpoint(network, Path(out_dir) / f"checkpoint_seed{seed}.ttfs", state, rng)
    logger.info(
        f"finetune: clean {clean_acc:.4f}, constrained {before_acc:.4f} -> {after_acc:.4f}"
    )
    return RunSummary(
        mode="finetune",
        seed=seed,
        train_acc=result.train_acc if result.epochs else None,
        test_acc=after_acc,
        ann_test_acc=_reference_ann_acc(network, test),
        latency=network.latency,
        warnings=result.warnings,
        details={
            "clean_acc": clean_acc,
            "constrained_acc_before": before_acc,
            "constrained_acc_after": after_acc,
        },
    )


def _run_convert(config, train, test, rng, out_dir, trial, seed) -> RunSummary:
    calibration = train.images[:CALIBRATION_SAMPLES]
    net_cfg = config.network
    if config.training.checkpoint is not None:
        network, ann = _network_from_checkpoint(config, calibration)
        if ann is None:
            ann = snn_to_ann(network)
    else:
        ann = init_ann(
            net_cfg.layer_sizes,
            rng,
            net_cfg.init_scale,
            zero_row_sum=net_cfg.alpha_policy == AlphaPolicy.CONSTANT,
        )
        windows = ann_windows_from_activations(
            ann, calibration, config.scheduler.zeta, net_cfg.tau_c
        )
        network = ann_to_snn(
            ann, net_cfg.alpha_policy, windows, net_cfg.tau_c, alpha=net_cfg.alpha_value
        )
    labels = train.labels[: len(calibration)]
    report = check_equivalence(network, ann, calibration, labels)
    path = Path(out_dir) / f"equivalence_seed{seed}.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
    if not report.passed:
        logger.warning(f"[EXPERIMENT_WARN] equivalence check failed: {report.to_dict()}")
    save_checkpoint(network, Path(out_dir) / f"checkpoint_seed{seed}.ttfs", rng=rng)
    return RunSummary(
        mode="convert",
        seed=seed,
        test_acc=evaluate(network, test),
        ann_test_acc=evaluate_ann(ann, test),
        latency=network.latency,
        warnings=0 if report.passed else 1,
        details=report.to_dict(),
    )


def _run_diagnose(config, train, test, rng, out_dir, trial, seed) -> RunSummary:
    calibration = train.images[:CALIBRATION_SAMPLES]
    if config.training.checkpoint is not None:
        network, _ = _network_from_checkpoint(config, calibration)
    else:
        network = build_network(config, calibration, rng)
    diag = config.diagnostics

    spectrum = jacobian_spectrum_report(network, calibration, masked=diag.masked_spectrum)
    batch = calibration[: config.training.batch_size]
    labels = train.labels[: config.training.batch_size]
    grads = backward(network_forward(batch, network), network, labels)
    profile = gradient_norm_profile(grads.dL_dt)
    write_spectrum_json(
        spectrum,
        Path(out_dir) / f"spectrum_seed{seed}.json",
        extra={"gradient_norms": profile.norms, "growth_rate": profile.growth_rate},
    )

    report = run_dual_track(
        network,
        train,
        steps=diag.dual_track_steps,
        lr=diag.dual_track_lr,
        batch=config.training.batch_size,
        scheduler=config.scheduler,
        stride=diag.stride,
        seed=seed,
    )
    write_trajectory_csv(report, Path(out_dir) / f"trajectory_seed{seed}.csv")
    return RunSummary(
        mode="diagnose",
        seed=seed,
        test_acc=evaluate(network, test),
        latency=network.latency,
        details={
            "max_spectral_radius": spectrum.max_radius,
            "fraction_outside_unit_circle": spectrum.fraction_outside,
            "gradient_growth_rate": profile.growth_rate,
            "final_cosines": report.final_cosines(),
            "max_loss_gap": report.max_loss_gap(),
        },
    )


_MODES = {
    "train": _run_train,
    "finetune": _run_finetune,
    "convert": _run_convert,
    "diagnose": _run_diagnose,
}


def run_experiment(config: ExperimentConfig) -> list[RunSummary]:
    """
    設定に従って実験を実行します。--trials K なら seed, seed+1, ... を順に実行。

    Returns:
        試行ごとの RunSummary
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, ensure_ascii=False, indent=2)

    train, test = load_datasets(config)
    runner = _MODES[config.mode]
    summaries = []
    for trial in range(config.training.trials):
        seed = config.training.seed + trial
        rng = np.random.default_rng(seed)
        started = time.perf_counter()
        logger.info(f"[{config.mode}] trial {trial + 1}/{config.training.trials}, seed {seed}")
        summary = runner(config, train, test, rng, str(out_dir), trial, seed)
        summary.wall_time = time.perf_counter() - started
        summaries.append(summary)
        save_summary(out_dir, summaries)
    return summaries
