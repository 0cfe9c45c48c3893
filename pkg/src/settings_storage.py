"""
Settings Storage Module
実験設定（JSON ファイル + .env 環境変数 + CLI フラグ）を読み込み、
検証済みの ExperimentConfig を組み立てます。

優先順位: CLI フラグ > 環境変数 > 設定ファイル > constants.py のデフォルト
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv

from src.constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_FINETUNE_LR0,
    DEFAULT_HIDDEN_WIDTH,
    DEFAULT_LR0,
    DEFAULT_NUM_CLASSES,
    DEFAULT_TAU_C,
)
from src.errors import ConfigError
from src.hw_constraints import QuantSpec
from src.learning import OptimizerKind
from src.log_config import get_logger
from src.models import AlphaPolicy
from src.scheduler import SchedulerConfig

logger = get_logger(__name__)

MODES = ("train", "finetune", "convert", "diagnose")
SECTIONS = ("network", "scheduler", "training", "constraints", "diagnostics", "data")


@dataclass
class NetworkSettings:
    layer_sizes: list[int] = field(
        default_factory=lambda: [784, DEFAULT_HIDDEN_WIDTH, DEFAULT_NUM_CLASSES]
    )
    tau_c: float = DEFAULT_TAU_C
    alpha_policy: AlphaPolicy = AlphaPolicy.LINEAR
    alpha_value: float = 1.0  # CONSTANT only
    init_scale: str = "he"


@dataclass
class TrainingSettings:
    batch_size: int = DEFAULT_BATCH_SIZE
    optimizer: Optional[OptimizerKind] = None  # mode-dependent when unset
    lr0: Optional[float] = None  # mode-dependent when unset
    epochs: int = 1
    seed: int = 0
    trials: int = 1
    checkpoint: Optional[str] = None  # finetune / convert / diagnose input
    max_train_samples: Optional[int] = None
    max_test_samples: Optional[int] = None


@dataclass
class DiagnosticsSettings:
    dual_track_steps: int = 100
    dual_track_lr: float = 1e-3
    stride: int = 1
    masked_spectrum: bool = False


@dataclass
class DataSettings:
    source: str = "idx"  # "idx" or "synthetic"
    data_dir: str = "data/mnist"
    synthetic_samples: int = 512
    synthetic_features: int = 784
    synthetic_classes: int = DEFAULT_NUM_CLASSES


@dataclass
class ExperimentConfig:
    """All values consumed by one run."""

    mode: str = "train"
    network: NetworkSettings = field(default_factory=NetworkSettings)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    constraints: QuantSpec = field(default_factory=QuantSpec)
    diagnostics: DiagnosticsSettings = field(default_factory=DiagnosticsSettings)
    data: DataSettings = field(default_factory=DataSettings)
    out_dir: str = "runs/latest"

    def __post_init__(self):
        self.validate()

    @property
    def optimizer(self) -> OptimizerKind:
        if self.training.optimizer is not None:
            return self.training.optimizer
        return OptimizerKind.SGD if self.mode == "diagnose" else OptimizerKind.ADAM

    @property
    def lr0(self) -> float:
        if self.training.lr0 is not None:
            return self.training.lr0
        return DEFAULT_FINETUNE_LR0 if self.mode == "finetune" else DEFAULT_LR0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        net, tr = self.network, self.training
        if len(net.layer_sizes) < 2 or any(int(s) <= 0 for s in net.layer_sizes):
            raise ConfigError(f"invalid layer_sizes {net.layer_sizes}")
        if net.tau_c <= 0:
            raise ConfigError(f"tau_c must be positive, got {net.tau_c}")
        if net.alpha_policy == AlphaPolicy.CONSTANT and net.alpha_value <= 0:
            raise ConfigError(f"constant alpha must be positive, got {net.alpha_value}")
        if net.init_scale not in ("he", "lecun"):
            raise ConfigError(f"init_scale must be 'he' or 'lecun', got {net.init_scale}")
        for name in ("batch_size", "trials"):
            if getattr(tr, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if tr.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if tr.lr0 is not None and tr.lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {tr.lr0}")
        if self.data.source not in ("idx", "synthetic"):
            raise ConfigError(f"data.source must be 'idx' or 'synthetic', got {self.data.source}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=str))


def parse_alpha_policy(text: str) -> tuple[AlphaPolicy, float]:
    """'linear' or 'constant:VALUE' (bare 'constant' means VALUE = 1)."""
    name, _, value = text.partition(":")
    try:
        policy = AlphaPolicy(name.strip().lower())
    except ValueError as e:
        raise ConfigError(f"unknown alpha policy {text!r}") from e
    if policy == AlphaPolicy.LINEAR:
        if value:
            raise ConfigError("linear policy takes no value")
        return policy, 1.0
    try:
        return policy, float(value) if value else 1.0
    except ValueError as e:
        raise ConfigError(f"invalid constant alpha {value!r}") from e


def load_config_file(path: Optional[str | Path]) -> dict:
    """設定ファイル (JSON) を読み込みます。未指定なら空の dict。"""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    unknown = set(data) - set(SECTIONS) - {"mode", "out_dir"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return data


def _build_section(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"[{section}] unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"[{section}] {e}") from e


def _env_overrides() -> dict[str, Any]:
    load_dotenv()
    env = {}
    if os.getenv("TTFS_DATA_DIR"):
        env["data.data_dir"] = os.environ["TTFS_DATA_DIR"]
    if os.getenv("TTFS_OUT_DIR"):
        env["out_dir"] = os.environ["TTFS_OUT_DIR"]
    return env


def build_config(
    mode: str,
    file_data: Optional[dict] = None,
    overrides: Optional[dict[str, Any]] = None,
) -> ExperimentConfig:
    """
    Merge file values, environment and CLI overrides into an ExperimentConfig.

    Args:
        mode: train | finetune | convert | diagnose
        file_data: parsed config file (see docs/config_schema.md)
        overrides: dotted keys such as "training.seed" (None values ignored)
    """
    data = {s: dict((file_data or {}).get(s, {})) for s in SECTIONS}
    top = {"out_dir": (file_data or {}).get("out_dir", "runs/latest")}

    merged = {**_env_overrides(), **{k: v for k, v in (overrides or {}).items() if v is not None}}
    for key, value in merged.items():
        section, _, name = key.partition(".")
        if not name:
            top[section] = value
        elif section in data:
            data[section][name] = value
        else:
            raise ConfigError(f"unknown override {key}")

    net = data["network"]
    if "alpha_policy" in net:
        policy, value = parse_alpha_policy(str(net["alpha_policy"]))
        net["alpha_policy"] = policy
        net.setdefault("alpha_value", value)
        if ":" in str(merged.get("network.alpha_policy", "")):
            net["alpha_value"] = value
    if data["training"].get("optimizer") is not None:
        try:
            data["training"]["optimizer"] = OptimizerKind(data["training"]["optimizer"])
        except ValueError as e:
            raise ConfigError(f"unknown optimizer {data['training']['optimizer']!r}") from e
    clip = data["constraints"].get("percentile_clip")
    if clip is not None:
        data["constraints"]["percentile_clip"] = tuple(clip)

    config = ExperimentConfig(
        mode=mode,
        network=_build_section(NetworkSettings, net, "network"),
        scheduler=_build_section(SchedulerConfig, data["scheduler"], "scheduler"),
        training=_build_section(TrainingSettings, data["training"], "training"),
        constraints=_build_section(QuantSpec, data["constraints"], "constraints"),
        diagnostics=_build_section(DiagnosticsSettings, data["diagnostics"], "diagnostics"),
        data=_build_section(DataSettings, data["data"], "data"),
        out_dir=str(top["out_dir"]),
    )
    logger.debug(f"config: {config.to_dict()}")
    return config
