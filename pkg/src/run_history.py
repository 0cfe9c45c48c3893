"""
実行履歴管理モジュール
学習メトリクス（追記専用 CSV）と実行サマリー（JSON）の記録を行います。
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import pandas as pd

from src.log_config import get_logger

logger = get_logger(__name__)

METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "summary.json"
BASE_COLUMNS = [
    "trial",
    "epoch",
    "step",
    "train_loss",
    "train_acc",
    "test_acc",
    "saturated",
    "warnings",
]


@dataclass
class RunSummary:
    """1 試行分のサマリー"""

    mode: str
    seed: int
    train_acc: Optional[float] = None
    test_acc: Optional[float] = None
    ann_test_acc: Optional[float] = None
    latency: Optional[float] = None
    wall_time: float = 0.0
    warnings: int = 0
    details: dict = field(default_factory=dict)


def metrics_columns(depth: int) -> list[str]:
    """Fixed column order: base columns then one Δt_max column per hidden layer."""
    return BASE_COLUMNS + [f"dtmax_{n}" for n in range(1, depth + 1)]


def append_metrics(out_dir: str | Path, row: dict, depth: int) -> Path:
    """
    メトリクスを 1 行追記します。ファイルが無ければヘッダー行を書きます。

    Args:
        out_dir: 出力ディレクトリ
        row: 列名 -> 値（欠けた列は空欄）
        depth: 隠れ層数（Δt_max 列の数）
    """
    path = Path(out_dir) / METRICS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([row], columns=metrics_columns(depth))
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
    return path


def load_metrics(out_dir: str | Path) -> pd.DataFrame:
    path = Path(out_dir) / METRICS_FILE
    if not path.exists():
        return pd.DataFrame()
    return pd.read_csv(path)


def save_summary(out_dir: str | Path, summaries: list[RunSummary]) -> Path:
    """
    全試行のサマリーを JSON で保存します。

    Returns:
        書き込んだファイルパス
    """
    path = Path(out_dir) / SUMMARY_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "trials": [asdict(s) for s in summaries],
    }
    accs = [s.test_acc for s in summaries if s.test_acc is not None]
    if accs:
        payload["mean_test_acc"] = sum(accs) / len(accs)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, default=str)
    logger.info(f"summary saved: {path}")
    return path


def load_summary(out_dir: str | Path) -> dict:
    path = Path(out_dir) / SUMMARY_FILE
    if not path.exists():
        return {}
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
