"""
TTFS SNN 実験ランナー - メインエントリーポイント
train / finetune / convert / diagnose サブコマンドを提供します。

例:
    python app.py train --config configs/mnist.json --epochs 50
    python app.py convert --alpha-policy constant:1.0 --out runs/convert
"""

import argparse
import os
import sys

# パス設定
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.errors import TtfsError
from src.log_config import get_logger
from src.services.experiment_service import run_experiment
from src.settings_storage import MODES, build_config, load_config_file

logger = get_logger("app")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttfs", description="Exact time-to-first-spike SNN training toolkit"
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", help="JSON config file (docs/config_schema.md)")
        p.add_argument("--data-dir", help="directory with IDX files")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr0", type=float)
        p.add_argument("--alpha-policy", help="linear | constant:VALUE")
        p.add_argument("--quant-time-steps", type=int)
        p.add_argument("--quant-weight-bits", type=int)
        p.add_argument("--jitter-sd", type=float)
        p.add_argument("--latency-percentile", type=float)
        p.add_argument("--checkpoint", help="SNN or ANN checkpoint to start from")
        p.add_argument("--trials", type=int)
        p.add_argument("--out", help="output directory")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    """CLI フラグ -> 設定キー（未指定は None のまま、build_config で無視）"""
    return {
        "data.data_dir": args.data_dir,
        "training.seed": args.seed,
        "training.epochs": args.epochs,
        "training.lr0": args.lr0,
        "training.trials": args.trials,
        "training.checkpoint": args.checkpoint,
        "network.alpha_policy": args.alpha_policy,
        "constraints.time_steps": args.quant_time_steps,
        "constraints.weight_bits": args.quant_weight_bits,
        "constraints.jitter_sd": args.jitter_sd,
        "constraints.latency_percentile": args.latency_percentile,
        "out_dir": args.out,
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = build_config(
            args.mode, load_config_file(args.config), overrides_from_args(args)
        )
        summaries = run_experiment(config)
    except TtfsError as e:
        logger.error(f"[{type(e).__name__}] {e}")
        return 1
    for s in summaries:
        logger.info(
            f"seed {s.seed}: test acc {s.test_acc}, ANN {s.ann_test_acc}, "
            f"latency {s.latency}, {s.wall_time:.1f}s"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
