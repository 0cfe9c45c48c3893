"""
チェックポイント保存モジュール

リトルエンディアンのバイナリ形式:
  magic (8 bytes) | version (u32) | header length (u32) | header (JSON, UTF-8)
  | tensors (float64, header 記載順) | SHA-256 (先行する全バイト)

header の kind は "snn"（TTFS ネットワーク）または "ann"（ReLU ネットワークの取り込み用）。
パラメータは生の 64bit 値で保存するため、読み込み後の forward はビット単位で一致します。
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from src.constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from src.errors import CheckpointCorruptError, CheckpointVersionError
from src.learning import OptimizerKind, OptimizerState
from src.log_config import get_logger
from src.models import (
    AlphaPolicy,
    AnnLayer,
    NetworkConfig,
    OutputLayer,
    SnnLayer,
    TtfsNetwork,
)

logger = get_logger(__name__)

_DIGEST_SIZE = hashlib.sha256().digest_size


@dataclass
class Checkpoint:
    """Loaded checkpoint: exactly one of ``network`` / ``ann`` is set."""

    kind: str
    network: Optional[TtfsNetwork] = None
    ann: Optional[list[AnnLayer]] = None
    tau_c: Optional[float] = None
    optimizer_state: Optional[OptimizerState] = None
    rng_state: Optional[dict] = None
    extra: dict = field(default_factory=dict)


class _TensorWriter:
    def __init__(self):
        self.entries: list[dict] = []
        self.chunks: list[bytes] = []

    def add(self, name: str, array: np.ndarray) -> None:
        data = np.ascontiguousarray(array, dtype="<f8")
        self.entries.append({"name": name, "shape": list(data.shape)})
        self.chunks.append(data.tobytes())


def _encode(header: dict, writer: _TensorWriter) -> bytes:
    header = {**header, "tensors": writer.entries}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<II", CHECKPOINT_VERSION, len(blob))
        + blob
        + b"".join(writer.chunks)
    )
    return body + hashlib.sha256(body).digest()


def _write(path: str | Path, payload: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info(f"checkpoint saved: {path} ({len(payload)} bytes)")
    return path


def _optimizer_header(state: OptimizerState, writer: _TensorWriter) -> dict:
    for i, (m, v) in enumerate(zip(state.m, state.v)):
        writer.add(f"opt.m.{i}", m)
        writer.add(f"opt.v.{i}", v)
    return {
        "kind": state.kind.value,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "moments": len(state.m),
    }


def save_checkpoint(
    network: TtfsNetwork,
    path: str | Path,
    optimizer_state: Optional[OptimizerState] = None,
    rng: Optional[np.random.Generator] = None,
    extra: Optional[dict] = None,
) -> Path:
    """TTFS ネットワーク（と任意で最適化状態・乱数状態）を保存します。"""
    writer = _TensorWriter()
    layers = []
    for n, layer in enumerate(network.layers):
        writer.add(f"layer.{n}.W", layer.W)
        writer.add(f"layer.{n}.D", layer.D)
        writer.add(f"layer.{n}.theta_tilde", layer.theta_tilde)
        if layer.alpha_const is not None:
            writer.add(f"layer.{n}.alpha_const", layer.alpha_const)
        layers.append(
            {
                "t_min": layer.t_min,
                "t_max": layer.t_max,
                "policy": layer.policy.value,
                "has_alpha": layer.alpha_const is not None,
            }
        )
    writer.add("output.W", network.output.W)
    writer.add("output.alpha", network.output.alpha)

    header = {
        "kind": "snn",
        "config": {
            "tau_c": network.config.tau_c,
            "layer_sizes": list(network.config.layer_sizes),
        },
        "layers": layers,
        "output": {"t_min": network.output.t_min, "t_read": network.output.t_read},
        "optimizer": _optimizer_header(optimizer_state, writer)
        if optimizer_state is not None
        else None,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "extra": extra or {},
    }
    return _write(path, _encode(header, writer))


def save_ann_checkpoint(
    ann: Sequence[AnnLayer], tau_c: float, path: str | Path, extra: Optional[dict] = None
) -> Path:
    """ReLU ネットワーク（隠れ層 + 読み出し層）を取り込み用に保存します。"""
    writer = _TensorWriter()
    for n, layer in enumerate(ann):
        writer.add(f"ann.{n}.w", layer.w)
        writer.add(f"ann.{n}.b", layer.b)
    header = {"kind": "ann", "tau_c": tau_c, "layers": len(ann), "extra": extra or {}}
    return _write(path, _encode(header, writer))


def _decode(raw: bytes, path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    prefix = len(CHECKPOINT_MAGIC) + 8
    if len(raw) < prefix + _DIGEST_SIZE or not raw.startswith(CHECKPOINT_MAGIC):
        raise CheckpointCorruptError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[len(CHECKPOINT_MAGIC) : prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    body, digest = raw[:-_DIGEST_SIZE], raw[-_DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointCorruptError(f"{path}: checksum mismatch")
    try:
        header = json.loads(body[prefix : prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptError(f"{path}: unreadable header") from e

    tensors = {}
    offset = prefix + header_len
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(body):
            raise CheckpointCorruptError(f"{path}: tensor {entry['name']} truncated")
        tensors[entry["name"]] = (
            np.frombuffer(body, dtype="<f8", count=nbytes // 8, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(body):
        raise CheckpointCorruptError(f"{path}: trailing bytes after tensors")
    return header, tensors


def _load_optimizer(meta: Optional[dict], tensors: dict) -> Optional[OptimizerState]:
    if meta is None:
        return None
    count = meta["moments"]
    return OptimizerState(
        kind=OptimizerKind(meta["kind"]),
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        eps=meta["eps"],
        m=[tensors[f"opt.m.{i}"] for i in range(count)],
        v=[tensors[f"opt.v.{i}"] for i in range(count)],
        step=meta["step"],
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    """
    チェックポイントを読み込みます。

    Raises:
        CheckpointVersionError: 未知のフォーマットバージョン
        CheckpointCorruptError: magic 不正、チェックサム不一致、切り詰め
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointCorruptError(f"cannot read {path}: {e}") from e
    header, tensors = _decode(raw, path)

    if header["kind"] == "ann":
        ann = [
            AnnLayer(w=tensors[f"ann.{n}.w"], b=tensors[f"ann.{n}.b"])
            for n in range(header["layers"])
        ]
        return Checkpoint(kind="ann", ann=ann, tau_c=header["tau_c"], extra=header["extra"])

    layers = []
    for n, meta in enumerate(header["layers"]):
        layers.append(
            SnnLayer(
                W=tensors[f"layer.{n}.W"],
                D=tensors[f"layer.{n}.D"],
                theta_tilde=tensors[f"layer.{n}.theta_tilde"],
                t_min=meta["t_min"],
                t_max=meta["t_max"],
                policy=AlphaPolicy(meta["policy"]),
                alpha_const=tensors[f"layer.{n}.alpha_const"] if meta["has_alpha"] else None,
            )
        )
    config = NetworkConfig(**header["config"])
    output = OutputLayer(
        W=tensors["output.W"],
        alpha=tensors["output.alpha"],
        t_min=header["output"]["t_min"],
        t_read=header["output"]["t_read"],
    )
    return Checkpoint(
        kind="snn",
        network=TtfsNetwork(config=config, layers=layers, output=output),
        tau_c=config.tau_c,
        optimizer_state=_load_optimizer(header["optimizer"], tensors),
        rng_state=header["rng_state"],
        extra=header["extra"],
    )
