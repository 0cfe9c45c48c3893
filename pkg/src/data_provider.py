"""
Data Provider Module
データセット読み込みの唯一のアクセスポイント。
IDX 形式（MNIST / Fashion-MNIST、gzip 圧縮可）と、テスト用の合成データを提供します。
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from src.constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_FILES
from src.errors import IdxFormatError
from src.log_config import get_logger
from src.models import Dataset

logger = get_logger(__name__)


def _read_bytes(path: Path) -> bytes:
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise IdxFormatError(f"cannot read {path}: {e}") from e


def _parse_header(raw: bytes, path: Path, magic: int, ndim: int) -> tuple[int, ...]:
    size = 4 * (1 + ndim)
    if len(raw) < size:
        raise IdxFormatError(f"{path}: truncated header")
    fields = struct.unpack(f">{1 + ndim}I", raw[:size])
    if fields[0] != magic:
        raise IdxFormatError(
            f"{path}: bad magic 0x{fields[0]:08x}, expected 0x{magic:08x}"
        )
    return fields[1:]


def _resolve(path: Path) -> Path:
    if path.exists():
        return path
    gz = path.with_name(path.name + ".gz")
    return gz if gz.exists() else path


class DataProvider:
    """
    データ取得の統一インターフェース
    """

    @staticmethod
    def load_idx_dataset(
        images_path: str | Path, labels_path: str | Path, split: str = "train"
    ) -> Dataset:
        """
        IDX 画像・ラベルファイルを読み込みます。

        Args:
            images_path: 画像ファイル (magic 0x00000803)
            labels_path: ラベルファイル (magic 0x00000801)
            split: "train" or "test"

        Returns:
            画素を 255 で割り [0, 1] に正規化し平坦化した Dataset

        Raises:
            IdxFormatError: magic 不正、ファイル切り詰め、件数不一致
        """
        images_path, labels_path = _resolve(Path(images_path)), _resolve(Path(labels_path))

        raw = _read_bytes(images_path)
        count, rows, cols = _parse_header(raw, images_path, IDX_IMAGES_MAGIC, 3)
        body = raw[16:]
        if len(body) < count * rows * cols:
            raise IdxFormatError(
                f"{images_path}: expected {count * rows * cols} pixel bytes, got {len(body)}"
            )
        pixels = np.frombuffer(body, dtype=np.uint8, count=count * rows * cols)
        images = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0

        raw = _read_bytes(labels_path)
        (n_labels,) = _parse_header(raw, labels_path, IDX_LABELS_MAGIC, 1)
        body = raw[8:]
        if len(body) < n_labels:
            raise IdxFormatError(
                f"{labels_path}: expected {n_labels} labels, got {len(body)}"
            )
        labels = np.frombuffer(body, dtype=np.uint8, count=n_labels).astype(np.int64)

        if n_labels != count:
            raise IdxFormatError(f"{count} images but {n_labels} labels")
        logger.info(f"{split}: {count} samples of {rows * cols} features loaded")
        return Dataset(images=images, labels=labels, split=split)

    @staticmethod
    def load_mnist_split(data_dir: str | Path, split: str) -> Dataset:
        """標準ファイル名 (train-images-idx3-ubyte 等) で data_dir から読み込みます。"""
        images_name, labels_name = MNIST_FILES[split]
        root = Path(data_dir)
        return DataProvider.load_idx_dataset(
            root / images_name, root / labels_name, split=split
        )

    @staticmethod
    def synthetic_dataset(
        n: int, features: int, classes: int, seed: int = 0, split: str = "train"
    ) -> Dataset:
        """
        クラスごとのガウス塊を [0, 1] にクリップした合成データ。
        テストやオフライン実行用で、seed が同じなら同一データを返します。
        """
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0.2, 0.8, size=(classes, features))
        labels = rng.integers(0, classes, size=n)
        images = centers[labels] + rng.normal(0.0, 0.1, size=(n, features))
        return Dataset(images=np.clip(images, 0.0, 1.0), labels=labels, split=split)


def write_idx_dataset(
    dataset: Dataset, images_path: str | Path, labels_path: str | Path, shape: tuple
) -> None:
    """Dataset を IDX 形式で書き出します（合成データの保存・テスト用）。"""
    rows, cols = shape
    pixels = np.rint(dataset.images * 255.0).astype(np.uint8)
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols)
    Path(images_path).write_bytes(header + pixels.tobytes())
    header = struct.pack(">II", IDX_LABELS_MAGIC, len(dataset))
    Path(labels_path).write_bytes(header + dataset.labels.astype(np.uint8).tobytes())
