import gzip
import struct

import numpy as np
import pytest

from src.constants import IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC
from src.data_provider import DataProvider, write_idx_dataset
from src.errors import DimensionError, IdxFormatError
from src.models import Dataset


def _write_raw(tmp_path, images: np.ndarray, labels: np.ndarray):
    count, rows, cols = images.shape
    img = tmp_path / "images-idx3-ubyte"
    lbl = tmp_path / "labels-idx1-ubyte"
    img.write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, count, rows, cols)
        + images.astype(np.uint8).tobytes()
    )
    lbl.write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.astype(np.uint8).tobytes()
    )
    return img, lbl


class TestLoadIdxDataset:
    def test_normalised_and_flattened(self, tmp_path):
        images = np.arange(2 * 2 * 3).reshape(2, 2, 3) * 20
        img, lbl = _write_raw(tmp_path, images, np.array([3, 7]))
        data = DataProvider.load_idx_dataset(img, lbl, split="test")
        assert data.images.shape == (2, 6)
        assert data.images[1, 5] == pytest.approx(220 / 255)
        assert data.labels.tolist() == [3, 7]
        assert data.split == "test"
        assert data.num_features == 6

    def test_all_zero_images(self, tmp_path):
        img, lbl = _write_raw(tmp_path, np.zeros((4, 2, 2)), np.zeros(4))
        data = DataProvider.load_idx_dataset(img, lbl)
        assert np.all(data.images == 0.0)
        assert len(data) == 4

    def test_wrong_label_magic(self, tmp_path):
        img, lbl = _write_raw(tmp_path, np.zeros((1, 2, 2)), np.zeros(1))
        raw = bytearray(lbl.read_bytes())
        raw[3] = 0x03
        lbl.write_bytes(bytes(raw))
        with pytest.raises(IdxFormatError, match="bad magic"):
            DataProvider.load_idx_dataset(img, lbl)

    def test_truncated_pixels(self, tmp_path):
        img, lbl = _write_raw(tmp_path, np.zeros((3, 2, 2)), np.zeros(3))
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(IdxFormatError):
            DataProvider.load_idx_dataset(img, lbl)

    def test_truncated_header(self, tmp_path):
        img, lbl = _write_raw(tmp_path, np.zeros((1, 2, 2)), np.zeros(1))
        lbl.write_bytes(lbl.read_bytes()[:5])
        with pytest.raises(IdxFormatError, match="truncated"):
            DataProvider.load_idx_dataset(img, lbl)

    def test_count_mismatch(self, tmp_path):
        img, _ = _write_raw(tmp_path, np.zeros((3, 2, 2)), np.zeros(3))
        lbl = tmp_path / "short-labels"
        lbl.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, 2) + bytes(2))
        with pytest.raises(IdxFormatError, match="3 images but 2 labels"):
            DataProvider.load_idx_dataset(img, lbl)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IdxFormatError):
            DataProvider.load_idx_dataset(tmp_path / "nope", tmp_path / "nope2")

    def test_gzip_fallback(self, tmp_path):
        img, lbl = _write_raw(tmp_path, np.full((2, 2, 2), 255), np.array([1, 2]))
        for path in (img, lbl):
            gz = path.with_name(path.name + ".gz")
            gz.write_bytes(gzip.compress(path.read_bytes()))
            path.unlink()
        data = DataProvider.load_idx_dataset(img, lbl)
        assert np.all(data.images == 1.0)


class TestMnistSplit:
    def test_standard_file_names(self, tmp_path):
        data = DataProvider.synthetic_dataset(5, 4, 3, seed=0, split="test")
        write_idx_dataset(
            data,
            tmp_path / "t10k-images-idx3-ubyte",
            tmp_path / "t10k-labels-idx1-ubyte",
            (2, 2),
        )
        loaded = DataProvider.load_mnist_split(tmp_path, "test")
        assert loaded.split == "test"
        assert np.allclose(loaded.images, data.images, atol=0.51 / 255)
        assert np.array_equal(loaded.labels, data.labels)


class TestSyntheticDataset:
    def test_seeded_and_in_range(self):
        a = DataProvider.synthetic_dataset(50, 7, 4, seed=5)
        b = DataProvider.synthetic_dataset(50, 7, 4, seed=5)
        assert np.array_equal(a.images, b.images)
        assert a.images.min() >= 0.0 and a.images.max() <= 1.0
        assert set(a.labels.tolist()) <= set(range(4))


class TestDataset:
    def test_count_mismatch(self):
        with pytest.raises(DimensionError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int))

    def test_subset(self):
        data = Dataset(np.zeros((5, 2)), np.arange(5), split="test")
        sub = data.subset(3)
        assert len(sub) == 3
        assert sub.split == "test"
