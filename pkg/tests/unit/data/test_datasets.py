"""Tests for labeled datasets (fedspace/data/datasets.py)."""

import numpy as np
import pytest

from fedspace.core.config import DatasetConfig
from fedspace.core.errors import ConfigError, DimensionError, SchemaError
from fedspace.data.datasets import (
    CIFAR_RECORD_BYTES,
    LabeledDataset,
    load_cifar100,
    load_dataset,
    make_gaussian_blobs,
)


class TestLabeledDataset:
    """Test the LabeledDataset container."""

    def test_label_range_checked(self):
        """Test labels outside [0, num_classes) are rejected."""
        with pytest.raises(DimensionError):
            LabeledDataset(np.zeros((2, 3)), np.array([0, 3]), num_classes=3)

    def test_length_mismatch(self):
        """Test samples and labels must have equal length."""
        with pytest.raises(DimensionError):
            LabeledDataset(np.zeros((3, 3)), np.array([0, 1]), num_classes=3)

    def test_subset_and_class_indices(self):
        """Test subsets keep order and class indices are per class."""
        data = LabeledDataset(np.arange(8.0).reshape(4, 2), np.array([1, 0, 1, 2]), num_classes=3)

        sub = data.subset([2, 0])
        np.testing.assert_array_equal(sub.labels, [1, 1])
        np.testing.assert_array_equal(sub.samples[0], [4.0, 5.0])
        np.testing.assert_array_equal(data.class_indices()[1], [0, 2])

    def test_image_detection(self):
        """Test square NCHW arrays count as images."""
        images = LabeledDataset(np.zeros((2, 3, 8, 8)), np.array([0, 1]), num_classes=2)
        vectors = LabeledDataset(np.zeros((2, 16)), np.array([0, 1]), num_classes=2)

        assert images.is_image
        assert images.input_shape == (3, 8, 8)
        assert not vectors.is_image


class TestGaussianBlobs:
    """Test the synthetic blob generator."""

    def test_shapes_and_range(self):
        """Test sizes, label coverage and [0, 1] range."""
        train, test = make_gaussian_blobs(num_classes=5, dim=3, train_per_class=10, test_per_class=4, seed=1)

        assert train.samples.shape == (50, 3)
        assert test.samples.shape == (20, 3)
        assert set(train.labels.tolist()) == set(range(5))
        assert train.samples.min() >= 0.0 and train.samples.max() <= 1.0
        assert train.split_tag == "train" and test.split_tag == "test"

    def test_deterministic(self):
        """Test the same seed gives identical data."""
        a, _ = make_gaussian_blobs(seed=3)
        b, _ = make_gaussian_blobs(seed=3)

        np.testing.assert_array_equal(a.samples, b.samples)


class TestCifar100:
    """Test the CIFAR-100 binary reader."""

    def _write(self, path, labels):
        records = np.zeros((len(labels), CIFAR_RECORD_BYTES), dtype=np.uint8)
        records[:, 1] = labels
        records[:, 2:] = 255
        records.tofile(path)

    def test_reads_fine_labels(self, tmp_path):
        """Test fine labels and pixel scaling."""
        self._write(tmp_path / "train.bin", [3, 99])
        self._write(tmp_path / "test.bin", [7])

        train, test = load_cifar100(tmp_path)

        np.testing.assert_array_equal(train.labels, [3, 99])
        assert train.samples.shape == (2, 3, 32, 32)
        assert train.samples.max() == 1.0
        assert len(test) == 1

    def test_missing_file(self, tmp_path):
        """Test a missing file raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_cifar100(tmp_path)

    def test_bad_layout(self, tmp_path):
        """Test a truncated record raises SchemaError."""
        (tmp_path / "train.bin").write_bytes(b"\x00" * 100)
        self._write(tmp_path / "test.bin", [1])

        with pytest.raises(SchemaError):
            load_cifar100(tmp_path)


class TestLoadDataset:
    """Test data source dispatch."""

    def test_synthetic(self):
        """Test synthetic configs produce blobs."""
        train, _ = load_dataset(DatasetConfig(num_classes=6, dim=2, train_per_class=5, test_per_class=2))

        assert train.num_classes == 6
        assert train.samples.shape == (30, 2)

    def test_unknown_kind(self):
        """Test unknown kinds raise ConfigError."""
        with pytest.raises(ConfigError):
            load_dataset(DatasetConfig(kind="mnist"))
