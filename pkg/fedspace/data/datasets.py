"""Labeled datasets: in-memory container, synthetic blobs and CIFAR-100 reader.

Image samples are stored channel-first (N, ch, H, W); vector samples as (N, d).
All samples are float64 in [0, 1].
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from fedspace.core.config import DatasetConfig
from fedspace.core.errors import ConfigError, DimensionError, SchemaError
from fedspace.core.rng import derive_rng

logger = logging.getLogger(__name__)

SplitTag = Literal["train", "test"]

CIFAR_IMAGE_BYTES = 3 * 32 * 32
CIFAR_RECORD_BYTES = 2 + CIFAR_IMAGE_BYTES


@dataclass
class LabeledDataset:
    """A labeled sample collection.

    Attributes:
        samples: Array of shape (N, d) for vectors or (N, ch, H, W) for images
        labels: Integer class indices, shape (N,)
        num_classes: Size of the global class set |C|
        split_tag: "train" or "test"
    """

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int
    split_tag: SplitTag = "train"

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise DimensionError(f"labels must be 1-D, got shape {self.labels.shape}")
        if len(self.samples) != len(self.labels):
            raise DimensionError(
                f"samples ({len(self.samples)}) and labels ({len(self.labels)}) differ in length"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DimensionError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_image(self) -> bool:
        """True for (N, ch, H, W) square image data."""
        return self.samples.ndim == 4 and self.samples.shape[2] == self.samples.shape[3]

    @property
    def input_shape(self) -> tuple[int, ...]:
        """Shape of one sample."""
        return tuple(self.samples.shape[1:])

    def class_indices(self) -> list[np.ndarray]:
        """Indices of every class, in ascending index order."""
        return [np.flatnonzero(self.labels == c) for c in range(self.num_classes)]

    def subset(self, indices: np.ndarray | list[int]) -> "LabeledDataset":
        """Dataset restricted to the given indices (order preserved)."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            samples=self.samples[idx],
            labels=self.labels[idx],
            num_classes=self.num_classes,
            split_tag=self.split_tag,
        )


def make_gaussian_blobs(
    num_classes: int = 20,
    dim: int = 16,
    train_per_class: int = 200,
    test_per_class: int = 50,
    spread: float = 0.08,
    seed: int = 0,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Isotropic Gaussian clusters, one per class, clipped to [0, 1].

    Args:
        num_classes: Number of classes
        dim: Vector dimension
        train_per_class: Training samples per class
        test_per_class: Test samples per class
        spread: Standard deviation of each cluster
        seed: Generation seed

    Returns:
        (train, test) datasets
    """
    rng = derive_rng(seed, "blobs")
    centers = rng.uniform(0.2, 0.8, size=(num_classes, dim))

    def draw(per_class: int, tag: SplitTag) -> LabeledDataset:
        labels = np.repeat(np.arange(num_classes), per_class)
        noise = rng.normal(0.0, spread, size=(len(labels), dim))
        samples = np.clip(centers[labels] + noise, 0.0, 1.0)
        return LabeledDataset(samples, labels, num_classes, tag)

    return draw(train_per_class, "train"), draw(test_per_class, "test")


def _read_cifar_file(path: Path, tag: SplitTag) -> LabeledDataset:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
        raise SchemaError(f"{path} is not in the CIFAR-100 binary layout")
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = records[:, 1].astype(np.int64)
    images = records[:, 2:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return LabeledDataset(images, labels, 100, tag)


def load_cifar100(directory: Path) -> tuple[LabeledDataset, LabeledDataset]:
    """Read a local CIFAR-100 copy in the standard binary layout.

    Args:
        directory: Folder containing ``train.bin`` and ``test.bin``

    Returns:
        (train, test) datasets with fine labels

    Raises:
        FileNotFoundError: If either file is missing
        SchemaError: If a file does not match the record layout
    """
    directory = Path(directory)
    train_path, test_path = directory / "train.bin", directory / "test.bin"
    for path in (train_path, test_path):
        if not path.exists():
            raise FileNotFoundError(f"CIFAR-100 file not found: {path}")
    train = _read_cifar_file(train_path, "train")
    test = _read_cifar_file(test_path, "test")
    logger.info("Loaded CIFAR-100: %d train / %d test images", len(train), len(test))
    return train, test


def load_dataset(config: DatasetConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Train/test datasets for a run's data source.

    Raises:
        ConfigError: For an unknown kind or a cifar100 source without a path
    """
    if config.kind == "synthetic":
        return make_gaussian_blobs(
            num_classes=config.num_classes,
            dim=config.dim,
            train_per_class=config.train_per_class,
            test_per_class=config.test_per_class,
            spread=config.spread,
            seed=config.seed,
        )
    if config.kind == "cifar100":
        if not config.path:
            raise ConfigError("dataset.path is required when dataset.kind is cifar100")
        return load_cifar100(Path(config.path))
    raise ConfigError(f"Invalid dataset kind: {config.kind}. Must be one of: cifar100, synthetic")
