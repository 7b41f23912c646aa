"""Labeled fractal datasets for server pre-training.

On disk a dataset is a binary file (fixed header, int32 labels, float32
grayscale planes) plus a JSON sidecar holding the per-class IFS codes.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from fedspace.core.errors import DivergenceError, SamplingError, SchemaError
from fedspace.core.rng import derive_rng
from fedspace.data.datasets import LabeledDataset
from fedspace.fractal.ifs import (
    DEFAULT_ITERATIONS,
    IfsCode,
    nonzero_fraction,
    render_fractal,
    sample_ifs,
)

logger = logging.getLogger(__name__)

FRACTAL_MAGIC = b"FSFRACT\x00"
FRACTAL_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIIIq")  # magic, version, count, size, num_classes, seed

NONZERO_BAND = (0.05, 0.95)


@dataclass
class FractalDataset:
    """Fractal images with their generating codes.

    Attributes:
        classes: One IfsCode per class (|C_f| entries)
        images_per_class: Images rendered per class
        image_size: Side length in pixels
        seed: Generation seed
        images: Grayscale images in [0, 1], shape (N, size, size)
        labels: Class of each image, shape (N,)
    """

    classes: list[IfsCode]
    images_per_class: int
    image_size: int
    seed: int
    images: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 1, 1)))
    labels: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_classes(self) -> int:
        """|C_f|."""
        return len(self.classes)

    def __len__(self) -> int:
        return len(self.labels)

    def to_labeled(self, channels: int = 3, side: int | None = None, flatten: bool = False) -> LabeledDataset:
        """Training view of the images.

        Args:
            channels: Grayscale plane replicated this many times
            side: Average-pool to ``side x side`` when smaller than the render size
            flatten: Return (N, channels * side * side) vectors

        Returns:
            A LabeledDataset with ``num_classes = |C_f|``
        """
        images = torch.from_numpy(self.images).unsqueeze(1)
        if side is not None and side != self.image_size:
            images = F.adaptive_avg_pool2d(images, side)
            peak = images.amax(dim=(2, 3), keepdim=True).clamp_min(1e-12)
            images = images / peak
        images = images.repeat(1, channels, 1, 1)
        samples = images.flatten(1) if flatten else images
        return LabeledDataset(samples.numpy(), self.labels, self.num_classes, "train")


def _in_band(image: np.ndarray) -> bool:
    return NONZERO_BAND[0] <= nonzero_fraction(image) <= NONZERO_BAND[1]


def _admissible_code(
    class_index: int, rng: np.random.Generator, size: int, iterations: int, max_attempts: int
) -> IfsCode:
    for _ in range(max_attempts):
        code = sample_ifs(int(rng.integers(2, 5)), rng)
        try:
            probe = render_fractal(code, size, iterations, rng)
        except DivergenceError:
            continue
        if _in_band(probe):
            return code
    raise SamplingError(f"class {class_index}: no non-degenerate IFS code in {max_attempts} attempts")


def _render_member(
    code: IfsCode,
    rng: np.random.Generator,
    size: int,
    iterations: int,
    jitter: float,
    max_attempts: int,
    where: str,
) -> np.ndarray:
    """Render one jittered copy of ``code``, re-jittering until it lands in the band."""
    diverged = 0
    for _ in range(max_attempts):
        try:
            image = render_fractal(code.jittered(rng, jitter), size, iterations, rng)
        except DivergenceError:
            diverged += 1
            continue
        if _in_band(image):
            return image
    if diverged == max_attempts:
        raise DivergenceError(f"{where}: every jittered render escaped")
    raise SamplingError(f"{where}: no jittered render inside {NONZERO_BAND} in {max_attempts} attempts")


def build_pretrain_dataset(
    num_classes: int,
    images_per_class: int,
    size: int,
    seed: int,
    iterations: int = DEFAULT_ITERATIONS,
    jitter: float = 0.02,
    max_attempts: int = 200,
) -> FractalDataset:
    """Render ``images_per_class`` images for each of ``num_classes`` IFS codes.

    Each class code is resampled until a full render covers between 5% and
    95% of the grid. Each image uses its own render stream and a jittered copy
    of the class code; the jitter is redrawn until that image also lies in the
    band.

    Raises:
        ValueError: If num_classes < 1
        SamplingError: Naming the class (and image) that stayed outside the band
        DivergenceError: Naming the image whose jittered renders all escaped
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    codes: list[IfsCode] = []
    images = np.zeros((num_classes * images_per_class, size, size), dtype=np.float64)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), images_per_class)

    for y in range(num_classes):
        code = _admissible_code(y, derive_rng(seed, "ifs", y), size, iterations, max_attempts)
        codes.append(code)
        for i in range(images_per_class):
            images[y * images_per_class + i] = _render_member(
                code, derive_rng(seed, "render", y, i), size, iterations, jitter, max_attempts,
                f"class {y}, image {i}",
            )
    logger.info("Rendered %d fractal images over %d classes", len(labels), num_classes)
    return FractalDataset(codes, images_per_class, size, seed, images, labels)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".codes.json")


def save_fractal_dataset(data: FractalDataset, path: Path) -> None:
    """Write the binary image file and the JSON code sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(
            _HEADER.pack(
                FRACTAL_MAGIC, FRACTAL_FORMAT_VERSION, len(data), data.image_size, data.num_classes, data.seed
            )
        )
        f.write(struct.pack("<I", data.images_per_class))
        f.write(data.labels.astype("<i4").tobytes())
        f.write(data.images.astype("<f4").tobytes())
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump({"version": FRACTAL_FORMAT_VERSION, "codes": [c.to_dict() for c in data.classes]}, f)


def load_fractal_dataset(path: Path) -> FractalDataset:
    """Read a dataset written by :func:`save_fractal_dataset`.

    Raises:
        SchemaError: On bad magic, version mismatch or truncated payload
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise SchemaError(f"{path} is too short to be a fractal dataset")
    magic, version, count, size, num_classes, seed = _HEADER.unpack_from(raw)
    if magic != FRACTAL_MAGIC:
        raise SchemaError(f"{path} is not a fractal dataset")
    if version != FRACTAL_FORMAT_VERSION:
        raise SchemaError(f"Unsupported fractal dataset version {version} (expected {FRACTAL_FORMAT_VERSION})")
    (per_class,) = struct.unpack_from("<I", raw, _HEADER.size)
    offset = _HEADER.size + 4
    expected = offset + 4 * count + 4 * count * size * size
    if len(raw) != expected:
        raise SchemaError(f"{path} is truncated: {len(raw)} bytes, expected {expected}")
    labels = np.frombuffer(raw, dtype="<i4", count=count, offset=offset).astype(np.int64)
    images = np.frombuffer(raw, dtype="<f4", count=count * size * size, offset=offset + 4 * count)

    try:
        with open(_sidecar_path(path), encoding="utf-8") as f:
            sidecar = json.load(f)
        codes = [IfsCode.from_dict(c) for c in sidecar["codes"]]
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise SchemaError(f"Missing or corrupt IFS sidecar for {path}: {e}") from e
    if len(codes) != num_classes:
        raise SchemaError(f"sidecar lists {len(codes)} codes, header says {num_classes}")

    return FractalDataset(
        codes, per_class, size, seed, images.reshape(count, size, size).astype(np.float64), labels
    )
