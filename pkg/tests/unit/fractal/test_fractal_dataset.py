"""Tests for fractal pre-training datasets (fedspace/fractal/dataset.py)."""

from unittest.mock import patch

import numpy as np
import pytest

from fedspace.core.errors import DivergenceError, SamplingError, SchemaError
from fedspace.fractal.dataset import (
    NONZERO_BAND,
    build_pretrain_dataset,
    load_fractal_dataset,
    save_fractal_dataset,
)
from fedspace.fractal.ifs import IfsCode, nonzero_fraction

_HALF_CODE = IfsCode.from_maps(0.5 * np.eye(2)[None], np.zeros((1, 2)))


@pytest.fixture(scope="module")
def small_set():
    """Three classes, four 16-px images each."""
    return build_pretrain_dataset(3, 4, 16, seed=5, iterations=2000)


class TestBuildPretrainDataset:
    """Test build_pretrain_dataset."""

    def test_single_image(self):
        """Test (1 class, 1 image) gives one labeled image."""
        data = build_pretrain_dataset(1, 1, 16, seed=0, iterations=1000)

        assert len(data) == 1
        assert data.images.shape == (1, 16, 16)
        assert data.labels.tolist() == [0]

    def test_structure(self, small_set):
        """Test one code per class and labels in range."""
        assert small_set.num_classes == 3
        assert len(small_set) == 12
        assert small_set.labels.max() < 3
        assert small_set.images.min() >= 0.0 and small_set.images.max() <= 1.0

    def test_non_degenerate(self, small_set):
        """Test every emitted image covers between 5% and 95% of the grid."""
        for image in small_set.images:
            assert NONZERO_BAND[0] <= nonzero_fraction(image) <= NONZERO_BAND[1]
        assert NONZERO_BAND == (0.05, 0.95)

    def test_out_of_band_jitter_redrawn(self):
        """Test an image whose first jittered render is saturated is re-rendered."""
        full = np.ones((16, 16))
        sparse = np.zeros((16, 16))
        sparse[:4, :4] = 1.0
        renders = iter([sparse, full, sparse])

        with patch("fedspace.fractal.dataset.render_fractal", side_effect=lambda *a, **k: next(renders)):
            data = build_pretrain_dataset(1, 1, 16, seed=0, iterations=1000)

        np.testing.assert_array_equal(data.images[0], sparse)

    def test_image_never_in_band(self):
        """Test an image that stays saturated raises SamplingError naming it."""
        with patch("fedspace.fractal.dataset._admissible_code", return_value=_HALF_CODE), patch(
            "fedspace.fractal.dataset.render_fractal", return_value=np.ones((16, 16))
        ):
            with pytest.raises(SamplingError, match="class 0, image 0"):
                build_pretrain_dataset(1, 1, 16, seed=0, iterations=1000, max_attempts=3)

    def test_image_always_diverges(self):
        """Test an image whose every render escapes raises DivergenceError."""
        with patch("fedspace.fractal.dataset._admissible_code", return_value=_HALF_CODE), patch(
            "fedspace.fractal.dataset.render_fractal", side_effect=DivergenceError("escaped")
        ):
            with pytest.raises(DivergenceError, match="class 0, image 0"):
                build_pretrain_dataset(1, 1, 16, seed=0, iterations=1000, max_attempts=3)

    def test_deterministic(self, small_set):
        """Test the same seed reproduces the images bit for bit."""
        again = build_pretrain_dataset(3, 4, 16, seed=5, iterations=2000)

        assert np.array_equal(again.images, small_set.images)

    def test_same_class_images_differ(self, small_set):
        """Test per-image streams give intra-class variation."""
        assert not np.array_equal(small_set.images[0], small_set.images[1])

    def test_intra_class_correlation(self):
        """Test same-class images correlate more than cross-class ones."""
        data = build_pretrain_dataset(4, 4, 32, seed=2, iterations=5000)
        flat = data.images.reshape(len(data), -1)
        corr = np.corrcoef(flat)
        same = data.labels[:, None] == data.labels[None, :]
        off_diagonal = ~np.eye(len(data), dtype=bool)

        assert corr[same & off_diagonal].mean() > corr[~same].mean()

    def test_invalid_class_count(self):
        """Test num_classes 0 raises ValueError."""
        with pytest.raises(ValueError):
            build_pretrain_dataset(0, 1, 16, seed=0)


class TestToLabeled:
    """Test the training view."""

    def test_channels_replicated(self, small_set):
        """Test the gray plane is copied into each channel."""
        view = small_set.to_labeled(channels=3)

        assert view.samples.shape == (12, 3, 16, 16)
        np.testing.assert_array_equal(view.samples[:, 0], view.samples[:, 2])
        assert view.num_classes == 3

    def test_pooled_flat_vectors(self, small_set):
        """Test pooling to a side and flattening."""
        view = small_set.to_labeled(channels=1, side=4, flatten=True)

        assert view.samples.shape == (12, 16)
        assert view.samples.max() == pytest.approx(1.0)


class TestFractalFiles:
    """Test the binary file plus JSON sidecar."""

    def test_roundtrip(self, small_set, tmp_path):
        """Test labels, images and codes survive a save/load."""
        path = tmp_path / "fractals.bin"

        save_fractal_dataset(small_set, path)
        loaded = load_fractal_dataset(path)

        np.testing.assert_array_equal(loaded.labels, small_set.labels)
        np.testing.assert_allclose(loaded.images, small_set.images, atol=1e-7)
        np.testing.assert_array_equal(loaded.classes[1].matrices, small_set.classes[1].matrices)
        assert loaded.seed == 5
        assert loaded.images_per_class == 4

    def test_bad_magic(self, tmp_path):
        """Test a foreign file raises SchemaError."""
        path = tmp_path / "fractals.bin"
        path.write_bytes(b"\x00" * 64)

        with pytest.raises(SchemaError):
            load_fractal_dataset(path)

    def test_truncated(self, small_set, tmp_path):
        """Test a cut-off payload raises SchemaError."""
        path = tmp_path / "fractals.bin"
        save_fractal_dataset(small_set, path)
        path.write_bytes(path.read_bytes()[:-10])

        with pytest.raises(SchemaError, match="truncated"):
            load_fractal_dataset(path)

    def test_missing_sidecar(self, small_set, tmp_path):
        """Test a missing code sidecar raises SchemaError."""
        path = tmp_path / "fractals.bin"
        save_fractal_dataset(small_set, path)
        (tmp_path / "fractals.codes.json").unlink()

        with pytest.raises(SchemaError, match="sidecar"):
            load_fractal_dataset(path)
