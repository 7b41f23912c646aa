"""Tests for host detection (fedspace/core/system_detector.py)."""

from unittest.mock import MagicMock, patch

import psutil
import pytest

from fedspace.core.system_detector import detect_system, usable_cpu_count


@pytest.fixture
def mock_psutil() -> MagicMock:
    """Mock psutil for 16GB total, 12GB available, 8 CPUs, affinity to 4 of them."""
    mock = MagicMock()
    mock.Error = psutil.Error
    mock.virtual_memory.return_value = MagicMock(total=16 * 1024**3, available=12 * 1024**3)
    mock.cpu_count.return_value = 8
    mock.Process.return_value.cpu_affinity.return_value = [0, 1, 2, 3]
    return mock


class TestUsableCpuCount:
    """Tests for usable_cpu_count."""

    def test_affinity_mask_wins(self, mock_psutil: MagicMock) -> None:
        """Test a restricted affinity mask limits the count."""
        with patch("fedspace.core.system_detector.psutil", mock_psutil):
            assert usable_cpu_count() == 4

    def test_no_affinity_support(self, mock_psutil: MagicMock) -> None:
        """Test platforms without cpu_affinity fall back to the logical count."""
        mock_psutil.Process.return_value.cpu_affinity.side_effect = AttributeError
        with patch("fedspace.core.system_detector.psutil", mock_psutil):
            assert usable_cpu_count() == 8

    def test_unknown_count_is_one(self, mock_psutil: MagicMock) -> None:
        """Test a None CPU count falls back to one."""
        mock_psutil.Process.return_value.cpu_affinity.return_value = []
        mock_psutil.cpu_count.return_value = None
        with patch("fedspace.core.system_detector.psutil", mock_psutil):
            assert usable_cpu_count() == 1


class TestDetectSystem:
    """Tests for detect_system."""

    def test_fields(self, mock_psutil: MagicMock) -> None:
        """Test RAM is reported in GB and CPUs follow the affinity mask."""
        with patch("fedspace.core.system_detector.psutil", mock_psutil):
            info = detect_system()

        assert info.total_ram_gb == pytest.approx(16.0)
        assert info.available_ram_gb == pytest.approx(12.0)
        assert info.cpu_count == 4
        assert info.torch_threads >= 1

    @pytest.mark.parametrize("raw,expected", [("darwin", "darwin"), ("linux", "linux"), ("win32", "windows"), ("freebsd13", "linux")])
    def test_platform_names(self, mock_psutil: MagicMock, raw: str, expected: str) -> None:
        """Test sys.platform mapping."""
        with patch("fedspace.core.system_detector.psutil", mock_psutil), patch(
            "fedspace.core.system_detector.sys.platform", raw
        ):
            assert detect_system().platform == expected
