"""Host resource detection for sizing the client worker pool."""

import sys
from dataclasses import dataclass

import psutil
import torch

_PLATFORM_NAMES = {"darwin": "darwin", "win32": "windows"}


@dataclass
class SystemInfo:
    """Host resources relevant to a simulation run.

    Attributes:
        total_ram_gb: Total system RAM in GB
        available_ram_gb: Currently available RAM in GB
        cpu_count: Logical CPUs this process may run on
        platform: Operating system (darwin/linux/windows)
        torch_threads: Intra-op threads torch will use
    """

    total_ram_gb: float
    available_ram_gb: float
    cpu_count: int
    platform: str
    torch_threads: int


def usable_cpu_count() -> int:
    """Logical CPUs available to this process.

    Uses the scheduler affinity mask where psutil exposes it (Linux, Windows),
    so a container pinned to a subset of cores does not oversubscribe them.
    """
    try:
        affinity = psutil.Process().cpu_affinity()
    except (AttributeError, NotImplementedError, psutil.Error):
        affinity = None
    if affinity:
        return len(affinity)
    return psutil.cpu_count(logical=True) or 1


def detect_system() -> SystemInfo:
    """Snapshot RAM, CPUs, platform and torch threading."""
    mem = psutil.virtual_memory()
    return SystemInfo(
        total_ram_gb=mem.total / 1024**3,
        available_ram_gb=mem.available / 1024**3,
        cpu_count=usable_cpu_count(),
        platform=_PLATFORM_NAMES.get(sys.platform, "linux"),
        torch_threads=torch.get_num_threads(),
    )
