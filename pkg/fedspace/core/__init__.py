"""
fedspace core modules.

- config: Run configuration, presets and validation
- errors: Exception hierarchy
- logging_utils: Logger setup
- rng: Named seeded random streams
- system_detector: Host resource detection
"""

from fedspace.core.config import (
    AblationFlags,
    DatasetConfig,
    ModelConfig,
    PretrainConfig,
    SimConfig,
    SplitConfig,
    load_sim_config,
    merge_overrides,
    preset_config,
    save_sim_config,
)
from fedspace.core.rng import derive_rng, derive_torch_generator
from fedspace.core.system_detector import SystemInfo, detect_system

__all__ = [
    # Config
    "AblationFlags",
    "DatasetConfig",
    "ModelConfig",
    "PretrainConfig",
    "SimConfig",
    "SplitConfig",
    "load_sim_config",
    "save_sim_config",
    "merge_overrides",
    "preset_config",
    # RNG
    "derive_rng",
    "derive_torch_generator",
    # System detector
    "SystemInfo",
    "detect_system",
]
