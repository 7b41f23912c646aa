"""
Simulation configuration for fedspace.

A run is described by one YAML or JSON document mirroring :class:`SimConfig`.
Method presets (fedavg / pass / fedspace) provide the defaults; any field set
in the document overrides the preset.
"""

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from fedspace.core.errors import ConfigError

WORKERS_ENV_VAR = "FEDSPACE_WORKERS"

METHODS = {"fedspace", "fedavg", "pass"}


@dataclass
class DatasetConfig:
    """Where the samples come from.

    Attributes:
        kind: "synthetic" (Gaussian blobs) or "cifar100" (local binary copy)
        path: CIFAR-100 directory when kind is cifar100
        num_classes: Synthetic class count
        dim: Synthetic vector dimension
        train_per_class: Synthetic training samples per class
        test_per_class: Synthetic test samples per class
        spread: Synthetic cluster standard deviation
        seed: Synthetic generation seed
    """

    kind: str = "synthetic"
    path: str | None = None
    num_classes: int = 20
    dim: int = 16
    train_per_class: int = 200
    test_per_class: int = 50
    spread: float = 0.08
    seed: int = 0


@dataclass
class SplitConfig:
    """Split generation settings used when no split file is given.

    Attributes:
        num_clients: N
        num_tasks: Number of class-block tasks
        classes_per_task: Classes per task
        alpha: Dirichlet concentration
        exponent: Power-law exponent of client sizes
        min_size: Minimum samples per client
        min_stage_len: Minimum rounds per stage
        fraction: Share of the training set distributed to clients
        shuffle_classes: Shuffle class order before blocking tasks
    """

    num_clients: int = 10
    num_tasks: int = 4
    classes_per_task: int = 5
    alpha: float = 3.0
    exponent: float = 1.5
    min_size: int = 64
    min_stage_len: int = 10
    fraction: float = 1.0
    shuffle_classes: bool = False


@dataclass
class ModelConfig:
    """Encoder architecture.

    Attributes:
        encoder: "auto" (conv for images, mlp for vectors), "mlp" or "conv"
        feature_dim: d
        hidden_dims: MLP hidden widths
        conv_channels: Conv block widths
        dtype: "float64" or "float32"
    """

    encoder: str = "auto"
    feature_dim: int = 32
    hidden_dims: list[int] = field(default_factory=lambda: [64])
    conv_channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    dtype: str = "float64"


@dataclass
class PretrainConfig:
    """Fractal pre-training settings.

    Attributes:
        num_classes: |C_f|
        images_per_class: Rendered images per class
        image_size: Render resolution
        iterations: Chaos-game points per image
        epochs: Pre-training epochs
        batch_size: Pre-training batch size
        lr: Pre-training learning rate
    """

    num_classes: int = 100
    images_per_class: int = 10
    image_size: int = 32
    iterations: int = 50_000
    epochs: int = 1
    batch_size: int = 32
    lr: float = 1e-3


@dataclass
class AblationFlags:
    """FedSpace components that can be switched off.

    Attributes:
        proto_aggr: Aggregate prototypes on the server (off: client-local prototypes)
        pretrain: Initialize from fractal pre-training
        repr_loss: Use the contrastive representation loss
        server_aggr: Blend with the previous global model (off: plain FedAvg, rho = 1)
    """

    proto_aggr: bool = True
    pretrain: bool = True
    repr_loss: bool = True
    server_aggr: bool = True


@dataclass
class SimConfig:
    """Full description of one simulation run.

    Attributes:
        method: Preset the defaults came from (fedspace/fedavg/pass)
        seed: Master seed for model init, selection and client streams
        total_rounds: T
        clients_per_round: K
        lambda_p: Weight of the prototype loss
        lambda_r: Weight of the representation loss
        beta: Prototype moving-average weight
        rho: Server blending weight
        base_lr: Adam learning rate at round 0
        lr_halving_period: Rounds between learning-rate halvings
        batch_size: Local batch size B
        local_epochs: Local passes per round
        eval_period: Evaluate every this many rounds (and at round T)
        flags: Ablation switches
        label_augment: "auto" (on for images), "on" or "off"
        radius_convention: "class_mean" or "literal"
        model_weighting: "selected" or "prefix"
        negatives: "per_vector" or "per_class_mean"
        repr_normalizer: "batch" or "classes"
        repr_include_active_protos: Add augmented prototypes of active,
            already-discovered classes to the representation pool
        workers: Client worker threads
        log_level: debug/info/warning/error
        split_path: Split file; generated from ``split`` when absent
        theta0_path: Pre-trained parameters; pre-training runs when absent
        output_dir: Where metrics and checkpoints go
        dataset: Data source
        split: Split generation settings
        model: Encoder architecture
        pretrain: Pre-training settings
    """

    method: str = "fedspace"
    seed: int = 0
    total_rounds: int = 300
    clients_per_round: int = 5
    lambda_p: float = 1e-2
    lambda_r: float = 1e-2
    beta: float = 0.1
    rho: float = 0.5
    base_lr: float = 1e-3
    lr_halving_period: int = 1000
    batch_size: int = 64
    local_epochs: int = 1
    eval_period: int = 10
    flags: AblationFlags = field(default_factory=AblationFlags)
    label_augment: str = "auto"
    radius_convention: str = "class_mean"
    model_weighting: str = "selected"
    negatives: str = "per_vector"
    repr_normalizer: str = "batch"
    repr_include_active_protos: bool = True
    workers: int = 1
    log_level: str = "info"
    split_path: str | None = None
    theta0_path: str | None = None
    output_dir: str = "runs/default"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)


def preset_config(method: str) -> SimConfig:
    """Defaults for a method preset.

    Raises:
        ConfigError: For an unknown method name
    """
    method = method.lower()
    if method not in METHODS:
        raise ConfigError(f"Invalid method: {method}. Must be one of: {', '.join(sorted(METHODS))}")
    if method == "fedavg":
        return SimConfig(
            method=method,
            lambda_p=0.0,
            lambda_r=0.0,
            rho=1.0,
            flags=AblationFlags(proto_aggr=False, pretrain=False, repr_loss=False, server_aggr=False),
        )
    if method == "pass":
        return SimConfig(
            method=method,
            lambda_r=0.0,
            rho=1.0,
            flags=AblationFlags(proto_aggr=False, pretrain=False, repr_loss=False, server_aggr=False),
        )
    return SimConfig(method=method)


def _validate_enum_field(data: dict[str, Any], name: str, valid_values: set[str]) -> None:
    """Check that a string field has one of the allowed values.

    Raises:
        ConfigError: If the value is not allowed
    """
    if name in data and data[name] is not None:
        if str(data[name]).lower() not in valid_values:
            raise ConfigError(
                f"Invalid {name}: {data[name]}. Must be one of: {', '.join(sorted(valid_values))}"
            )


def _apply(instance: Any, data: dict[str, Any], prefix: str = "") -> Any:
    """Return ``instance`` with ``data`` applied, recursing into nested dataclasses."""
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    known = {f.name: f for f in fields(instance)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"Unknown config field(s): {', '.join(prefix + k for k in sorted(unknown))}")
    updates: dict[str, Any] = {}
    for key, value in data.items():
        current = getattr(instance, key)
        if is_dataclass(current):
            updates[key] = _apply(current, value or {}, f"{prefix}{key}.")
        else:
            updates[key] = value
    return replace(instance, **updates)


def validate_config(config: SimConfig) -> None:
    """Range and choice checks for every field.

    Raises:
        ConfigError: Naming the first invalid field
    """
    data = asdict(config)
    _validate_enum_field(data, "method", METHODS)
    _validate_enum_field(data, "label_augment", {"auto", "on", "off"})
    _validate_enum_field(data, "radius_convention", {"class_mean", "literal"})
    _validate_enum_field(data, "model_weighting", {"selected", "prefix"})
    _validate_enum_field(data, "negatives", {"per_vector", "per_class_mean"})
    _validate_enum_field(data, "repr_normalizer", {"batch", "classes"})
    _validate_enum_field(data, "log_level", {"debug", "info", "warning", "error"})
    _validate_enum_field(data["dataset"], "kind", {"synthetic", "cifar100"})
    _validate_enum_field(data["model"], "encoder", {"auto", "mlp", "conv"})
    _validate_enum_field(data["model"], "dtype", {"float64", "float32"})

    checks: list[tuple[str, bool]] = [
        ("seed", config.seed >= 0),
        ("total_rounds", config.total_rounds >= 0),
        ("clients_per_round", config.clients_per_round >= 1),
        ("lambda_p", config.lambda_p >= 0),
        ("lambda_r", config.lambda_r >= 0),
        ("beta", 0.0 <= config.beta <= 1.0),
        ("rho", 0.0 <= config.rho <= 1.0),
        ("base_lr", config.base_lr > 0),
        ("lr_halving_period", config.lr_halving_period >= 1),
        ("batch_size", config.batch_size >= 1),
        ("local_epochs", config.local_epochs >= 1),
        ("eval_period", config.eval_period >= 1),
        ("workers", config.workers >= 1),
        ("split.num_clients", config.split.num_clients >= 1),
        ("split.alpha", config.split.alpha > 0),
        ("split.exponent", config.split.exponent >= 0),
        ("split.fraction", 0.0 < config.split.fraction <= 1.0),
        ("model.feature_dim", config.model.feature_dim >= 1),
        ("pretrain.num_classes", config.pretrain.num_classes >= 1),
        ("pretrain.image_size", config.pretrain.image_size >= 16),
        ("pretrain.epochs", config.pretrain.epochs >= 0),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigError(f"Invalid {name}: {_lookup(config, name)!r}")
    if config.dataset.kind == "cifar100" and not config.dataset.path:
        raise ConfigError("dataset.path is required when dataset.kind is cifar100")
    if config.split_path is None and config.clients_per_round > config.split.num_clients:
        raise ConfigError("clients_per_round cannot exceed split.num_clients")


def _lookup(config: SimConfig, dotted: str) -> Any:
    value: Any = config
    for part in dotted.split("."):
        value = getattr(value, part)
    return value


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    """Build and validate a SimConfig from a parsed document.

    Raises:
        ConfigError: On unknown fields or invalid values
    """
    data = dict(data or {})
    config = _apply(preset_config(str(data.get("method", "fedspace"))), data)
    validate_config(config)
    return config


def load_sim_config(path: Path | None = None, method: str | None = None) -> SimConfig:
    """Load a YAML or JSON run document.

    Args:
        path: Run document; preset defaults only when None
        method: Preset overriding the document's ``method``

    Raises:
        ConfigError: If the file is missing, unparsable or invalid
    """
    if path is None:
        return config_from_dict({"method": method or "fedspace"})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in config file: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping")
    if method is not None:
        data["method"] = method
    return config_from_dict(data)


def save_sim_config(config: SimConfig, path: Path) -> None:
    """Write a config document that :func:`load_sim_config` reads back."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.dump(asdict(config), f, default_flow_style=False, sort_keys=False, allow_unicode=True, indent=2)


def merge_overrides(config: SimConfig, **overrides: Any) -> SimConfig:
    """Apply runtime overrides, ignoring None values.

    Raises:
        ConfigError: If the result is invalid
    """
    merged = _apply(config, {k: v for k, v in overrides.items() if v is not None})
    validate_config(merged)
    return merged


def resolve_workers(config: SimConfig, cpu_count: int) -> int:
    """Worker-pool size: ``FEDSPACE_WORKERS`` overrides ``config.workers``.

    The variable takes a positive integer or ``auto`` (one worker per CPU, at
    most one per selected client).

    Raises:
        ConfigError: If the variable is set to anything else
    """
    raw = os.environ.get(WORKERS_ENV_VAR)
    if raw is None or raw == "":
        return config.workers
    if raw.strip().lower() == "auto":
        return max(1, min(cpu_count, config.clients_per_round))
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be a positive integer or 'auto', got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV_VAR} must be >= 1, got {value}")
    return value
