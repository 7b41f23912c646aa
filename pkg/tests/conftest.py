"""Shared fixtures: tiny datasets, models and run configs."""

import pytest

from fedspace.core.config import SimConfig, config_from_dict
from fedspace.data.datasets import LabeledDataset, make_gaussian_blobs
from fedspace.nn.models import FedModel, ModelSpec, build_model


@pytest.fixture
def blobs() -> tuple[LabeledDataset, LabeledDataset]:
    """4 classes of 4-dimensional blobs, 30 train / 10 test samples per class."""
    return make_gaussian_blobs(num_classes=4, dim=4, train_per_class=30, test_per_class=10, seed=0)


@pytest.fixture
def tiny_spec() -> ModelSpec:
    """MLP over 4-dim vectors with an 8-dim feature space and 4 outputs."""
    return ModelSpec(encoder="mlp", input_shape=(4,), feature_dim=8, num_outputs=4, hidden_dims=(8,))


@pytest.fixture
def tiny_model(tiny_spec: ModelSpec) -> FedModel:
    """Seeded tiny model."""
    return build_model(tiny_spec, seed=0)


@pytest.fixture
def toy_run_data() -> dict:
    """Run document for a fast simulation: 8 classes, 4 clients, 2 tasks, 6 rounds."""
    return {
        "method": "fedspace",
        "seed": 0,
        "total_rounds": 6,
        "clients_per_round": 2,
        "batch_size": 16,
        "eval_period": 3,
        "flags": {"pretrain": False},
        "dataset": {"kind": "synthetic", "num_classes": 8, "dim": 4, "train_per_class": 40, "test_per_class": 10},
        "split": {"num_clients": 4, "num_tasks": 2, "classes_per_task": 4, "min_size": 16, "min_stage_len": 2},
        "model": {"feature_dim": 8, "hidden_dims": [16]},
    }


@pytest.fixture
def toy_config(toy_run_data: dict) -> SimConfig:
    """Validated SimConfig for the toy run."""
    return config_from_dict(toy_run_data)


@pytest.fixture(autouse=True)
def _no_worker_env(monkeypatch: pytest.MonkeyPatch) -> None:
    """Keep FEDSPACE_WORKERS from the host environment out of tests."""
    monkeypatch.delenv("FEDSPACE_WORKERS", raising=False)
