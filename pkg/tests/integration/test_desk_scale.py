"""
Desk-scale asynchronous continual learning experiment.

20 Gaussian-blob classes in 16 dimensions, 10 clients with 4 tasks of 5
classes each, 3 clients per round, 300 rounds, averaged over 3 seeds. The
assertions check orderings between methods, not absolute accuracies.

Clients train three local epochs at lr 3e-3 on a Dirichlet(1) partition.
"""

from typing import Any

import numpy as np
import pytest

from fedspace.core.config import SimConfig, config_from_dict
from fedspace.federated.orchestrator import run_simulation

SEEDS = (0, 1, 2)


def desk_config(method: str, seed: int, **extra: Any) -> SimConfig:
    """Desk-scale run document for a method preset plus overrides."""
    document: dict[str, Any] = {
        "method": method,
        "seed": seed,
        "total_rounds": 300,
        "clients_per_round": 3,
        "batch_size": 32,
        "eval_period": 50,
        "base_lr": 3e-3,
        "local_epochs": 3,
        "dataset": {"kind": "synthetic", "num_classes": 20, "dim": 16, "seed": seed},
        "split": {
            "num_clients": 10,
            "num_tasks": 4,
            "classes_per_task": 5,
            "alpha": 1.0,
            "min_size": 64,
            "min_stage_len": 10,
        },
        "model": {"encoder": "mlp", "feature_dim": 32, "hidden_dims": [64]},
        "pretrain": {"num_classes": 40, "images_per_class": 10, "iterations": 5000, "epochs": 1},
    }
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key] = {**document[key], **value}
        else:
            document[key] = value
    return config_from_dict(document)


def _final_accuracy(method: str, **extra: Any) -> float:
    accs = []
    for seed in SEEDS:
        result = run_simulation(desk_config(method, seed, **extra))
        accs.append(result.accuracy_curve[-1])
    return float(np.mean(accs))


@pytest.fixture(scope="module")
def fedspace_accuracy() -> float:
    """Mean final accuracy of the full method."""
    return _final_accuracy("fedspace")


@pytest.mark.slow
class TestDeskScale:
    """Orderings between FedSpace, its ablations and FedAvg."""

    def test_fedavg_far_below_fedspace(self, fedspace_accuracy):
        """Test FedAvg reaches less than 40% of FedSpace's final accuracy."""
        assert _final_accuracy("fedavg") < 0.4 * fedspace_accuracy

    def test_prototype_aggregation_helps(self, fedspace_accuracy):
        """Test client-local prototypes lose at least 2 points."""
        local = _final_accuracy("fedspace", flags={"proto_aggr": False})

        assert fedspace_accuracy >= local + 0.02

    def test_blended_server_aggregation_helps(self, fedspace_accuracy):
        """Test rho = 1 does not beat the blended update on average."""
        assert _final_accuracy("fedspace", flags={"server_aggr": False}) <= fedspace_accuracy
