"""
fedspace federated layer.

- client: Local round (prototypes, radius, composite loss, optimization)
- server: Client sampling, model and prototype aggregation, checkpoints
- orchestrator: Round loop and evaluation
- metrics: Round logs, CSV and JSON summary
"""

from fedspace.federated.client import ClientRoundResult, LocalTrainConfig, local_train
from fedspace.federated.metrics import RoundLog, emit_metrics, load_metrics
from fedspace.federated.orchestrator import SimulationResult, evaluate, run_round, run_simulation
from fedspace.federated.server import GlobalPrototypeStore, ServerState

__all__ = [
    "ClientRoundResult",
    "LocalTrainConfig",
    "local_train",
    "GlobalPrototypeStore",
    "ServerState",
    "RoundLog",
    "emit_metrics",
    "load_metrics",
    "SimulationResult",
    "evaluate",
    "run_round",
    "run_simulation",
]
