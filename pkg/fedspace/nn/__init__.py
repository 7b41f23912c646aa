"""Models, losses, optimizer and parameter checkpoints."""

from fedspace.nn.models import FedModel, ModelSpec, build_model
from fedspace.nn.optim import LRSchedule, ScheduledAdam

__all__ = ["FedModel", "ModelSpec", "build_model", "LRSchedule", "ScheduledAdam"]
