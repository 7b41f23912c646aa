"""Adam with a round-based step-halving learning-rate schedule."""

from dataclasses import dataclass

import torch
from torch import nn

from fedspace.core.errors import DimensionError
from fedspace.nn.models import GradientSet

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class LRSchedule:
    """Learning rate ``base_lr * 0.5 ** floor(round / halving_period)``.

    Attributes:
        base_lr: Learning rate before the first halving
        halving_period: Rounds between halvings
    """

    base_lr: float = 1e-3
    halving_period: int = 1000

    def lr_at(self, round_index: int) -> float:
        """Effective learning rate at a round."""
        return self.base_lr * 0.5 ** (round_index // self.halving_period)


class ScheduledAdam:
    """Adam whose learning rate follows an :class:`LRSchedule`.

    The moment tensors live in the wrapped ``torch.optim.Adam`` state; a new
    instance starts with zero moments and step count 0.

    Attributes:
        schedule: Learning-rate schedule
        step_count: Number of updates applied
    """

    def __init__(self, model: nn.Module, schedule: LRSchedule) -> None:
        self.schedule = schedule
        self.step_count = 0
        self._named = dict(model.named_parameters())
        self._optimizer = torch.optim.Adam(
            self._named.values(), lr=schedule.base_lr, betas=ADAM_BETAS, eps=ADAM_EPS
        )

    @property
    def moments(self) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
        """Per-parameter (first, second) moment tensors, once initialized."""
        out = {}
        for name, param in self._named.items():
            state = self._optimizer.state.get(param)
            if state:
                out[name] = (state["exp_avg"], state["exp_avg_sq"])
        return out

    def _set_lr(self, round_index: int) -> float:
        lr = self.schedule.lr_at(round_index)
        for group in self._optimizer.param_groups:
            group["lr"] = lr
        return lr

    def step(self, grads: GradientSet, round_index: int) -> None:
        """Apply one update with precomputed gradients.

        Raises:
            DimensionError: If gradient names or shapes do not match the parameters
        """
        if set(grads) != set(self._named):
            raise DimensionError("gradient set does not match model parameters")
        for name, param in self._named.items():
            if grads[name].shape != param.shape:
                raise DimensionError(f"gradient shape mismatch for {name}")
            param.grad = grads[name].detach().clone()
        self._set_lr(round_index)
        self._optimizer.step()
        self.step_count += 1


def adam_step(
    model: nn.Module, grads: GradientSet, optimizer: ScheduledAdam, round_index: int
) -> nn.Module:
    """Functional-style wrapper: update ``model`` in place and return it."""
    optimizer.step(grads, round_index)
    return model
