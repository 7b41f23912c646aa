"""Classification loss."""

from typing import Literal

import torch
import torch.nn.functional as F

from fedspace.core.errors import DimensionError


def cross_entropy(
    logits: torch.Tensor,
    labels: torch.Tensor,
    reduction: Literal["mean", "sum"] = "mean",
) -> torch.Tensor:
    """-log softmax(logits)[label], averaged (or summed) over the batch.

    ``F.cross_entropy`` goes through ``log_softmax``, which subtracts the row
    maximum before exponentiating.

    Raises:
        DimensionError: On shape mismatch or labels outside the logit width
    """
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"expected logits (B, C) and labels (B,), got {tuple(logits.shape)} and {tuple(labels.shape)}"
        )
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= logits.shape[1]):
        raise DimensionError(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels, reduction=reduction)
