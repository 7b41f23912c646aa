"""Mini-batch index generation."""

import torch


def minibatch_indices(n: int, batch_size: int, generator: torch.Generator) -> list[torch.Tensor]:
    """Shuffle ``range(n)`` with ``generator`` and cut it into batches.

    The last batch may be smaller; empty input gives no batches.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if n == 0:
        return []
    order = torch.randperm(n, generator=generator)
    return list(torch.split(order, batch_size))


def as_tensor(array: object, dtype: torch.dtype) -> torch.Tensor:
    """numpy array (or tensor) to a CPU tensor of ``dtype``."""
    if isinstance(array, torch.Tensor):
        return array.to(dtype)
    return torch.as_tensor(array, dtype=dtype)
