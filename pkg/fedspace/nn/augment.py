"""Self-supervised rotation label augmentation.

Each image is expanded into its four 90-degree rotations; the rotated copy of
a class-``y`` image gets label ``4 * y + r``. Heads trained this way have
``4 * |C|`` outputs, and the base-class logits are the ``r = 0`` block
(every fourth column).
"""

import torch

from fedspace.core.errors import ConfigError

NUM_ROTATIONS = 4


def label_augment(
    images: torch.Tensor, labels: torch.Tensor, num_rotations: int = NUM_ROTATIONS
) -> tuple[torch.Tensor, torch.Tensor]:
    """Concatenate rotation blocks ``r = 0..num_rotations-1``.

    Returns:
        (images of shape (num_rotations * B, ch, H, W), labels ``y * num_rotations + r``)

    Raises:
        ConfigError: For non-image or non-square inputs
    """
    if images.ndim != 4 or images.shape[-1] != images.shape[-2]:
        raise ConfigError("label augmentation needs square (B, ch, H, W) images")
    rotated = [torch.rot90(images, k=r, dims=(-2, -1)) for r in range(num_rotations)]
    new_labels = [labels * num_rotations + r for r in range(num_rotations)]
    return torch.cat(rotated), torch.cat(new_labels)


def base_logits(logits: torch.Tensor, num_rotations: int) -> torch.Tensor:
    """Logits of the unrotated block (columns ``0, R, 2R, ...``)."""
    return logits[:, ::num_rotations] if num_rotations > 1 else logits
