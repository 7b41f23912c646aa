"""Server-side fractal pre-training and classifier-head slicing."""

import logging
from dataclasses import dataclass, field, replace

import torch
from torch import nn

from fedspace.core.errors import DimensionError
from fedspace.core.rng import derive_torch_generator
from fedspace.data.datasets import LabeledDataset
from fedspace.nn.augment import NUM_ROTATIONS, label_augment
from fedspace.nn.batching import as_tensor, minibatch_indices
from fedspace.nn.losses import cross_entropy
from fedspace.nn.models import FedModel, backward, check_finite, clone_model, encode, predict
from fedspace.nn.optim import LRSchedule, ScheduledAdam, adam_step

logger = logging.getLogger(__name__)

# pre-training runs at a constant learning rate
_NO_HALVING = 2**62


@dataclass
class PretrainResult:
    """Outcome of :func:`pretrain`.

    Attributes:
        model: θ^(0)
        losses: Loss of every optimizer step, in order
        train_accuracy: Top-1 accuracy on the pre-training set after training
    """

    model: FedModel
    losses: list[float] = field(default_factory=list)
    train_accuracy: float | None = None


def pretrain(
    model: FedModel,
    data: LabeledDataset,
    epochs: int = 1,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    rotations: bool = False,
) -> PretrainResult:
    """Supervised cross-entropy training on a fractal dataset.

    Args:
        model: Initial model; not modified
        data: Pre-training samples and labels
        epochs: Passes over the data (0 returns a copy of ``model``)
        batch_size: Mini-batch size
        lr: Adam learning rate
        seed: Shuffling seed
        rotations: Train with rotation label augmentation

    Raises:
        DimensionError: If the head has fewer outputs than pre-training labels
        NumericError: On a non-finite loss
    """
    width = data.num_classes * (NUM_ROTATIONS if rotations else 1)
    if model.num_outputs < width:
        raise DimensionError(f"head has {model.num_outputs} outputs, pre-training needs {width}")

    trained = clone_model(model)
    trained.spec = replace(trained.spec, num_rotations=NUM_ROTATIONS if rotations else 1)
    result = PretrainResult(trained)
    if epochs == 0:
        return result

    dtype = next(trained.parameters()).dtype
    inputs = as_tensor(data.samples, dtype)
    labels = torch.as_tensor(data.labels)
    optimizer = ScheduledAdam(trained, LRSchedule(lr, _NO_HALVING))
    generator = derive_torch_generator(seed, "pretrain")

    for epoch in range(epochs):
        for batch in minibatch_indices(len(labels), batch_size, generator):
            x, y = inputs[batch], labels[batch]
            if rotations:
                x, y = label_augment(x, y)
            loss = cross_entropy(trained(x), y)
            check_finite("pre-training loss", loss)
            adam_step(trained, backward(trained, loss), optimizer, 0)
            result.losses.append(float(loss.detach()))
        logger.debug("pretrain epoch %d: last loss %.4f", epoch, result.losses[-1])

    preds = predict(trained, inputs, NUM_ROTATIONS if rotations else 1)
    result.train_accuracy = float((preds == labels).double().mean())
    logger.info("Pre-training done: %d steps, train accuracy %.3f", len(result.losses), result.train_accuracy)
    return result


def slice_head(pretrained: FedModel, target_classes: int, num_rotations: int = 1) -> FedModel:
    """Keep classifier rows for outputs ``0 .. target_classes * num_rotations - 1``.

    The encoder is copied unchanged; target class ``i`` inherits pre-training
    output unit ``i`` (with rotations, units ``R*i .. R*i + R - 1``).

    Raises:
        DimensionError: If the pre-trained head is narrower than requested, or
            was trained with a different number of rotations per class
    """
    if pretrained.spec.num_rotations != num_rotations:
        raise DimensionError(
            f"head was trained with {pretrained.spec.num_rotations} rotation(s) per class, "
            f"cannot slice {num_rotations}-rotation blocks from it"
        )
    width = target_classes * num_rotations
    if width > pretrained.num_outputs:
        raise DimensionError(f"cannot slice {width} outputs from a {pretrained.num_outputs}-wide head")
    sliced = clone_model(pretrained)
    old = pretrained.classifier
    head = nn.Linear(old.in_features, width).to(old.weight.dtype)
    with torch.no_grad():
        head.weight.copy_(old.weight[:width])
        head.bias.copy_(old.bias[:width])
    sliced.classifier = head
    sliced.spec = replace(pretrained.spec, num_outputs=width)
    return sliced


def linear_probe_accuracy(
    model: FedModel,
    train: LabeledDataset,
    test: LabeledDataset,
    epochs: int = 30,
    lr: float = 1e-2,
    batch_size: int = 64,
    seed: int = 0,
) -> float:
    """Test accuracy of a linear classifier trained on frozen encoder features."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        train_x = encode(model, as_tensor(train.samples, dtype))
        test_x = encode(model, as_tensor(test.samples, dtype))
    train_y = torch.as_tensor(train.labels)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        probe = nn.Linear(model.feature_dim, train.num_classes).to(dtype)
    optimizer = torch.optim.Adam(probe.parameters(), lr=lr)
    generator = derive_torch_generator(seed, "probe")
    for _ in range(epochs):
        for batch in minibatch_indices(len(train_y), batch_size, generator):
            optimizer.zero_grad()
            cross_entropy(probe(train_x[batch]), train_y[batch]).backward()
            optimizer.step()
    with torch.no_grad():
        preds = probe(test_x).argmax(dim=1)
    return float((preds == torch.as_tensor(test.labels)).double().mean())
