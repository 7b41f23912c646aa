"""Client-side local round.

A client downloads θ^(t-1) and the prototype bank, computes class prototypes
and a feature radius with the downloaded encoder, then runs Adam on

    L = L_CE + lambda_p * L_p + lambda_r * L_r

over its current stage data. ``L_p`` classifies Gaussian-augmented prototypes
of classes the client is not currently training on; ``L_r`` is a supervised
contrastive term over batch features and augmented prototypes.
"""

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import torch

from fedspace.core.errors import ClientRoundError, DimensionError, NumericError
from fedspace.core.rng import derive_torch_generator
from fedspace.data.datasets import LabeledDataset
from fedspace.nn.augment import NUM_ROTATIONS, label_augment
from fedspace.nn.batching import as_tensor, minibatch_indices
from fedspace.nn.losses import cross_entropy
from fedspace.nn.models import (
    FedModel,
    StateDict,
    backward,
    check_finite,
    classify,
    clone_model,
    encode,
    parameter_state,
)
from fedspace.nn.optim import LRSchedule, ScheduledAdam, adam_step

logger = logging.getLogger(__name__)

COSINE_EPS = 1e-12

RadiusConvention = Literal["class_mean", "literal"]
NegativeSet = Literal["per_vector", "per_class_mean"]
ReprNormalizer = Literal["batch", "classes"]


@dataclass
class Prototype:
    """Mean encoder feature of one class on one client.

    Attributes:
        class_id: Class index
        vector: e_{k,c}, shape (d,)
        support_count: Number of samples averaged
    """

    class_id: int
    vector: torch.Tensor
    support_count: int


@dataclass
class RadiusStat:
    """Feature-spread radius of one client.

    Attributes:
        radius: r_k >= 0
        support_count: Samples the radius was computed from
    """

    radius: float
    support_count: int


@dataclass
class PrototypeBank:
    """The prototypes and radius a client trains against.

    Attributes:
        prototypes: class -> prototype vector
        radius: Augmentation radius
    """

    prototypes: dict[int, torch.Tensor] = field(default_factory=dict)
    radius: float = 0.0

    @property
    def classes(self) -> frozenset[int]:
        """Classes with a stored prototype."""
        return frozenset(self.prototypes)


@dataclass
class LocalTrainConfig:
    """Hyperparameters of a local round.

    Attributes:
        lambda_p: Weight of L_p
        lambda_r: Weight of L_r (ignored when ``repr_loss`` is False)
        batch_size: Mini-batch size B
        local_epochs: Passes over the stage data
        schedule: Learning-rate schedule
        label_augment: Train on the four rotations of every image
        repr_loss: Use L_r
        radius_convention: "class_mean" or "literal"
        negatives: "per_vector" or "per_class_mean"
        repr_normalizer: "batch" or "classes"
        repr_include_active_protos: Add augmented prototypes of active
            classes that are already in the bank to the L_r pool
    """

    lambda_p: float = 1e-2
    lambda_r: float = 1e-2
    batch_size: int = 64
    local_epochs: int = 1
    schedule: LRSchedule = field(default_factory=LRSchedule)
    label_augment: bool = False
    repr_loss: bool = True
    radius_convention: RadiusConvention = "class_mean"
    negatives: NegativeSet = "per_vector"
    repr_normalizer: ReprNormalizer = "batch"
    repr_include_active_protos: bool = True

    @property
    def num_rotations(self) -> int:
        """Rotation blocks in the classifier head."""
        return NUM_ROTATIONS if self.label_augment else 1


@dataclass
class ClientRoundResult:
    """What a client uploads after a round.

    Attributes:
        client_id: Client index
        round_index: Round the client trained in
        state: θ_k^(t); the downloaded parameters when the stage was empty
        prototypes: One prototype per class with local samples
        radius: r_k, None when the stage was empty
        class_counts: Samples per class in the stage
        losses: Per-step traces of "ce", "lp" and "lr"
    """

    client_id: int
    round_index: int
    state: StateDict
    prototypes: list[Prototype] = field(default_factory=list)
    radius: RadiusStat | None = None
    class_counts: dict[int, int] = field(default_factory=dict)
    losses: dict[str, list[float]] = field(default_factory=lambda: {"ce": [], "lp": [], "lr": []})

    @property
    def num_samples(self) -> int:
        """|D_k^(t)|."""
        return sum(self.class_counts.values())

    def mean_loss(self, term: str) -> float:
        """Mean of a loss trace, 0.0 when nothing was trained."""
        trace = self.losses.get(term, [])
        return float(np.mean(trace)) if trace else 0.0


def _class_features(
    model: FedModel, inputs: torch.Tensor, labels: torch.Tensor
) -> list[tuple[int, torch.Tensor]]:
    with torch.no_grad():
        features = encode(model, inputs)
    return [(int(c), features[labels == c]) for c in torch.unique(labels, sorted=True)]


def compute_prototypes(model: FedModel, inputs: torch.Tensor, labels: torch.Tensor) -> list[Prototype]:
    """Per-class mean of encoder features, in ascending class order.

    Classes without samples are simply absent.
    """
    return [
        Prototype(c, feats.mean(dim=0), len(feats)) for c, feats in _class_features(model, inputs, labels)
    ]


def compute_radius(
    model: FedModel,
    inputs: torch.Tensor,
    labels: torch.Tensor,
    convention: RadiusConvention = "class_mean",
) -> RadiusStat:
    """Square root of the averaged per-class feature variance.

    Each class contributes ``Tr(Sigma_c) / d`` with the population covariance.
    ``class_mean`` averages those over classes; ``literal`` sums them and
    divides by the number of samples.
    """
    per_class = _class_features(model, inputs, labels)
    if not per_class:
        return RadiusStat(0.0, 0)
    d = per_class[0][1].shape[1]
    spreads = [float(((f - f.mean(dim=0)) ** 2).sum(dim=1).mean()) / d for _, f in per_class]
    normalizer = len(spreads) if convention == "class_mean" else len(labels)
    return RadiusStat(float(np.sqrt(sum(spreads) / normalizer)), len(labels))


def augment_prototype(e: torch.Tensor, r: float, generator: torch.Generator) -> torch.Tensor:
    """ê = e + r·z with z ~ N(0, I) drawn from ``generator``."""
    if r == 0.0:
        return e.clone()
    z = torch.randn(e.shape, generator=generator, dtype=e.dtype)
    return e + r * z


def sample_augmented_prototypes(
    bank: PrototypeBank, eligible: frozenset[int], count: int, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """``count`` augmented prototypes of classes drawn uniformly, with replacement, from ``eligible``."""
    classes = sorted(eligible)
    picks = torch.randint(len(classes), (count,), generator=generator)
    labels = torch.as_tensor(classes, dtype=torch.long)[picks]
    centers = torch.stack([bank.prototypes[c] for c in classes])[picks]
    noise = torch.randn(centers.shape, generator=generator, dtype=centers.dtype)
    return centers + bank.radius * noise, labels


def proto_loss(
    model: FedModel,
    bank: PrototypeBank,
    active_classes: frozenset[int],
    batch_size: int,
    generator: torch.Generator,
    num_rotations: int = 1,
) -> torch.Tensor:
    """Summed cross-entropy of ``batch_size`` augmented old-class prototypes.

    Old classes are the bank's classes outside ``active_classes``; with none
    the loss is zero and nothing is drawn from ``generator``.
    """
    eligible = bank.classes - active_classes
    if not eligible or batch_size == 0:
        return torch.zeros((), dtype=next(model.parameters()).dtype)
    vectors, labels = sample_augmented_prototypes(bank, eligible, batch_size, generator)
    return cross_entropy(classify(model, vectors), labels * num_rotations, reduction="sum")


def augment_old_prototypes(
    bank: PrototypeBank,
    active_classes: frozenset[int],
    generator: torch.Generator,
    include_active: bool = True,
) -> tuple[torch.Tensor, torch.Tensor] | None:
    """One augmented prototype per bank class, for the L_r pool.

    Active classes are skipped unless ``include_active``. Returns None when
    no class qualifies.
    """
    classes = sorted(bank.classes if include_active else bank.classes - active_classes)
    if not classes:
        return None
    vectors = torch.stack([augment_prototype(bank.prototypes[c], bank.radius, generator) for c in classes])
    return vectors, torch.as_tensor(classes, dtype=torch.long)


def repr_loss(
    features: torch.Tensor,
    labels: torch.Tensor,
    augmented: tuple[torch.Tensor, torch.Tensor] | None,
    active_classes: frozenset[int],
    negatives: NegativeSet = "per_vector",
    normalizer: ReprNormalizer = "batch",
) -> torch.Tensor:
    """Supervised contrastive loss over batch features and augmented prototypes.

    For each active class c with at least two pooled members, every ordered
    positive pair (i, j) contributes ``log(e^{s_ij} / (e^{s_ij} + sum_k e^{s_ik}))``
    with cosine similarities and negatives from other classes. Per-class sums
    are divided by ``N_c (N_c - 1)``; the total is negated and divided by the
    batch size (``batch``) or the number of active classes (``classes``).

    Raises:
        DimensionError: If features and labels differ in length
    """
    if features.shape[0] != labels.shape[0]:
        raise DimensionError(f"{features.shape[0]} features but {labels.shape[0]} labels")
    pool, pool_labels = features, labels
    if augmented is not None:
        pool = torch.cat([features, augmented[0].to(features.dtype)])
        pool_labels = torch.cat([labels, augmented[1]])

    unit = pool / (pool.norm(dim=1, keepdim=True) + COSINE_EPS)
    sim = unit @ unit.T

    total = torch.zeros((), dtype=features.dtype)
    for c in sorted(active_classes):
        members = pool_labels == c
        n_c = int(members.sum())
        # no ordered positive pair
        if n_c < 2:
            continue
        others = ~members
        if not others.any():
            continue
        rows = sim[members]
        if negatives == "per_vector":
            neg = rows[:, others]
        else:
            # one similarity per negative class: its mean over members
            neg = torch.stack(
                [rows[:, pool_labels == k].mean(dim=1) for k in torch.unique(pool_labels[others], sorted=True)],
                dim=1,
            )
        neg_lse = torch.logsumexp(neg, dim=1, keepdim=True)
        # log(e^s / (e^s + sum e^neg)) without overflow
        pos = rows[:, members]
        log_ratio = pos - torch.logaddexp(pos, neg_lse)
        off_diagonal = ~torch.eye(n_c, dtype=torch.bool)
        total = total + log_ratio[off_diagonal].sum() / (n_c * (n_c - 1))

    scale = len(features) if normalizer == "batch" else max(len(active_classes), 1)
    return -total / scale


def local_train(
    global_model: FedModel,
    bank: PrototypeBank,
    stage: LabeledDataset,
    active_classes: frozenset[int],
    round_index: int,
    config: LocalTrainConfig,
    seed: int,
    client_id: int,
) -> ClientRoundResult:
    """Run one client round starting from the downloaded global model.

    Prototypes and radius are computed with the downloaded encoder before
    any update. The optimizer starts fresh. Batch order comes from the stream
    ``(seed, "client", round, client_id, "batches")`` and prototype noise from
    ``(..., "protos")``, so the result depends only on the inputs.

    Raises:
        ClientRoundError: If a loss or gradient becomes non-finite
    """
    model = clone_model(global_model)
    class_counts = {int(c): int(n) for c, n in zip(*np.unique(stage.labels, return_counts=True))}
    result = ClientRoundResult(client_id, round_index, parameter_state(global_model), class_counts=class_counts)
    if len(stage) == 0:
        logger.debug("client %d has no data for round %d", client_id, round_index)
        return result

    dtype = next(model.parameters()).dtype
    inputs = as_tensor(stage.samples, dtype)
    labels = torch.as_tensor(stage.labels)
    # before the first step: the server expects the downloaded encoder's features
    result.prototypes = compute_prototypes(model, inputs, labels)
    result.radius = compute_radius(model, inputs, labels, config.radius_convention)

    optimizer = ScheduledAdam(model, config.schedule)
    batch_gen = derive_torch_generator(seed, "client", round_index, client_id, "batches")
    proto_gen = derive_torch_generator(seed, "client", round_index, client_id, "protos")
    use_lp = config.lambda_p > 0 and bool(bank.classes - active_classes)
    use_lr = config.repr_loss and config.lambda_r > 0
    R = config.num_rotations

    for _ in range(config.local_epochs):
        for batch in minibatch_indices(len(labels), config.batch_size, batch_gen):
            x, y = inputs[batch], labels[batch]
            # rotated copies widen the batch; y indexes the R-wide head
            if config.label_augment:
                x_aug, y_aug = label_augment(x, y)
            else:
                x_aug, y_aug = x, y
            features = encode(model, x_aug)
            loss_ce = cross_entropy(classify(model, features), y_aug)
            loss = loss_ce
            loss_p = loss_r = None
            if use_lp:
                loss_p = proto_loss(model, bank, active_classes, len(batch), proto_gen, R)
                loss = loss + config.lambda_p * loss_p
            if use_lr:
                old = augment_old_prototypes(bank, active_classes, proto_gen, config.repr_include_active_protos)
                # unrotated rows only
                loss_r = repr_loss(
                    features[: len(batch)], y, old, active_classes, config.negatives, config.repr_normalizer
                )
                loss = loss + config.lambda_r * loss_r

            try:
                check_finite("loss", loss)
                grads = backward(model, loss)
            except NumericError as e:
                raise ClientRoundError(str(e), client_id, round_index, e.tensor_name) from e
            adam_step(model, grads, optimizer, round_index)

            result.losses["ce"].append(float(loss_ce.detach()))
            result.losses["lp"].append(float(loss_p.detach()) if loss_p is not None else 0.0)
            result.losses["lr"].append(float(loss_r.detach()) if loss_r is not None else 0.0)

    result.state = parameter_state(model)
    logger.debug(
        "client %d round %d: %d samples, %d steps, ce %.4f",
        client_id, round_index, result.num_samples, optimizer.step_count, result.mean_loss("ce"),
    )
    return result
