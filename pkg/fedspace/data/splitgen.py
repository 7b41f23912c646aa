"""Non-IID asynchronous federated split generation.

A split assigns every client a disjoint set of training samples (power-law
sized, Dirichlet class mix) and an independent task timeline: a permutation
of the shared class-block tasks with random stage boundaries.

Round indices are 1-based. A stage ``i`` covers the half-open interval
``(boundaries[i-1], boundaries[i]]`` with ``boundaries[-1] == total_rounds``.
"""

import json
import logging
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from fedspace.core.errors import (
    CapacityError,
    ConstraintViolationError,
    RoundRangeError,
    SchemaError,
)
from fedspace.data.datasets import LabeledDataset

logger = logging.getLogger(__name__)

SPLIT_FORMAT_VERSION = 1


@dataclass
class TaskStream:
    """One client's ordered tasks and stage boundaries.

    Attributes:
        tasks: Class-index tuples, one per stage, in stage order
        boundaries: Strictly increasing last-round-of-stage indices
    """

    tasks: list[tuple[int, ...]]
    boundaries: list[int]

    def __post_init__(self) -> None:
        if len(self.tasks) != len(self.boundaries):
            raise SchemaError("tasks and boundaries must have the same length")
        if not self.tasks:
            raise SchemaError("a task stream needs at least one stage")
        if any(b <= a for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise SchemaError(f"boundaries must be strictly increasing: {self.boundaries}")
        if self.boundaries[0] < 1:
            raise SchemaError("first boundary must be >= 1")
        if any(len(task) == 0 for task in self.tasks):
            raise SchemaError("tasks must be nonempty")

    @property
    def num_stages(self) -> int:
        """R_k, the number of stages."""
        return len(self.tasks)

    @property
    def total_rounds(self) -> int:
        """Last round covered by the stream."""
        return self.boundaries[-1]

    def stage_index(self, round_index: int) -> int:
        """Zero-based stage containing ``round_index``.

        Raises:
            RoundRangeError: If the round is outside [1, total_rounds]
        """
        if not 1 <= round_index <= self.total_rounds:
            raise RoundRangeError(f"round {round_index} outside [1, {self.total_rounds}]")
        return bisect_left(self.boundaries, round_index)


@dataclass
class ClientSplit:
    """Samples and task stream of one client.

    Attributes:
        client_id: Client index
        sample_indices: class -> sorted train-set indices owned by the client
        stream: The client's task timeline
    """

    client_id: int
    sample_indices: dict[int, list[int]]
    stream: TaskStream

    @property
    def num_samples(self) -> int:
        """Total samples owned by the client."""
        return sum(len(v) for v in self.sample_indices.values())

    def stage_indices(self, classes: tuple[int, ...] | frozenset[int]) -> list[int]:
        """Indices of the client's samples whose class is in ``classes``, sorted."""
        out: list[int] = []
        for c in sorted(classes):
            out.extend(self.sample_indices.get(c, []))
        return sorted(out)


@dataclass
class FederatedSplit:
    """A full federated split.

    Attributes:
        clients: One ClientSplit per client
        num_tasks: Number of class-block tasks
        classes_per_task: Classes per task
        dirichlet_alpha: Symmetric Dirichlet concentration
        powerlaw_exponent: Client-size power-law exponent
        seed: Generation seed
        total_rounds: T
        extra: Additional generation settings echoed into the file
    """

    clients: list[ClientSplit]
    num_tasks: int
    classes_per_task: int
    dirichlet_alpha: float
    powerlaw_exponent: float
    seed: int
    total_rounds: int
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def num_clients(self) -> int:
        """N."""
        return len(self.clients)

    @property
    def num_classes(self) -> int:
        """|C| = num_tasks * classes_per_task."""
        return self.num_tasks * self.classes_per_task


def largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer apportionment of ``total`` proportionally to ``weights``.

    Floors the exact quotas, then hands the leftover units to the largest
    fractional parts (ties to the lower index). The result sums to ``total``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if total == 0 or w.sum() <= 0:
        out = np.zeros(len(w), dtype=np.int64)
        if total:
            out[: total % max(len(w), 1)] += 1
            out += total // max(len(w), 1)
        return out
    quotas = w / w.sum() * total
    base = np.floor(quotas).astype(np.int64)
    leftover = int(total - base.sum())
    if leftover > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:leftover]] += 1
    return base


def sample_client_sizes(
    n_clients: int,
    total_samples: int,
    exponent: float,
    min_size: int,
    rng: np.random.Generator,
) -> list[int]:
    """Power-law client sizes.

    Each client gets ``min_size`` samples, and the remainder is split by
    weights ``rank ** -exponent`` with largest-remainder rounding. Ranks are
    assigned to clients by a random permutation.

    Raises:
        ConstraintViolationError: If ``n_clients * min_size > total_samples``
    """
    if n_clients < 1:
        raise ConstraintViolationError("n_clients must be >= 1")
    if min_size < 0 or n_clients * min_size > total_samples:
        raise ConstraintViolationError(
            f"cannot give {n_clients} clients at least {min_size} samples out of {total_samples}"
        )
    ranks = np.arange(1, n_clients + 1, dtype=np.float64)
    weights = ranks ** (-float(exponent))
    by_rank = largest_remainder(weights, total_samples - n_clients * min_size) + min_size
    rank_of_client = rng.permutation(n_clients)
    return [int(by_rank[r]) for r in rank_of_client]


def _allocate_class_counts(
    proportions: np.ndarray, size: int, available: np.ndarray
) -> np.ndarray:
    """Split ``size`` across classes by ``proportions`` without exceeding ``available``.

    Deficits from exhausted classes are redistributed to classes that still
    have room, proportionally to their proportions.
    """
    counts = np.zeros(len(proportions), dtype=np.int64)
    remaining = size
    open_mask = available > 0
    while remaining > 0:
        weights = np.where(open_mask, proportions, 0.0)
        if weights.sum() <= 0:
            weights = np.where(open_mask, (available - counts).astype(np.float64), 0.0)
        want = largest_remainder(weights, remaining)
        room = available - counts
        take = np.minimum(want, room)
        counts += take
        remaining -= int(take.sum())
        open_mask = (available - counts) > 0
    return counts


def dirichlet_partition(
    dataset: LabeledDataset,
    sizes: list[int],
    alpha: float,
    rng: np.random.Generator,
) -> list[dict[int, list[int]]]:
    """Assign disjoint per-class sample sets to clients.

    For each client a class-proportion vector is drawn from a symmetric
    Dirichlet(alpha); the client's size is split by those proportions and
    filled from shuffled per-class pools.

    Returns:
        Per client, a mapping class -> sorted indices (classes with zero
        samples are omitted)

    Raises:
        CapacityError: If ``sum(sizes)`` exceeds the dataset size
    """
    if alpha <= 0:
        raise ConstraintViolationError(f"alpha must be positive, got {alpha}")
    if sum(sizes) > len(dataset):
        raise CapacityError(f"requested {sum(sizes)} samples from a dataset of {len(dataset)}")

    pools = [rng.permutation(idx) for idx in dataset.class_indices()]
    cursor = np.zeros(dataset.num_classes, dtype=np.int64)
    pool_sizes = np.array([len(p) for p in pools], dtype=np.int64)

    assignments: list[dict[int, list[int]]] = []
    for size in sizes:
        proportions = rng.dirichlet(np.full(dataset.num_classes, float(alpha)))
        counts = _allocate_class_counts(proportions, int(size), pool_sizes - cursor)
        owned: dict[int, list[int]] = {}
        for c in np.flatnonzero(counts):
            start, stop = int(cursor[c]), int(cursor[c] + counts[c])
            owned[int(c)] = sorted(int(i) for i in pools[c][start:stop])
            cursor[c] = stop
        assignments.append(owned)
    return assignments


def partition_classes(
    num_tasks: int,
    classes_per_task: int,
    rng: np.random.Generator | None = None,
) -> list[tuple[int, ...]]:
    """Global class-to-task partition.

    Contiguous blocks ``[0..k-1], [k..2k-1], ...``; when ``rng`` is given the
    class order is shuffled before blocking.
    """
    classes = np.arange(num_tasks * classes_per_task)
    if rng is not None:
        classes = rng.permutation(classes)
    return [
        tuple(sorted(int(c) for c in classes[i * classes_per_task : (i + 1) * classes_per_task]))
        for i in range(num_tasks)
    ]


def _random_stage_lengths(
    num_stages: int, total_rounds: int, min_stage_len: int, rng: np.random.Generator
) -> np.ndarray:
    slack = total_rounds - num_stages * min_stage_len
    if num_stages == 1:
        return np.array([total_rounds], dtype=np.int64)
    # stars and bars: uniform over compositions of the slack into num_stages parts
    cuts = np.sort(rng.choice(slack + num_stages - 1, size=num_stages - 1, replace=False))
    edges = np.concatenate(([-1], cuts, [slack + num_stages - 1]))
    extra = np.diff(edges) - 1
    return extra.astype(np.int64) + min_stage_len


def build_task_streams(
    n_clients: int,
    num_tasks: int,
    classes_per_task: int,
    total_rounds: int,
    min_stage_len: int,
    rng: np.random.Generator,
    shuffle_classes: bool = False,
) -> list[TaskStream]:
    """Independent asynchronous task streams over a shared task partition.

    Raises:
        ConstraintViolationError: If the stages cannot all be ``min_stage_len`` long
    """
    if min_stage_len < 1 or total_rounds < num_tasks * min_stage_len:
        raise ConstraintViolationError(
            f"{num_tasks} stages of >= {min_stage_len} rounds do not fit in {total_rounds} rounds"
        )
    tasks = partition_classes(num_tasks, classes_per_task, rng if shuffle_classes else None)
    streams = []
    for child in rng.spawn(n_clients):
        order = child.permutation(num_tasks)
        lengths = _random_stage_lengths(num_tasks, total_rounds, min_stage_len, child)
        streams.append(
            TaskStream(
                tasks=[tasks[i] for i in order],
                boundaries=[int(b) for b in np.cumsum(lengths)],
            )
        )
    return streams


def active_task(stream: TaskStream, round_index: int) -> frozenset[int]:
    """Classes the client trains on at ``round_index``.

    Raises:
        RoundRangeError: If the round is outside [1, total_rounds]
    """
    return frozenset(stream.tasks[stream.stage_index(round_index)])


def generate_split(
    dataset: LabeledDataset,
    n_clients: int,
    num_tasks: int,
    classes_per_task: int,
    total_rounds: int,
    seed: int,
    alpha: float = 3.0,
    exponent: float = 1.5,
    min_size: int = 64,
    min_stage_len: int = 10,
    fraction: float = 1.0,
    shuffle_classes: bool = False,
) -> FederatedSplit:
    """Build a complete split from one seed.

    Args:
        dataset: Training set to distribute
        n_clients: N
        num_tasks: Number of tasks
        classes_per_task: Classes per task
        total_rounds: T
        seed: Master seed; sizes, partition and streams use independent children
        alpha: Dirichlet concentration
        exponent: Power-law exponent for client sizes
        min_size: Minimum samples per client
        min_stage_len: Minimum rounds per stage
        fraction: Share of the training set assigned to clients (0, 1]
        shuffle_classes: Shuffle class order before forming task blocks

    Raises:
        ConstraintViolationError: If num_tasks * classes_per_task != |C| or
            any generation constraint fails
    """
    if num_tasks * classes_per_task != dataset.num_classes:
        raise ConstraintViolationError(
            f"{num_tasks} tasks x {classes_per_task} classes != {dataset.num_classes} classes"
        )
    if not 0.0 < fraction <= 1.0:
        raise ConstraintViolationError(f"fraction must be in (0, 1], got {fraction}")

    sizes_rng, partition_rng, stream_rng = np.random.default_rng(seed).spawn(3)
    total = int(np.floor(len(dataset) * fraction))
    sizes = sample_client_sizes(n_clients, total, exponent, min_size, sizes_rng)
    owned = dirichlet_partition(dataset, sizes, alpha, partition_rng)
    streams = build_task_streams(
        n_clients, num_tasks, classes_per_task, total_rounds, min_stage_len, stream_rng,
        shuffle_classes=shuffle_classes,
    )
    clients = [ClientSplit(k, owned[k], streams[k]) for k in range(n_clients)]
    logger.info(
        "Generated split: %d clients, %d samples, %d tasks x %d classes",
        n_clients, total, num_tasks, classes_per_task,
    )
    return FederatedSplit(
        clients=clients,
        num_tasks=num_tasks,
        classes_per_task=classes_per_task,
        dirichlet_alpha=float(alpha),
        powerlaw_exponent=float(exponent),
        seed=int(seed),
        total_rounds=int(total_rounds),
        extra={
            "min_size": int(min_size),
            "min_stage_len": int(min_stage_len),
            "fraction": float(fraction),
            "shuffle_classes": bool(shuffle_classes),
        },
    )


def save_split(split: FederatedSplit, path: Path) -> None:
    """Write a split as a versioned JSON document."""
    document = {
        "version": SPLIT_FORMAT_VERSION,
        "config": {
            "N": split.num_clients,
            "num_tasks": split.num_tasks,
            "classes_per_task": split.classes_per_task,
            "alpha": split.dirichlet_alpha,
            "exponent": split.powerlaw_exponent,
            "seed": split.seed,
            "total_rounds": split.total_rounds,
            **split.extra,
        },
        "clients": [
            {
                "id": c.client_id,
                "indices": {str(k): v for k, v in sorted(c.sample_indices.items())},
                "tasks": [list(t) for t in c.stream.tasks],
                "boundaries": c.stream.boundaries,
            }
            for c in split.clients
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, separators=(",", ":"))


_CORE_KEYS = ("N", "num_tasks", "classes_per_task", "alpha", "exponent", "seed", "total_rounds")


def load_split(path: Path) -> FederatedSplit:
    """Read a split written by :func:`save_split`.

    Raises:
        SchemaError: On version mismatch, missing fields or unparsable JSON
    """
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"Corrupt split file {path}: {e}") from e

    if not isinstance(document, dict) or document.get("version") != SPLIT_FORMAT_VERSION:
        found = document.get("version") if isinstance(document, dict) else None
        raise SchemaError(f"Unsupported split version {found!r} (expected {SPLIT_FORMAT_VERSION})")

    try:
        config = document["config"]
        clients = [
            ClientSplit(
                client_id=int(entry["id"]),
                sample_indices={int(k): [int(i) for i in v] for k, v in entry["indices"].items()},
                stream=TaskStream(
                    tasks=[tuple(int(c) for c in t) for t in entry["tasks"]],
                    boundaries=[int(b) for b in entry["boundaries"]],
                ),
            )
            for entry in document["clients"]
        ]
        split = FederatedSplit(
            clients=clients,
            num_tasks=int(config["num_tasks"]),
            classes_per_task=int(config["classes_per_task"]),
            dirichlet_alpha=float(config["alpha"]),
            powerlaw_exponent=float(config["exponent"]),
            seed=int(config["seed"]),
            total_rounds=int(config["total_rounds"]),
            extra={k: v for k, v in config.items() if k not in _CORE_KEYS},
        )
        declared = int(config["N"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Malformed split file {path}: {e}") from e

    if split.num_clients != declared:
        raise SchemaError(f"split declares N={declared} but lists {split.num_clients} clients")
    return split


def validate_split(split: FederatedSplit, dataset_size: int) -> None:
    """Check exclusivity, range, task coverage and boundary cover.

    Raises:
        SchemaError: Describing the first violated property
    """
    seen: set[int] = set()
    expected_tasks = sorted(partition_classes(split.num_tasks, split.classes_per_task))
    for client in split.clients:
        indices = [i for v in client.sample_indices.values() for i in v]
        if len(indices) != len(set(indices)):
            raise SchemaError(f"client {client.client_id} has duplicate indices")
        if any(i < 0 or i >= dataset_size for i in indices):
            raise SchemaError(f"client {client.client_id} has out-of-range indices")
        if seen.intersection(indices):
            raise SchemaError(f"client {client.client_id} shares samples with another client")
        seen.update(indices)
        stream_classes = {c for t in client.stream.tasks for c in t}
        if not set(client.sample_indices) <= stream_classes:
            raise SchemaError(f"client {client.client_id} owns classes outside its stream")
        if client.stream.total_rounds != split.total_rounds:
            raise SchemaError(f"client {client.client_id} stream does not end at round T")
        if not split.extra.get("shuffle_classes") and sorted(client.stream.tasks) != expected_tasks:
            raise SchemaError(f"client {client.client_id} does not see every task exactly once")
        if len(set(client.stream.tasks)) != split.num_tasks:
            raise SchemaError(f"client {client.client_id} repeats a task")
