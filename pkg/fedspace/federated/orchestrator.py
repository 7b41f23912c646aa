"""Round loop: selection, local training, aggregation and evaluation."""

import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from fedspace.core.config import SimConfig, resolve_workers, save_sim_config
from fedspace.core.errors import ConfigError
from fedspace.core.system_detector import detect_system
from fedspace.data.datasets import LabeledDataset, load_dataset
from fedspace.data.splitgen import (
    FederatedSplit,
    active_task,
    generate_split,
    load_split,
    save_split,
    validate_split,
)
from fedspace.federated.client import ClientRoundResult, LocalTrainConfig, PrototypeBank, local_train
from fedspace.federated.metrics import RoundLog, emit_metrics
from fedspace.federated.server import (
    ServerState,
    aggregate_models,
    aggregate_prototypes,
    local_bank,
    sample_clients,
    save_server_checkpoint,
)
from fedspace.fractal.dataset import build_pretrain_dataset
from fedspace.fractal.pretrain import pretrain, slice_head
from fedspace.nn.augment import NUM_ROTATIONS
from fedspace.nn.batching import as_tensor
from fedspace.nn.checkpoint import load_params
from fedspace.nn.models import FedModel, ModelSpec, build_model, clone_model, parameter_state, predict
from fedspace.nn.optim import LRSchedule

logger = logging.getLogger(__name__)


@dataclass
class SimulationResult:
    """Outcome of :func:`run_simulation`.

    Attributes:
        logs: One RoundLog per round run
        state: Final server state
        tasks: Class blocks used for per-task evaluation
    """

    logs: list[RoundLog]
    state: ServerState
    tasks: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def accuracy_curve(self) -> list[float]:
        """Accuracy of every evaluation, in round order."""
        return [log.acc for log in self.logs if log.acc is not None]


def use_label_augment(config: SimConfig, train: LabeledDataset) -> bool:
    """Resolve ``label_augment``: auto means on for images, off for vectors.

    Raises:
        ConfigError: If forced on for vector data
    """
    if config.label_augment == "auto":
        return train.is_image
    if config.label_augment == "on" and not train.is_image:
        raise ConfigError("label_augment=on needs square image data")
    return config.label_augment == "on"


def local_config_from(config: SimConfig, label_augment: bool) -> LocalTrainConfig:
    """Client hyperparameters of a run."""
    return LocalTrainConfig(
        lambda_p=config.lambda_p,
        lambda_r=config.lambda_r,
        batch_size=config.batch_size,
        local_epochs=config.local_epochs,
        schedule=LRSchedule(config.base_lr, config.lr_halving_period),
        label_augment=label_augment,
        repr_loss=config.flags.repr_loss,
        radius_convention=config.radius_convention,  # type: ignore[arg-type]
        negatives=config.negatives,  # type: ignore[arg-type]
        repr_normalizer=config.repr_normalizer,  # type: ignore[arg-type]
        repr_include_active_protos=config.repr_include_active_protos,
    )


def model_spec_for(config: SimConfig, train: LabeledDataset, num_rotations: int) -> ModelSpec:
    """Architecture for the run's data; ``auto`` picks conv for images."""
    encoder = config.model.encoder
    if encoder == "auto":
        encoder = "conv" if train.is_image else "mlp"
    if encoder == "conv" and not train.is_image:
        raise ConfigError("conv encoder needs image data")
    channels = tuple(config.model.conv_channels)
    if len(channels) != 3:
        raise ConfigError(f"model.conv_channels needs three entries, got {list(channels)}")
    return ModelSpec(
        encoder=encoder,  # type: ignore[arg-type]
        input_shape=train.input_shape,
        feature_dim=config.model.feature_dim,
        num_outputs=train.num_classes * num_rotations,
        hidden_dims=tuple(config.model.hidden_dims),
        conv_channels=channels,  # type: ignore[arg-type]
        dtype=config.model.dtype,
        num_rotations=num_rotations,
    )


def _pretrain_view(config: SimConfig, spec: ModelSpec) -> tuple[int, int, bool]:
    """(render size, pooled side, flatten) for fractal data matching the model input."""
    if len(spec.input_shape) == 3:
        return config.pretrain.image_size, spec.input_shape[-1], False
    d_in = int(np.prod(spec.input_shape))
    side = math.isqrt(d_in)
    if side * side != d_in:
        raise ConfigError(f"fractal pre-training on vectors needs a square input dimension, got {d_in}")
    return max(16, side), side, True


def initial_model(config: SimConfig, train: LabeledDataset, num_rotations: int) -> FedModel:
    """θ^(0): pre-trained and head-sliced when the pretrain flag is on, else seeded init."""
    spec = model_spec_for(config, train, num_rotations)
    if not config.flags.pretrain:
        return build_model(spec, config.seed)

    if config.theta0_path:
        pretrained = load_params(Path(config.theta0_path))
        if pretrained.spec.input_shape != spec.input_shape or pretrained.feature_dim != spec.feature_dim:
            raise ConfigError(f"{config.theta0_path} does not match the run's input shape or feature_dim")
        if pretrained.spec.num_rotations != num_rotations:
            flag = "--rotations" if num_rotations > 1 else "--no-rotations"
            raise ConfigError(
                f"{config.theta0_path} has a head with {pretrained.spec.num_rotations} rotation(s) per class "
                f"but this run uses {num_rotations}; re-run pretrain with {flag}"
            )
    else:
        size, side, flatten = _pretrain_view(config, spec)
        fractals = build_pretrain_dataset(
            config.pretrain.num_classes,
            config.pretrain.images_per_class,
            size,
            config.seed,
            iterations=config.pretrain.iterations,
        )
        channels = spec.input_shape[0] if len(spec.input_shape) == 3 else 1
        data = fractals.to_labeled(channels=channels, side=side, flatten=flatten)
        wide = build_model(replace(spec, num_outputs=fractals.num_classes * num_rotations), config.seed)
        pretrained = pretrain(
            wide,
            data,
            epochs=config.pretrain.epochs,
            batch_size=config.pretrain.batch_size,
            lr=config.pretrain.lr,
            seed=config.seed,
            rotations=num_rotations > 1,
        ).model
    return slice_head(pretrained, train.num_classes, num_rotations)


def split_tasks(split: FederatedSplit) -> list[tuple[int, ...]]:
    """Distinct class blocks across all client streams, sorted."""
    return sorted({tuple(sorted(t)) for client in split.clients for t in client.stream.tasks})


def evaluate(model: FedModel, test: LabeledDataset, num_rotations: int = 1) -> float:
    """Top-1 accuracy over all classes (rotation-0 logits for augmented heads).

    Raises:
        ValueError: If the test set is empty
    """
    if len(test) == 0:
        raise ValueError("test set is empty")
    dtype = next(model.parameters()).dtype
    preds = predict(model, as_tensor(test.samples, dtype), num_rotations)
    return float((preds == torch.as_tensor(test.labels)).double().mean())


def evaluate_per_task(
    model: FedModel, test: LabeledDataset, tasks: list[tuple[int, ...]], num_rotations: int = 1
) -> dict[int, float]:
    """Top-1 accuracy on each task's test samples, predicting over all classes.

    Tasks without test samples are omitted.
    """
    dtype = next(model.parameters()).dtype
    preds = predict(model, as_tensor(test.samples, dtype), num_rotations).numpy()
    out: dict[int, float] = {}
    for i, task in enumerate(tasks):
        mask = np.isin(test.labels, task)
        if mask.any():
            out[i] = float((preds[mask] == test.labels[mask]).mean())
    return out


def run_round(
    state: ServerState,
    split: FederatedSplit,
    train: LabeledDataset,
    round_index: int,
    config: SimConfig,
    local_config: LocalTrainConfig,
    executor: Executor | None = None,
) -> tuple[ServerState, RoundLog]:
    """One communication round; returns the new state and the round's log.

    A failing client aborts the round before any aggregation.
    """
    start = time.perf_counter()
    selected = sample_clients(split.num_clients, config.clients_per_round, round_index, config.seed)
    # one snapshot shared by every client of the round
    global_bank = state.store.bank() if config.flags.proto_aggr else None

    jobs = []
    stages = []
    for cid in selected:
        client = split.clients[cid]
        task = active_task(client.stream, round_index)
        stages.append(client.stream.stage_index(round_index))
        # without aggregation each client sees only its own history
        bank = global_bank if global_bank is not None else state.client_banks.get(cid, PrototypeBank())
        stage = train.subset(client.stage_indices(task))
        jobs.append((state.model, bank, stage, task, round_index, local_config, config.seed, cid))

    # results keep the order of `selected` either way
    if executor is None:
        results: list[ClientRoundResult] = [local_train(*job) for job in jobs]
    else:
        results = list(executor.map(lambda job: local_train(*job), jobs))

    trained = [r for r in results if r.num_samples > 0]
    # server_aggr off means plain FedAvg, not a separate path
    rho = config.rho if config.flags.server_aggr else 1.0
    new_params = aggregate_models(
        [(r.state, r.num_samples) for r in trained],
        parameter_state(state.model),
        rho,
        config.model_weighting,  # type: ignore[arg-type]
    )
    model = clone_model(state.model)
    model.load_state_dict(new_params)

    store = state.store
    banks = dict(state.client_banks)
    if config.flags.proto_aggr:
        store = aggregate_prototypes(
            store,
            [p for r in trained for p in r.prototypes],
            [r.radius for r in trained if r.radius is not None],
            config.beta,
            round_index,
        )
    else:
        for r in trained:
            banks[r.client_id] = local_bank(banks.get(r.client_id), r.prototypes, r.radius)

    def mean_of(term: str) -> float:
        return float(np.mean([r.mean_loss(term) for r in trained])) if trained else 0.0

    log = RoundLog(
        round_index=round_index,
        clients=selected,
        tasks=stages,
        samples=[r.num_samples for r in results],
        ce=mean_of("ce"),
        lp=mean_of("lp"),
        lr=mean_of("lr"),
        wall_time=time.perf_counter() - start,
    )
    return ServerState(model, store, round_index, banks), log


def prepare_split(config: SimConfig, train: LabeledDataset) -> FederatedSplit:
    """Load ``config.split_path`` or generate a split from ``config.split``.

    Raises:
        ConfigError: If the split does not cover the run
        SchemaError: If the split file is invalid for the dataset
    """
    if config.split_path:
        split = load_split(Path(config.split_path))
    else:
        s = config.split
        split = generate_split(
            train,
            s.num_clients,
            s.num_tasks,
            s.classes_per_task,
            config.total_rounds,
            config.seed,
            alpha=s.alpha,
            exponent=s.exponent,
            min_size=s.min_size,
            min_stage_len=s.min_stage_len,
            fraction=s.fraction,
            shuffle_classes=s.shuffle_classes,
        )
    validate_split(split, len(train))
    if split.num_classes != train.num_classes:
        raise ConfigError(f"split covers {split.num_classes} classes, dataset has {train.num_classes}")
    if split.total_rounds < config.total_rounds:
        raise ConfigError(f"split ends at round {split.total_rounds}, run needs {config.total_rounds}")
    if config.clients_per_round > split.num_clients:
        raise ConfigError(f"clients_per_round {config.clients_per_round} > {split.num_clients} clients")
    return split


def run_simulation(
    config: SimConfig,
    data: tuple[LabeledDataset, LabeledDataset] | None = None,
    split: FederatedSplit | None = None,
    resume: ServerState | None = None,
    output_dir: Path | None = None,
    on_round: Callable[[RoundLog], None] | None = None,
) -> SimulationResult:
    """Run rounds ``resume.round_index + 1 .. T`` (from round 1 without ``resume``).

    Evaluation happens every ``eval_period`` rounds and at round T. With
    ``output_dir`` the metrics, the final server checkpoint, the split and the
    resolved config are written there.

    Raises:
        ConfigError: If resuming without the split the checkpoint was trained on
    """
    if resume is not None and split is None and not config.split_path:
        raise ConfigError("resuming needs the original split: pass it or set split_path")
    train, test = data if data is not None else load_dataset(config.dataset)
    if split is None and config.total_rounds > 0:
        split = prepare_split(config, train)
    augment = use_label_augment(config, train)
    num_rotations = NUM_ROTATIONS if augment else 1
    local_config = local_config_from(config, augment)
    tasks = split_tasks(split) if split is not None else []

    state = resume if resume is not None else ServerState(initial_model(config, train, num_rotations))
    workers = resolve_workers(config, detect_system().cpu_count)
    logger.info(
        "Running %s: rounds %d..%d, %d clients (K=%d), %d worker(s)",
        config.method, state.round_index + 1, config.total_rounds, split.num_clients if split else 0,
        config.clients_per_round, workers,
    )

    logs: list[RoundLog] = []
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for t in range(state.round_index + 1, config.total_rounds + 1):
            assert split is not None
            state, log = run_round(state, split, train, t, config, local_config, executor)
            if t % config.eval_period == 0 or t == config.total_rounds:
                log.acc = evaluate(state.model, test, num_rotations)
                log.task_acc = evaluate_per_task(state.model, test, tasks, num_rotations)
                logger.info("round %d: acc %.4f ce %.4f lp %.4f lr %.4f", t, log.acc, log.ce, log.lp, log.lr)
            else:
                logger.debug("round %d: ce %.4f lp %.4f lr %.4f", t, log.ce, log.lp, log.lr)
            logs.append(log)
            if on_round is not None:
                on_round(log)
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    if output_dir is not None:
        output_dir = Path(output_dir)
        emit_metrics(logs, output_dir, asdict(config))
        save_server_checkpoint(state, output_dir / "checkpoint.pt")
        if split is not None:
            save_split(split, output_dir / "split.json")
        save_sim_config(config, output_dir / "config.yaml")
    return SimulationResult(logs, state, tasks)
