"""Server-side state: client sampling, model blending and prototype aggregation."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import torch

from fedspace.core.errors import ConfigError, DimensionError, SchemaError
from fedspace.core.rng import derive_rng
from fedspace.federated.client import Prototype, PrototypeBank, RadiusStat
from fedspace.nn.checkpoint import load_params, model_from_payload, read_versioned
from fedspace.nn.models import FedModel, StateDict

logger = logging.getLogger(__name__)

SERVER_KIND = "fedspace-server"
SERVER_FORMAT_VERSION = 1

ModelWeighting = Literal["selected", "prefix"]


@dataclass
class GlobalPrototypeStore:
    """Global prototypes e_c, their last update round, and the global radius.

    Attributes:
        entries: class -> (prototype vector, round of last update)
        radius: Global radius r
    """

    entries: dict[int, tuple[torch.Tensor, int]] = field(default_factory=dict)
    radius: float = 0.0

    @property
    def discovered(self) -> frozenset[int]:
        """C^(t), the classes with a global prototype."""
        return frozenset(self.entries)

    def bank(self) -> PrototypeBank:
        """Read-only view handed to clients."""
        return PrototypeBank({c: v.clone() for c, (v, _) in self.entries.items()}, self.radius)


@dataclass
class ServerState:
    """Everything the server carries between rounds.

    Attributes:
        model: Global model θ^(t)
        store: Global prototype store
        round_index: Last completed round (0 before training)
        client_banks: Per-client prototypes, used when prototypes are not aggregated
    """

    model: FedModel
    store: GlobalPrototypeStore = field(default_factory=GlobalPrototypeStore)
    round_index: int = 0
    client_banks: dict[int, PrototypeBank] = field(default_factory=dict)


def sample_clients(n_clients: int, k: int, round_index: int, seed: int) -> list[int]:
    """K distinct client ids, uniform without replacement, from stream ``(seed, "select", round)``.

    Raises:
        ConfigError: If k is not in [1, n_clients]
    """
    if not 1 <= k <= n_clients:
        raise ConfigError(f"clients_per_round must be in [1, {n_clients}], got {k}")
    rng = derive_rng(seed, "select", round_index)
    return sorted(int(c) for c in rng.choice(n_clients, size=k, replace=False))


def _check_congruent(state: StateDict, reference: StateDict) -> None:
    if state.keys() != reference.keys():
        raise DimensionError("client parameters do not match the global parameter names")
    for name, tensor in state.items():
        if tensor.shape != reference[name].shape:
            raise DimensionError(f"shape mismatch for {name}: {tuple(tensor.shape)} vs {tuple(reference[name].shape)}")


def aggregate_models(
    updates: list[tuple[StateDict, int]],
    prev: StateDict,
    rho: float,
    weighting: ModelWeighting = "selected",
) -> StateDict:
    """θ^(t) = ρ·Σ_k w_k θ_k + (1 - ρ)·θ^(t-1).

    ``selected`` weights are ``n_k / Σ n_i`` over the round's clients and the
    update is evaluated as ``θ^(t-1) + ρ·Σ_k w_k (θ_k - θ^(t-1))``, so clients
    that return θ^(t-1) leave it bit-identical. ``prefix`` uses the running
    denominator ``Σ_{i<=k} n_i``.

    Raises:
        DimensionError: If any client state is not shape-congruent with ``prev``
    """
    for state, _ in updates:
        _check_congruent(state, prev)
    counts = [n for _, n in updates]
    # every selected client was idle this round
    if not updates or sum(counts) == 0:
        return {k: v.clone() for k, v in prev.items()}

    if weighting == "selected":
        total = float(sum(counts))
        weights = [n / total for n in counts]
    else:
        running = 0
        weights = []
        # weight of client k against everything folded in before it
        for n in counts:
            running += n
            weights.append(n / running)

    out: StateDict = {}
    for name, base in prev.items():
        if weighting == "selected":
            # accumulate deltas, not parameters: zero deltas leave base exact
            delta = torch.zeros_like(base)
            for (state, _), w in zip(updates, weights):
                delta = delta + w * (state[name] - base)
            out[name] = base + rho * delta
        else:
            mixed = torch.zeros_like(base)
            for (state, _), w in zip(updates, weights):
                mixed = mixed + w * state[name]
            out[name] = base + rho * (mixed - base)
    return out


def aggregate_prototypes(
    store: GlobalPrototypeStore,
    prototypes: list[Prototype],
    radii: list[RadiusStat],
    beta: float,
    round_index: int,
) -> GlobalPrototypeStore:
    """Fold a round's client prototypes and radii into a new store.

    For each reported class the count-weighted mean v_c is taken over the
    reporting clients. A new class stores v_c; a known class moves to
    ``β·v_c + (1 - β)·e_c``. The radius is the count-weighted mean of the
    client radii, blended the same way once the store holds any class.
    """
    by_class: dict[int, list[Prototype]] = {}
    for proto in prototypes:
        by_class.setdefault(proto.class_id, []).append(proto)

    entries = dict(store.entries)
    for c in sorted(by_class):
        reports = by_class[c]
        total = float(sum(p.support_count for p in reports))
        v = sum((p.support_count / total) * p.vector for p in reports)
        # known class: moving average toward this round's mean
        if c in entries:
            v = beta * v + (1.0 - beta) * entries[c][0]
        entries[c] = (v.detach().clone(), round_index)

    # idle rounds keep the old radius
    radius = store.radius
    support = sum(r.support_count for r in radii)
    if support > 0:
        v_r = sum((r.support_count / support) * r.radius for r in radii)
        radius = beta * v_r + (1.0 - beta) * store.radius if store.entries else v_r
    return GlobalPrototypeStore(entries, float(radius))


def local_bank(bank: PrototypeBank | None, prototypes: list[Prototype], radius: RadiusStat | None) -> PrototypeBank:
    """A client's own bank after a round: reported classes replace their entries."""
    merged = dict(bank.prototypes) if bank is not None else {}
    for proto in prototypes:
        merged[proto.class_id] = proto.vector.detach().clone()
    # no radius report: keep what the bank had
    r = radius.radius if radius is not None else (bank.radius if bank is not None else 0.0)
    return PrototypeBank(merged, r)


def discovered_classes(store: GlobalPrototypeStore) -> frozenset[int]:
    """C^(t)."""
    return store.discovered


def _bank_payload(classes: list[int], vectors: list[torch.Tensor], radius: float) -> dict:
    return {
        "classes": classes,
        "vectors": torch.stack(vectors) if vectors else torch.zeros(0),
        "radius": float(radius),
    }


def save_server_checkpoint(state: ServerState, path: Path) -> None:
    """Write θ, the prototype store, per-client banks and the round counter."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    classes = sorted(state.store.entries)
    store = _bank_payload(classes, [state.store.entries[c][0] for c in classes], state.store.radius)
    store["updated"] = [state.store.entries[c][1] for c in classes]
    banks = {}
    for cid, bank in state.client_banks.items():
        bank_classes = sorted(bank.prototypes)
        banks[str(cid)] = _bank_payload(bank_classes, [bank.prototypes[c] for c in bank_classes], bank.radius)
    torch.save(
        {
            "kind": SERVER_KIND,
            "version": SERVER_FORMAT_VERSION,
            "round": state.round_index,
            "spec": state.model.spec.to_dict(),
            "state_dict": {k: v.detach().clone() for k, v in state.model.state_dict().items()},
            "store": store,
            "client_banks": banks,
        },
        path,
    )
    logger.debug("Saved server checkpoint for round %d to %s", state.round_index, path)


def load_server_checkpoint(path: Path) -> ServerState:
    """Inverse of :func:`save_server_checkpoint`.

    Raises:
        SchemaError: On a wrong kind/version or missing fields
    """
    payload = read_versioned(path, SERVER_KIND, SERVER_FORMAT_VERSION)
    try:
        model = model_from_payload(payload["spec"], payload["state_dict"])
        store_data = payload["store"]
        entries = {
            int(c): (store_data["vectors"][i].clone(), int(store_data["updated"][i]))
            for i, c in enumerate(store_data["classes"])
        }
        banks = {
            int(cid): PrototypeBank(
                {int(c): data["vectors"][i].clone() for i, c in enumerate(data["classes"])},
                float(data["radius"]),
            )
            for cid, data in payload["client_banks"].items()
        }
        return ServerState(
            model, GlobalPrototypeStore(entries, float(store_data["radius"])), int(payload["round"]), banks
        )
    except (KeyError, IndexError, TypeError) as e:
        raise SchemaError(f"Incomplete server checkpoint {path}: {e}") from e


def load_any_model(path: Path) -> FedModel:
    """Model from a server checkpoint or a bare parameter checkpoint.

    Raises:
        SchemaError: If the file is neither
    """
    try:
        return load_server_checkpoint(path).model
    except SchemaError:
        return load_params(path)
