"""Parameter checkpoints: model spec plus named float tensors."""

import logging
import pickle
from pathlib import Path
from typing import Any

import torch

from fedspace.core.errors import SchemaError
from fedspace.nn.models import FedModel, ModelSpec

logger = logging.getLogger(__name__)

PARAMS_FORMAT_VERSION = 1
PARAMS_KIND = "fedspace-params"


def read_versioned(path: Path, kind: str, version: int) -> dict[str, Any]:
    """Load a torch-serialized dict and check its ``kind``/``version`` header.

    Raises:
        SchemaError: If the file is unreadable or the header does not match
    """
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=True)
    except (pickle.UnpicklingError, RuntimeError, EOFError, ValueError) as e:
        raise SchemaError(f"Corrupt checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("kind") != kind:
        raise SchemaError(f"{path} is not a {kind} file")
    if payload.get("version") != version:
        raise SchemaError(
            f"Unsupported {kind} version {payload.get('version')!r} (expected {version})"
        )
    return payload


def save_params(model: FedModel, path: Path) -> None:
    """Write θ and the architecture needed to rebuild it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "kind": PARAMS_KIND,
            "version": PARAMS_FORMAT_VERSION,
            "spec": model.spec.to_dict(),
            "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        },
        path,
    )
    logger.debug("Saved parameters to %s", path)


def load_params(path: Path) -> FedModel:
    """Rebuild a model from :func:`save_params` output.

    Raises:
        SchemaError: On version mismatch or corrupt file
    """
    payload = read_versioned(path, PARAMS_KIND, PARAMS_FORMAT_VERSION)
    return model_from_payload(payload["spec"], payload["state_dict"])


def model_from_payload(spec: dict[str, Any], state_dict: dict[str, torch.Tensor]) -> FedModel:
    """Instantiate a model and load a state dict into it.

    Raises:
        SchemaError: If the spec is malformed or the state dict does not fit it
    """
    try:
        model_spec = ModelSpec.from_dict(spec)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"checkpoint has a malformed model spec: {e}") from e
    model = FedModel(model_spec)
    try:
        model.load_state_dict(state_dict)
    except RuntimeError as e:
        raise SchemaError(f"checkpoint tensors do not match architecture: {e}") from e
    return model
