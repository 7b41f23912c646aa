"""Encoder + linear classifier models.

A model's parameters θ = {ξ, ψ} are the ``encoder.*`` and ``classifier.*``
entries of its state dict. Aggregation, slicing and checkpointing all work on
that flat name -> tensor view.
"""

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Literal

import torch
from torch import nn

from fedspace.core.errors import ConfigError, DimensionError, NumericError
from fedspace.nn.augment import base_logits

logger = logging.getLogger(__name__)

EncoderKind = Literal["mlp", "conv"]

GradientSet = dict[str, torch.Tensor]
StateDict = dict[str, torch.Tensor]


@dataclass
class ModelSpec:
    """Architecture description, enough to rebuild a model from a checkpoint.

    Attributes:
        encoder: "mlp" for vector inputs, "conv" for square images
        input_shape: (d_in,) or (channels, H, W)
        feature_dim: d, width of the encoder output
        num_outputs: Classifier head width
        hidden_dims: MLP hidden widths (empty = one linear layer)
        conv_channels: Channels of the three conv blocks
        dtype: "float64" or "float32"
        num_rotations: Head units per class (4 when trained with rotation
            label augmentation, unit ``R*i + r`` for class i, rotation r)
    """

    encoder: EncoderKind = "mlp"
    input_shape: tuple[int, ...] = (16,)
    feature_dim: int = 32
    num_outputs: int = 20
    hidden_dims: tuple[int, ...] = (64,)
    conv_channels: tuple[int, int, int] = (16, 32, 64)
    dtype: str = "float64"
    num_rotations: int = 1

    def to_dict(self) -> dict[str, object]:
        """JSON/torch-serializable form."""
        data = asdict(self)
        data["input_shape"] = list(self.input_shape)
        data["hidden_dims"] = list(self.hidden_dims)
        data["conv_channels"] = list(self.conv_channels)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, object]) -> "ModelSpec":
        """Inverse of :meth:`to_dict`."""
        values = dict(data)
        for key in ("input_shape", "hidden_dims", "conv_channels"):
            if key in values:
                values[key] = tuple(values[key])  # type: ignore[arg-type]
        return cls(**values)  # type: ignore[arg-type]

    @property
    def torch_dtype(self) -> torch.dtype:
        """Parameter dtype."""
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"Invalid dtype: {self.dtype}. Must be one of: float64, float32")
        return torch.float64 if self.dtype == "float64" else torch.float32


class MLPEncoder(nn.Module):
    """Fully connected encoder; ReLU between layers, none after the last."""

    def __init__(self, input_dim: int, hidden_dims: tuple[int, ...], feature_dim: int) -> None:
        super().__init__()
        widths = [input_dim, *hidden_dims, feature_dim]
        layers: list[nn.Module] = []
        for i, (w_in, w_out) in enumerate(zip(widths, widths[1:])):
            layers.append(nn.Linear(w_in, w_out))
            if i < len(widths) - 2:
                layers.append(nn.ReLU())
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x.flatten(1))


class ConvEncoder(nn.Module):
    """Three conv-ReLU-maxpool blocks, global average pooling, linear projection."""

    def __init__(self, in_channels: int, channels: tuple[int, int, int], feature_dim: int) -> None:
        super().__init__()
        blocks: list[nn.Module] = []
        c_in = in_channels
        for c_out in channels:
            blocks += [nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2)]
            c_in = c_out
        self.features = nn.Sequential(*blocks)
        self.project = nn.Linear(c_in, feature_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        return self.project(h.mean(dim=(2, 3)))


class FedModel(nn.Module):
    """Encoder E followed by linear decoder D.

    Attributes:
        spec: Architecture description
        encoder: ξ
        classifier: ψ, a Linear(d, num_outputs)
    """

    def __init__(self, spec: ModelSpec) -> None:
        super().__init__()
        self.spec = spec
        if spec.encoder == "mlp":
            input_dim = 1
            for s in spec.input_shape:
                input_dim *= s
            self.encoder: nn.Module = MLPEncoder(input_dim, spec.hidden_dims, spec.feature_dim)
        elif spec.encoder == "conv":
            if len(spec.input_shape) != 3:
                raise ConfigError(f"conv encoder needs (ch, H, W) inputs, got {spec.input_shape}")
            self.encoder = ConvEncoder(spec.input_shape[0], spec.conv_channels, spec.feature_dim)
        else:
            raise ConfigError(f"Invalid encoder: {spec.encoder}. Must be one of: mlp, conv")
        self.classifier = nn.Linear(spec.feature_dim, spec.num_outputs)
        self.to(spec.torch_dtype)

    @property
    def feature_dim(self) -> int:
        """d."""
        return self.spec.feature_dim

    @property
    def num_outputs(self) -> int:
        """Classifier head width."""
        return self.classifier.out_features

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.encoder(x))


def build_model(spec: ModelSpec, seed: int) -> FedModel:
    """Freshly initialized model; initialization is a pure function of ``seed``."""
    devices: list[int] = []
    with torch.random.fork_rng(devices=devices):
        torch.manual_seed(seed)
        return FedModel(spec)


def clone_model(model: FedModel) -> FedModel:
    """Independent deep copy."""
    return copy.deepcopy(model)


def encode(model: FedModel, inputs: torch.Tensor) -> torch.Tensor:
    """Encoder features, shape (B, d).

    Raises:
        DimensionError: If a sample's shape does not match the model input
    """
    if tuple(inputs.shape[1:]) != tuple(model.spec.input_shape):
        raise DimensionError(
            f"input shape {tuple(inputs.shape[1:])} does not match model input {model.spec.input_shape}"
        )
    return model.encoder(inputs)


def classify(model: FedModel, features: torch.Tensor) -> torch.Tensor:
    """Logits ψ·f + bias, shape (B, num_outputs).

    Raises:
        DimensionError: If the feature width is not d
    """
    if features.shape[-1] != model.feature_dim:
        raise DimensionError(f"feature width {features.shape[-1]} != d = {model.feature_dim}")
    return model.classifier(features)


def backward(model: nn.Module, loss: torch.Tensor) -> GradientSet:
    """Reverse-mode gradients of a scalar loss w.r.t. every named parameter.

    Parameters the loss does not depend on get zero gradients.

    Raises:
        NumericError: If any gradient is non-finite (names the tensor)
    """
    names, params = zip(*model.named_parameters())
    if not loss.requires_grad:
        return {name: torch.zeros_like(p) for name, p in zip(names, params)}
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out: GradientSet = {}
    for name, param, grad in zip(names, params, grads):
        g = torch.zeros_like(param) if grad is None else grad
        check_finite(name, g)
        out[name] = g
    return out


def check_finite(name: str, value: torch.Tensor) -> None:
    """Raise NumericError naming ``name`` if ``value`` has NaN/inf entries."""
    if not torch.isfinite(value).all():
        raise NumericError(f"non-finite value in {name}", tensor_name=name)


def parameter_state(model: nn.Module) -> StateDict:
    """Detached copy of the model's state dict."""
    return {k: v.detach().clone() for k, v in model.state_dict().items()}



@torch.no_grad()
def predict(
    model: FedModel, inputs: torch.Tensor, num_rotations: int = 1, batch_size: int = 512
) -> torch.Tensor:
    """Argmax base-class prediction for every input.

    With rotation-augmented heads only the unrotated block (every
    ``num_rotations``-th logit) is considered.
    """
    preds = []
    for start in range(0, len(inputs), batch_size):
        logits = base_logits(model(inputs[start : start + batch_size]), num_rotations)
        preds.append(logits.argmax(dim=1))
    return torch.cat(preds) if preds else torch.zeros(0, dtype=torch.long)
