"""Network construction: conv backbones, the dense head, losses, checkpoints.

Models are a stack of 3x3 conv stages followed by one wide fully-connected
layer under a max-norm constraint, dropout, and a task-specific output
layer (softmax for classification, a ReLU saturating at 1 for regression).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from torch import nn

logger = logging.getLogger(__name__)

#: Conv widths of the standard 13-layer configuration, grouped by stage;
#: every stage ends in 2x2 max pooling.
VGG16_STAGES: tuple[tuple[int, ...], ...] = (
    (64, 64),
    (128, 128),
    (256, 256, 256),
    (512, 512, 512),
    (512, 512, 512),
)

#: Default widths for the desk-scale backbone (one conv per stage).
TINY_STAGES: tuple[int, ...] = (8, 16, 32, 64)

OUTPUT_ACTIVATIONS = ("softmax", "saturating-relu")

#: Loss kinds matched to task kinds.
LOSS_MAE = "mae"
LOSS_CROSS_ENTROPY = "cross-entropy"

#: Probability floor applied inside the cross-entropy loss.
CROSS_ENTROPY_EPS = 1e-7


class CheckpointError(RuntimeError):
    """Checkpoint missing, malformed, or incompatible with its recorded architecture."""


@dataclass(frozen=True)
class BackboneSpec:
    """Which conv stack to build and for what input size."""

    family: str = "tiny"  # "vgg16" | "tiny"
    input_size: int = 64
    stage_channels: tuple[int, ...] = TINY_STAGES  # tiny only

    def __post_init__(self) -> None:
        if self.family not in ("vgg16", "tiny"):
            raise ValueError(f"unknown backbone family {self.family!r}")
        if self.family == "tiny" and len(self.stage_channels) < 2:
            raise ValueError("tiny backbone needs at least 2 conv stages")
        stages = self.n_stages
        if self.input_size % (2**stages) != 0 or self.input_size < 2**stages:
            raise ValueError(
                f"input size {self.input_size} incompatible with {stages} pooling stages"
            )

    @property
    def n_stages(self) -> int:
        return len(VGG16_STAGES) if self.family == "vgg16" else len(self.stage_channels)

    @property
    def stage_widths(self) -> tuple[tuple[int, ...], ...]:
        if self.family == "vgg16":
            return VGG16_STAGES
        return tuple((c,) for c in self.stage_channels)

    @property
    def feature_dim(self) -> int:
        side = self.input_size // (2**self.n_stages)
        return self.stage_widths[-1][-1] * side * side


@dataclass(frozen=True)
class HeadSpec:
    """The dense head sitting on the flattened conv features."""

    output_units: int
    output_activation: str
    hidden_units: int = 2048
    dropout: float = 0.5
    max_norm: float = 2.0
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.output_units < 1:
            raise ValueError("need at least one output unit")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        if not self.max_norm > 0:
            raise ValueError("max-norm radius must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


class _SaturatingReLU(torch.autograd.Function):
    # clamp to [0, 1]; subgradient 0 at both kinks
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x.clamp(0.0, 1.0)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        mask = (x > 0) & (x < 1)
        return grad_out * mask.to(grad_out.dtype)


def saturating_relu(x):
    """Elementwise clamp to [0, 1]: zero below 0, identity inside, 1 above.

    Works on torch tensors (differentiable, zero gradient outside the open
    interval) and numpy arrays/scalars.
    """
    if torch.is_tensor(x):
        return _SaturatingReLU.apply(x)
    return np.clip(x, 0.0, 1.0)


def apply_max_norm(weights, gamma: float = 2.0):
    """Rescale per-unit incoming weight vectors onto the max-norm ball.

    Rows (one per output unit) with Euclidean norm above ``gamma`` are
    scaled back to exactly ``gamma``; shorter rows pass through. Returns a
    new tensor/array of the input's type.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if torch.is_tensor(weights):
        norms = weights.norm(dim=-1, keepdim=True)
        factor = torch.where(norms > gamma, gamma / norms.clamp_min(1e-12), torch.ones_like(norms))
        return weights * factor
    w = np.asarray(weights, dtype=np.float64)
    norms = np.linalg.norm(w, axis=-1, keepdims=True)
    factor = np.where(norms > gamma, gamma / np.maximum(norms, 1e-12), 1.0)
    return w * factor


def max_norm_(module: nn.Linear, gamma: float) -> None:
    """In-place max-norm projection of a linear layer's weight rows."""
    with torch.no_grad():
        module.weight.copy_(apply_max_norm(module.weight, gamma))


class ConvNet(nn.Module):
    """Conv backbone plus the constrained dense head.

    ``forward`` maps an image batch to per-task outputs: class
    probabilities (rows summing to 1) under softmax, values in [0, 1]
    under the saturating ReLU.
    """

    def __init__(self, backbone: BackboneSpec, head: HeadSpec):
        super().__init__()
        self.backbone_spec = backbone
        self.head_spec = head
        layers: list[nn.Module] = []
        c_in = 3
        for stage in backbone.stage_widths:
            for c_out in stage:
                layers.append(nn.Conv2d(c_in, c_out, kernel_size=3, padding=1))
                layers.append(nn.ReLU(inplace=True))
                c_in = c_out
            layers.append(nn.MaxPool2d(2))
        self.features = nn.Sequential(*layers)
        self.hidden = nn.Linear(backbone.feature_dim, head.hidden_units)
        self.dropout = nn.Dropout(head.dropout)
        self.output = nn.Linear(head.hidden_units, head.output_units)

    def head_forward(self, flat: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.hidden(flat))
        h = self.dropout(h)
        z = self.output(h)
        if self.head_spec.output_activation == "softmax":
            return torch.softmax(z, dim=-1)
        return saturating_relu(z)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.features(x)
        return self.head_forward(h.flatten(1))

    def conv_parameters(self) -> Iterable[nn.Parameter]:
        return self.features.parameters()

    def head_parameters(self) -> Iterable[nn.Parameter]:
        yield from self.hidden.parameters()
        yield from self.output.parameters()

    def enforce_max_norm(self) -> None:
        max_norm_(self.hidden, self.head_spec.max_norm)


def _init_weights(model: ConvNet) -> None:
    for m in model.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            nn.init.zeros_(m.bias)


def build_model(backbone: BackboneSpec, head: HeadSpec, seed: int = 0) -> ConvNet:
    """Construct and He-initialize a model, deterministically per seed."""
    torch.manual_seed(seed)
    model = ConvNet(backbone, head)
    _init_weights(model)
    return model


def parameter_count(backbone: BackboneSpec, head: HeadSpec) -> int:
    """Closed-form parameter count of :func:`build_model`'s output."""
    total = 0
    c_in = 3
    for stage in backbone.stage_widths:
        for c_out in stage:
            total += 3 * 3 * c_in * c_out + c_out
            c_in = c_out
    total += backbone.feature_dim * head.hidden_units + head.hidden_units
    total += head.hidden_units * head.output_units + head.output_units
    return total


def images_to_tensor(images: np.ndarray) -> torch.Tensor:
    """(N, H, W, 3) float arrays in [0, 1] to (N, 3, H, W) float32 tensors."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (N, H, W, 3) images, got {images.shape}")
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).float()


def mae_loss(predictions: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    if predictions.shape != targets.shape:
        raise ValueError(f"shape mismatch {tuple(predictions.shape)} vs {tuple(targets.shape)}")
    return (predictions - targets).abs().mean()


def cross_entropy_loss(probabilities: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean -log p[target] over the batch, with probabilities floored at 1e-7."""
    if probabilities.shape[0] != targets.shape[0]:
        raise ValueError("batch size mismatch")
    p = probabilities.clamp_min(CROSS_ENTROPY_EPS)
    picked = p.gather(1, targets.long().view(-1, 1)).squeeze(1)
    return -picked.log().mean()


def loss(kind: str, predictions, targets) -> torch.Tensor:
    """Dispatch on loss kind; both losses are non-negative scalars."""
    predictions = torch.as_tensor(predictions)
    targets = torch.as_tensor(targets)
    if kind == LOSS_MAE:
        return mae_loss(predictions, targets.to(predictions.dtype))
    if kind == LOSS_CROSS_ENTROPY:
        return cross_entropy_loss(predictions, targets)
    raise ValueError(f"unknown loss kind {kind!r}")


def extract_features(model: ConvNet, images, batch_size: int = 256) -> np.ndarray:
    """Flattened output of the last conv stage, in inference mode.

    Accepts (N, H, W, 3) arrays or (N, 3, H, W) tensors; returns an
    (N, feature_dim) float32 array. Dropout never applies (it sits in the
    head), so identical inputs give identical rows.
    """
    if isinstance(images, np.ndarray):
        x = images_to_tensor(images)
    else:
        x = images
    was_training = model.training
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            h = model.features(x[start : start + batch_size])
            chunks.append(h.flatten(1).numpy().copy())
    if was_training:
        model.train()
    return np.concatenate(chunks, axis=0)


#: Input transforms a checkpoint can declare. "unit-range" is the native
#: contract (PNG pixels in [0, 1], no mean subtraction); externally
#: supplied checkpoints may declare the standard channel normalization.
PREPROCESSINGS = ("unit-range", "imagenet-mean-std")

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


def apply_preprocessing(x: torch.Tensor, preprocessing: str) -> torch.Tensor:
    """Transform a (N, 3, H, W) unit-range batch per a checkpoint's declaration."""
    if preprocessing == "unit-range":
        return x
    if preprocessing == "imagenet-mean-std":
        mean = torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        return (x - mean) / std
    raise ValueError(f"unknown preprocessing {preprocessing!r}")


@dataclass(frozen=True)
class CheckpointMeta:
    backbone: BackboneSpec
    head: HeadSpec
    provenance: str  # "none" | "imagenet" | "magnitudes"
    seed: int
    preprocessing: str = "unit-range"


def save_checkpoint(
    model: ConvNet,
    directory: str | Path,
    provenance: str,
    seed: int,
    preprocessing: str = "unit-range",
) -> Path:
    """Write ``weights`` plus ``model.json`` into ``directory``."""
    if provenance not in ("none", "imagenet", "magnitudes"):
        raise ValueError(f"unknown provenance {provenance!r}")
    if preprocessing not in PREPROCESSINGS:
        raise ValueError(f"unknown preprocessing {preprocessing!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), directory / "weights")
    meta = {
        "backbone": asdict(model.backbone_spec),
        "head": asdict(model.head_spec),
        "provenance": provenance,
        "seed": seed,
        "preprocessing": preprocessing,
    }
    (directory / "model.json").write_text(json.dumps(meta, indent=2))
    return directory


def load_checkpoint(directory: str | Path) -> tuple[ConvNet, CheckpointMeta]:
    """Rebuild the model recorded in ``directory`` and load its weights.

    Fails loudly when files are missing or tensor shapes do not match the
    recorded specs (e.g. a foreign weight archive).
    """
    directory = Path(directory)
    meta_path = directory / "model.json"
    weights_path = directory / "weights"
    if not meta_path.is_file() or not weights_path.is_file():
        raise CheckpointError(f"{directory} is not a checkpoint (needs weights + model.json)")
    try:
        raw = json.loads(meta_path.read_text())
        backbone_d = dict(raw["backbone"])
        backbone_d["stage_channels"] = tuple(backbone_d.get("stage_channels", TINY_STAGES))
        meta = CheckpointMeta(
            backbone=BackboneSpec(**backbone_d),
            head=HeadSpec(**raw["head"]),
            provenance=raw["provenance"],
            seed=int(raw["seed"]),
            preprocessing=raw.get("preprocessing", "unit-range"),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{meta_path}: malformed checkpoint metadata ({exc})") from exc
    model = ConvNet(meta.backbone, meta.head)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"{weights_path}: weights do not match the recorded specs: {exc}") from exc
    return model, meta
