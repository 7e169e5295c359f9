"""Training loops: the magnitude-regression pretext task, the five
downstream schemes, early stopping and the low-data curriculum.

One run is a single logical thread of control; distinct runs write to
disjoint directories and may execute in parallel processes.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from . import catalog, netspec
from .catalog import ImageDataset, Split
from .evaluator import AggregateMetric, LearningCurve
from .netspec import BackboneSpec, ConvNet, HeadSpec

logger = logging.getLogger(__name__)

SCHEMES = ("scratch", "feature-extraction", "fine-tuning")
PRETRAININGS = ("none", "imagenet", "magnitudes")

#: Default Adam hyperparameters, recorded in run metadata.
ADAM_BETAS = (0.9, 0.999)

#: Training sizes of the low-data curriculum (18 points).
LOW_DATA_SIZES: tuple[int, ...] = tuple(range(100, 1001, 100)) + (
    1500,
    2000,
    2500,
    3000,
    10000,
    20000,
    30000,
    40000,
)


@dataclass(frozen=True)
class OptimizerPhase:
    """One stretch of training under a single optimizer configuration."""

    optimizer: str  # "adam" | "sgd"
    learning_rate: float
    max_epochs: int
    frozen: frozenset[str] = frozenset()  # subset of {"conv"}
    early_stop: bool = True
    momentum: float = 0.0  # sgd only

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.max_epochs < 0:
            raise ValueError("max epochs must be non-negative")
        if not self.frozen <= {"conv"}:
            raise ValueError(f"unknown frozen groups {set(self.frozen) - {'conv'}}")


@dataclass(frozen=True)
class EarlyStopPolicy:
    """Stop when the monitored series has not improved for > patience epochs.

    ``monitor`` is "val_loss" (default: best validation loss so far) or
    "gap" (the literal divergence of validation from training loss, kept
    for comparison). The best epoch is always the validation-loss argmin.
    """

    patience: int = 10
    monitor: str = "val_loss"

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.monitor not in ("val_loss", "gap"):
            raise ValueError(f"unknown monitored quantity {self.monitor!r}")


@dataclass(frozen=True)
class SchemeConfig:
    """A downstream training scheme with all hyperparameters resolved."""

    scheme: str
    pretraining: str
    phases: tuple[OptimizerPhase, ...]
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.pretraining not in PRETRAININGS:
            raise ValueError(f"unknown pretraining source {self.pretraining!r}")
        if self.scheme == "scratch" and self.pretraining != "none":
            raise ValueError("training from scratch cannot use pretrained weights")
        if self.scheme != "scratch" and self.pretraining == "none":
            raise ValueError(f"{self.scheme} needs a pretraining source")
        if not self.phases:
            raise ValueError("need at least one optimizer phase")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    @property
    def name(self) -> str:
        if self.scheme == "scratch":
            return "scratch"
        return f"{self.scheme}-{self.pretraining}"


#: The five downstream scheme presets (plus the low-data scratch variant,
#: which swaps Adam for SGD 1e-4).
def scheme_preset(name: str, seed: int = 0, low_data: bool = False) -> SchemeConfig:
    """Build one of the five scheme presets by name.

    Names: ``scratch``, ``feature-extraction-imagenet``,
    ``feature-extraction-magnitudes``, ``fine-tuning-imagenet``,
    ``fine-tuning-magnitudes`` (aliases ``fe-*``, ``ft-*`` and
    ``finetune-*`` are accepted).
    """
    canonical = name.replace("finetune-", "fine-tuning-")
    canonical = canonical.replace("fe-", "feature-extraction-").replace("ft-", "fine-tuning-")
    if canonical == "scratch":
        optimizer = ("sgd", 1e-4) if low_data else ("adam", 1e-3)
        return SchemeConfig(
            scheme="scratch",
            pretraining="none",
            phases=(
                OptimizerPhase(optimizer[0], optimizer[1], 200, momentum=0.0),
            ),
            seed=seed,
        )
    for scheme in ("feature-extraction", "fine-tuning"):
        for source in ("imagenet", "magnitudes"):
            if canonical == f"{scheme}-{source}":
                if scheme == "feature-extraction":
                    phases = (OptimizerPhase("adam", 1e-3, 100, frozenset({"conv"})),)
                else:
                    phases = (
                        OptimizerPhase("adam", 1e-3, 10, frozenset({"conv"}), early_stop=False),
                        OptimizerPhase("sgd", 1e-4, 200),
                    )
                return SchemeConfig(scheme=scheme, pretraining=source, phases=phases, seed=seed)
    raise ValueError(f"unknown scheme preset {name!r}")


SCHEME_PRESET_NAMES = (
    "scratch",
    "feature-extraction-imagenet",
    "feature-extraction-magnitudes",
    "fine-tuning-imagenet",
    "fine-tuning-magnitudes",
)


@dataclass(frozen=True)
class PretextConfig:
    """Hyperparameters of the magnitude-regression pretext run.

    Defaults follow the published protocol (SGD, learning rate 1e-3); the
    desk-scale oracle experiments pass an explicit faster configuration,
    which ends up recorded in the run metadata either way.
    """

    learning_rate: float = 1e-3
    momentum: float = 0.0
    max_epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    policy: EarlyStopPolicy = EarlyStopPolicy()

    def phase(self) -> OptimizerPhase:
        return OptimizerPhase(
            "sgd", self.learning_rate, self.max_epochs, momentum=self.momentum
        )


@dataclass
class RunResult:
    """Everything one training run produced.

    Losses are per epoch (1-based); ``val_metrics`` holds the per-epoch
    validation metric (accuracy for classification, scaled MAE for
    regression). ``phase_markers`` gives each epoch's phase index so
    multi-phase protocols are auditable from the history alone.
    """

    run_name: str
    seed: int
    task: str  # "classification" | "regression"
    train_losses: tuple[float, ...]
    val_losses: tuple[float, ...]
    val_metrics: tuple[float, ...]
    phase_markers: tuple[int, ...]
    best_epoch: int
    final_metric: float
    metrics: dict
    wall_clock_s: float
    checkpoint: str | None = None
    warnings: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for x in (*self.train_losses, *self.val_losses):
            if not np.isfinite(x):
                raise ValueError("losses must be finite")
        if self.best_epoch > len(self.val_losses):
            raise ValueError("best epoch beyond the epochs run")

    @property
    def epochs_run(self) -> int:
        return len(self.train_losses)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunResult":
        d = dict(d)
        for key in ("train_losses", "val_losses", "val_metrics", "phase_markers", "warnings"):
            d[key] = tuple(d.get(key, ()))
        return cls(**d)

    def save(self, directory: str | Path) -> Path:
        """Write ``result.json`` and ``history.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "result.json").write_text(json.dumps(self.to_dict(), indent=2))
        with (directory / "history.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "phase", "train_loss", "val_loss", "val_acc"])
            for i in range(self.epochs_run):
                acc = f"{self.val_metrics[i]:.6f}" if self.task == "classification" else ""
                writer.writerow(
                    [
                        i + 1,
                        self.phase_markers[i],
                        f"{self.train_losses[i]:.6f}",
                        f"{self.val_losses[i]:.6f}",
                        acc,
                    ]
                )
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "RunResult":
        return cls.from_dict(json.loads((Path(directory) / "result.json").read_text()))


def check_early_stop(
    history: Sequence[tuple[float, float]], policy: EarlyStopPolicy
) -> tuple[bool, int]:
    """Early-stopping decision over (train_loss, val_loss) epoch pairs.

    Returns ``(stop, best_epoch)`` with 1-based epochs; stop fires once
    the monitored quantity has gone more than ``patience`` epochs without
    a new minimum. Best epoch is the earliest validation-loss minimum.
    """
    if not history:
        raise ValueError("history must be non-empty")
    train = [h[0] for h in history]
    val = [h[1] for h in history]
    monitored = val if policy.monitor == "val_loss" else [v - t for t, v in zip(train, val)]
    best_monitored = int(np.argmin(monitored))
    stop = (len(monitored) - (best_monitored + 1)) > policy.patience
    best_epoch = int(np.argmin(val)) + 1
    return stop, best_epoch


def low_data_schedule(max_n: int) -> list[int]:
    """The curriculum's training-set sizes, truncated to ``max_n``."""
    if max_n < LOW_DATA_SIZES[0]:
        raise ValueError(f"max_n must be at least {LOW_DATA_SIZES[0]}")
    return [n for n in LOW_DATA_SIZES if n <= max_n]


def _make_optimizer(phase: OptimizerPhase, params) -> torch.optim.Optimizer:
    params = list(params)
    if phase.optimizer == "adam":
        return torch.optim.Adam(params, lr=phase.learning_rate, betas=ADAM_BETAS)
    return torch.optim.SGD(params, lr=phase.learning_rate, momentum=phase.momentum)


def _eval_epoch(
    model: ConvNet,
    x: torch.Tensor,
    y: torch.Tensor,
    loss_kind: str,
    batch_size: int = 256,
    conv_done: bool = False,
) -> tuple[float, float]:
    """Validation loss and metric (accuracy or scaled MAE) in eval mode."""
    model.eval()
    losses = []
    hits = 0
    with torch.no_grad():
        for s in range(0, x.shape[0], batch_size):
            xb, yb = x[s : s + batch_size], y[s : s + batch_size]
            p = model.head_forward(xb) if conv_done else model(xb)
            losses.append(float(netspec.loss(loss_kind, p, yb)) * len(xb))
            if loss_kind == netspec.LOSS_CROSS_ENTROPY:
                hits += int((p.argmax(dim=1) == yb).sum())
    val_loss = sum(losses) / x.shape[0]
    if loss_kind == netspec.LOSS_CROSS_ENTROPY:
        return val_loss, hits / x.shape[0]
    return val_loss, val_loss  # regression: the loss *is* the scaled MAE


def _run_phases(
    model: ConvNet,
    phases: Sequence[OptimizerPhase],
    train_x: torch.Tensor,
    train_y: torch.Tensor,
    val_x: torch.Tensor,
    val_y: torch.Tensor,
    loss_kind: str,
    batch_size: int,
    seed: int,
    policy: EarlyStopPolicy,
) -> tuple[list[float], list[float], list[float], list[int], int, int]:
    """Execute the optimizer phases; returns the concatenated history.

    Conv-frozen phases run on features precomputed once (the conv stack
    is deterministic and gradient-free there, so the arithmetic is
    unchanged). Early-stopped phases restore their best weights before
    the next phase begins. Returns per-epoch histories plus the global
    best epoch (validation-loss argmin) and the epoch whose weights the
    model holds on return.
    """
    rng = np.random.default_rng(seed)
    train_losses: list[float] = []
    val_losses: list[float] = []
    val_metrics: list[float] = []
    phase_markers: list[int] = []
    n = train_x.shape[0]
    restored_epoch = 0

    for phase_idx, phase in enumerate(phases):
        conv_frozen = "conv" in phase.frozen
        for p in model.conv_parameters():
            p.requires_grad_(not conv_frozen)
        if conv_frozen:
            with torch.no_grad():
                model.eval()
                feats_t = model.features(train_x).flatten(1)
                feats_v = model.features(val_x).flatten(1)
            trainable = model.head_parameters()
        else:
            feats_t = feats_v = None
            trainable = model.parameters()
        optimizer = _make_optimizer(phase, trainable)

        phase_history: list[tuple[float, float]] = []
        best_state: dict | None = None
        best_val = np.inf
        best_in_phase = 0
        for _ in range(phase.max_epochs):
            model.train()
            order = rng.permutation(n)
            epoch_loss = 0.0
            for s in range(0, n, batch_size):
                idx = order[s : s + batch_size]
                optimizer.zero_grad()
                if conv_frozen:
                    pred = model.head_forward(feats_t[idx])
                else:
                    pred = model(train_x[idx])
                batch_loss = netspec.loss(loss_kind, pred, train_y[idx])
                batch_loss.backward()
                optimizer.step()
                model.enforce_max_norm()
                epoch_loss += float(batch_loss.detach()) * len(idx)
            train_loss = epoch_loss / n
            if conv_frozen:
                val_loss, val_metric = _eval_epoch(
                    model, feats_v, val_y, loss_kind, conv_done=True
                )
            else:
                val_loss, val_metric = _eval_epoch(model, val_x, val_y, loss_kind)
            train_losses.append(train_loss)
            val_losses.append(val_loss)
            val_metrics.append(val_metric)
            phase_markers.append(phase_idx)
            phase_history.append((train_loss, val_loss))
            restored_epoch = len(val_losses)
            if phase.early_stop:
                if val_loss < best_val:
                    best_val = val_loss
                    best_state = copy.deepcopy(model.state_dict())
                    best_in_phase = len(val_losses)
                stop, _ = check_early_stop(phase_history, policy)
                if stop:
                    break
        if phase.early_stop and best_state is not None:
            model.load_state_dict(best_state)
            restored_epoch = best_in_phase

    if val_losses:
        best_epoch = int(np.argmin(val_losses)) + 1
    else:
        best_epoch = 0
    return train_losses, val_losses, val_metrics, phase_markers, best_epoch, restored_epoch


def train_pretext(
    model: ConvNet,
    data: ImageDataset,
    split: Split,
    config: PretextConfig,
    targets: np.ndarray | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Run the magnitude-regression pretext task.

    ``targets`` must already be scaled into [0, 1] (one row per dataset
    object); by default they are derived from the dataset's catalog
    magnitudes. The run minimizes MAE under the max-norm constraint and
    reports both the scaled MAE and its raw-scale equivalent (30x).
    """
    if targets is None:
        targets = catalog.scale_magnitudes(data.magnitudes)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(data.ids), catalog.N_BANDS):
        raise ValueError(f"targets must be (n, {catalog.N_BANDS})")
    if targets.min() < 0.0 or targets.max() > 1.0:
        raise ValueError(
            "magnitude targets outside [0, 1]; rescale them (divide by 30) first"
        )
    t0 = time.perf_counter()
    torch.manual_seed(config.seed)  # dropout stream; identical runs => identical traces
    ti = data.index_of(split.train)
    vi = data.index_of(split.val)
    train_x = netspec.images_to_tensor(data.images[ti])
    train_y = torch.from_numpy(targets[ti]).float()
    val_x = netspec.images_to_tensor(data.images[vi])
    val_y = torch.from_numpy(targets[vi]).float()

    train_losses, val_losses, val_metrics, markers, best_epoch, restored = _run_phases(
        model,
        [config.phase()],
        train_x,
        train_y,
        val_x,
        val_y,
        netspec.LOSS_MAE,
        config.batch_size,
        config.seed,
        config.policy,
    )
    if val_losses:
        scaled_mae = val_losses[restored - 1]
    else:  # degenerate zero-epoch run: evaluate the initial weights
        scaled_mae, _ = _eval_epoch(model, val_x, val_y, netspec.LOSS_MAE)
    result = RunResult(
        run_name="pretext",
        seed=config.seed,
        task="regression",
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        val_metrics=tuple(val_metrics),
        phase_markers=tuple(markers),
        best_epoch=best_epoch,
        final_metric=scaled_mae,
        metrics={"scaled_mae": scaled_mae, "raw_mae": 30.0 * scaled_mae},
        wall_clock_s=time.perf_counter() - t0,
        metadata={
            "optimizer": "sgd",
            "learning_rate": config.learning_rate,
            "momentum": config.momentum,
            "max_epochs": config.max_epochs,
            "batch_size": config.batch_size,
            "patience": config.policy.patience,
            "monitor": config.policy.monitor,
            "image_size": data.image_size,
            "train_size": len(ti),
            "val_size": len(vi),
        },
    )
    if out_dir is not None:
        result.save(out_dir)
    return result


def _state_bytes(params: Iterable[torch.nn.Parameter]) -> list[bytes]:
    return [p.detach().numpy().tobytes() for p in params]


def train_scheme(
    scheme: SchemeConfig,
    data: ImageDataset,
    split: Split,
    subsample: Sequence[str] | None = None,
    checkpoint: str | Path | None = None,
    backbone: BackboneSpec | None = None,
    head: HeadSpec | None = None,
    policy: EarlyStopPolicy = EarlyStopPolicy(),
    out_dir: str | Path | None = None,
) -> RunResult:
    """Train one downstream classifier under the given scheme.

    Pretrained schemes take the checkpoint directory of a model whose
    provenance matches the scheme's pretraining source; the head is
    always re-initialized for the new class count. Frozen-phase conv
    weights are verified bit-identical before/after training.
    """
    if data.labels is None:
        raise ValueError("downstream training needs a labeled dataset")
    t0 = time.perf_counter()
    warnings: list[str] = []

    torch.manual_seed(scheme.seed)
    n_classes = len(data.class_names)
    head = head or HeadSpec(output_units=n_classes, output_activation="softmax")
    if head.output_units != n_classes:
        raise ValueError(f"head has {head.output_units} outputs for {n_classes} classes")
    preprocessing = "unit-range"
    if scheme.pretraining == "none":
        backbone = backbone or BackboneSpec(input_size=data.image_size)
        model = netspec.build_model(backbone, head, seed=scheme.seed)
        provenance = "none"
    else:
        if checkpoint is None:
            raise ValueError(
                f"scheme {scheme.name!r} needs a checkpoint with provenance "
                f"{scheme.pretraining!r}; run pretrain first or pass --checkpoint"
            )
        loaded, meta = netspec.load_checkpoint(checkpoint)
        if meta.provenance != scheme.pretraining:
            raise ValueError(
                f"checkpoint provenance {meta.provenance!r} does not match "
                f"scheme pretraining {scheme.pretraining!r}"
            )
        if meta.backbone.input_size != data.image_size:
            raise ValueError(
                f"checkpoint input size {meta.backbone.input_size} != images "
                f"{data.image_size}"
            )
        model = netspec.build_model(meta.backbone, head, seed=scheme.seed)
        own = model.state_dict()
        for key, value in loaded.state_dict().items():
            if key.startswith("features."):
                own[key] = value
        model.load_state_dict(own)
        provenance = meta.provenance
        preprocessing = meta.preprocessing

    train_ids = tuple(subsample) if subsample is not None else split.train
    extra = set(train_ids) - set(split.train)
    if extra:
        raise ValueError(f"{len(extra)} subsample ids are not in the train split")
    ti = data.index_of(train_ids)
    vi = data.index_of(split.val)
    present = set(int(c) for c in data.labels[ti])
    missing = [data.class_names[int(c)] for c in sorted(set(int(c) for c in data.labels[vi]) - present)]
    if missing:
        msg = f"classes {missing} appear in validation but not in the training subsample"
        warnings.append(msg)
        logger.warning(msg)

    train_x = netspec.apply_preprocessing(netspec.images_to_tensor(data.images[ti]), preprocessing)
    train_y = torch.from_numpy(data.labels[ti])
    val_x = netspec.apply_preprocessing(netspec.images_to_tensor(data.images[vi]), preprocessing)
    val_y = torch.from_numpy(data.labels[vi])

    all_frozen = all("conv" in p.frozen for p in scheme.phases)
    frozen_before = _state_bytes(model.conv_parameters()) if all_frozen else None

    train_losses, val_losses, val_metrics, markers, best_epoch, restored = _run_phases(
        model,
        scheme.phases,
        train_x,
        train_y,
        val_x,
        val_y,
        netspec.LOSS_CROSS_ENTROPY,
        scheme.batch_size,
        scheme.seed,
        policy,
    )
    if frozen_before is not None:
        if _state_bytes(model.conv_parameters()) != frozen_before:
            raise RuntimeError("frozen conv weights changed during training")

    if val_losses:
        final_acc = val_metrics[restored - 1]
    else:
        _, final_acc = _eval_epoch(model, val_x, val_y, netspec.LOSS_CROSS_ENTROPY)
    result = RunResult(
        run_name=scheme.name,
        seed=scheme.seed,
        task="classification",
        train_losses=tuple(train_losses),
        val_losses=tuple(val_losses),
        val_metrics=tuple(val_metrics),
        phase_markers=tuple(markers),
        best_epoch=best_epoch,
        final_metric=final_acc,
        metrics={"accuracy": final_acc},
        wall_clock_s=time.perf_counter() - t0,
        warnings=tuple(warnings),
        metadata={
            "scheme": scheme.scheme,
            "pretraining": provenance,
            "preprocessing": preprocessing,
            "phases": [
                {
                    "optimizer": p.optimizer,
                    "learning_rate": p.learning_rate,
                    "max_epochs": p.max_epochs,
                    "frozen": sorted(p.frozen),
                    "early_stop": p.early_stop,
                }
                for p in scheme.phases
            ],
            "adam_betas": list(ADAM_BETAS),
            "batch_size": scheme.batch_size,
            "patience": policy.patience,
            "monitor": policy.monitor,
            "image_size": data.image_size,
            "train_size": len(ti),
            "val_size": len(vi),
            "classes": list(data.class_names),
        },
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        netspec.save_checkpoint(model, out_dir / "checkpoint", provenance, scheme.seed)
        result.checkpoint = str(out_dir / "checkpoint")
        result.save(out_dir)
    return result


def run_low_data_experiment(
    data: ImageDataset,
    schemes: Sequence[str | SchemeConfig],
    seed: int,
    split: Split | None = None,
    checkpoints: Mapping[str, str | Path] | None = None,
    backbone: BackboneSpec | None = None,
    sizes: Sequence[int] | None = None,
    repeats: int = 1,
    out_dir: str | Path | None = None,
    experiment: str | None = None,
) -> dict[str, LearningCurve]:
    """Learning curves over the low-data schedule for each scheme.

    Training subsets are stratified, nested per repeat seed, and the
    validation set is the same for every run. Scratch runs use the
    low-data variant (SGD 1e-4). Results land under
    ``<out_dir>/<experiment>/<scheme>/<size>/<seed>/``.
    """
    if data.labels is None:
        raise ValueError("the low-data experiment needs a labeled dataset")
    split = split or catalog.make_split(list(data.ids), seed=seed)
    sizes = list(sizes) if sizes is not None else low_data_schedule(len(split.train))
    checkpoints = dict(checkpoints or {})
    experiment = experiment or data.name
    labels = data.label_map()

    configs: list[SchemeConfig] = []
    for s in schemes:
        if isinstance(s, SchemeConfig):
            configs.append(s)
        else:
            configs.append(scheme_preset(s, low_data=True))

    nested_per_seed = {
        seed + r: catalog.nested_subsamples(split, sizes, seed + r, labels)
        for r in range(repeats)
    }
    curves: dict[str, LearningCurve] = {}
    for cfg in configs:
        points: list[tuple[int, AggregateMetric]] = []
        for size_idx, n in enumerate(sizes):
            metrics: list[float] = []
            for r in range(repeats):
                run_seed = seed + r
                subsample = nested_per_seed[run_seed][size_idx]
                run_cfg = replace(cfg, seed=run_seed)
                run_dir = None
                if out_dir is not None:
                    run_dir = Path(out_dir) / experiment / cfg.name / str(n) / str(run_seed)
                result = train_scheme(
                    run_cfg,
                    data,
                    split,
                    subsample=subsample,
                    checkpoint=checkpoints.get(cfg.pretraining),
                    backbone=backbone,
                    out_dir=run_dir,
                )
                metrics.append(result.final_metric)
            points.append((n, AggregateMetric.from_values(metrics)))
            logger.info(
                "%s n=%d: %.4f +- %.4f", cfg.name, n, points[-1][1].mean, points[-1][1].std
            )
        curves[cfg.name] = LearningCurve(scheme=cfg.name, points=tuple(points))
    return curves
