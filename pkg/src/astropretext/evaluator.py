"""Metrics, run aggregation, report rendering, projections and curves.

Reports follow the benchmark layout: one row per dataset, one column per
scheme, cells "mean ± std" over repeated runs at four decimal places;
low-data rows additionally carry the signed difference between the two
pretraining sources.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

#: Column order of the report grid: scheme name -> (scheme, source).
REPORT_COLUMNS: tuple[str, ...] = (
    "scratch",
    "feature-extraction-imagenet",
    "feature-extraction-magnitudes",
    "fine-tuning-imagenet",
    "fine-tuning-magnitudes",
)

MISSING_CELL = "—"


@dataclass(frozen=True)
class AggregateMetric:
    """Mean and population standard deviation over repeated runs."""

    mean: float
    std: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("need at least one run")
        if self.std < 0:
            raise ValueError("std must be non-negative")

    @classmethod
    def from_values(cls, values: Sequence[float]) -> "AggregateMetric":
        arr = np.asarray(list(values), dtype=np.float64)
        if arr.size == 0:
            raise ValueError("need at least one run")
        return cls(mean=float(arr.mean()), std=float(arr.std()), count=int(arr.size))

    def cell(self) -> str:
        return f"{self.mean:.4f} ± {self.std:.4f}"


@dataclass(frozen=True)
class LearningCurve:
    """Validation accuracy as a function of training-set size, per scheme."""

    scheme: str
    points: tuple[tuple[int, AggregateMetric], ...]

    def __post_init__(self) -> None:
        sizes = [n for n, _ in self.points]
        if sizes != sorted(set(sizes)):
            raise ValueError("curve sizes must be strictly increasing")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(n for n, _ in self.points)


@dataclass(frozen=True)
class Projection2D:
    """A 2-D embedding of feature rows, one point per row."""

    points: np.ndarray  # (N, 2)
    perplexity: float
    labels: tuple[str, ...] = ()
    ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (N, 2)")
        if self.labels and len(self.labels) != len(self.points):
            raise ValueError("labels misaligned with points")
        if self.ids and len(self.ids) != len(self.points):
            raise ValueError("ids misaligned with points")


def predicted_classes(probabilities: np.ndarray) -> np.ndarray:
    """Argmax class indices; ties resolve to the lowest class index."""
    probs = np.asarray(probabilities)
    if probs.ndim != 2:
        raise ValueError("expected (N, n_classes) probabilities")
    return probs.argmax(axis=1)


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of exact matches between predicted and true class indices."""
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape or pred.size == 0:
        raise ValueError(f"length mismatch or empty: {pred.shape} vs {true.shape}")
    return float((pred == true).mean())


def aggregate(runs: Iterable) -> AggregateMetric:
    """Mean/std of the final validation metric over repeated runs.

    Accepts RunResult-like objects (anything with ``final_metric``) or
    plain floats.
    """
    values = [r.final_metric if hasattr(r, "final_metric") else float(r) for r in runs]
    return AggregateMetric.from_values(values)


def mean_predictor_mae(train_targets: np.ndarray, val_targets: np.ndarray) -> float:
    """MAE of always predicting the per-band training mean.

    The reference any trained regressor must beat; computed on the same
    scale as its inputs.
    """
    train = np.asarray(train_targets, dtype=np.float64)
    val = np.asarray(val_targets, dtype=np.float64)
    return float(np.abs(val - train.mean(axis=0)).mean())


def project_features(
    features: np.ndarray,
    perplexity: float = 50.0,
    seed: int = 0,
    labels: Sequence[str] | None = None,
    ids: Sequence[str] | None = None,
) -> Projection2D:
    """2-D t-SNE embedding of feature rows, deterministic per seed.

    Requires N > 3 * perplexity; raise otherwise with guidance, since the
    embedding is meaningless below that.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] < 2:
        raise ValueError("features must be (N, D) with D >= 2")
    n = features.shape[0]
    if not n > 3 * perplexity:
        raise ValueError(
            f"perplexity {perplexity} too large for {n} rows; need N > 3*perplexity "
            f"(use perplexity <= {max(1, (n - 1) // 3)} or project more rows)"
        )
    from sklearn.manifold import TSNE

    coords = TSNE(
        n_components=2, perplexity=perplexity, init="pca", random_state=seed
    ).fit_transform(features)
    return Projection2D(
        points=np.asarray(coords, dtype=np.float64),
        perplexity=perplexity,
        labels=tuple(labels) if labels is not None else (),
        ids=tuple(ids) if ids is not None else (),
    )


def save_projection(projection: Projection2D, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``projection.csv`` (id, x, y, label) and ``projection.png``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "projection.csv"
    n = len(projection.points)
    ids = projection.ids or tuple(str(i) for i in range(n))
    labels = projection.labels or ("",) * n
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "x", "y", "label"])
        for i in range(n):
            writer.writerow(
                [ids[i], f"{projection.points[i, 0]:.6f}", f"{projection.points[i, 1]:.6f}", labels[i]]
            )

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    for name in sorted(set(labels)):
        mask = np.asarray([l == name for l in labels])
        ax.scatter(
            projection.points[mask, 0],
            projection.points[mask, 1],
            s=6,
            alpha=0.7,
            label=name or None,
        )
    if any(labels):
        ax.legend(markerscale=2)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    png_path = out_dir / "projection.png"
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path


@dataclass
class Report:
    """The aggregated grid a run directory produced."""

    rows: list[dict]  # dataset, cells per REPORT_COLUMNS
    low_data_rows: list[dict]  # dataset, scheme, imagenet, magnitudes, diff
    complete: bool
    csv_path: Path | None = None
    txt_path: Path | None = None


def _collect_runs(experiment_dir: Path) -> dict:
    """Scan <dir>/<dataset>/<scheme>/<size>/<seed>/result.json into a tree."""
    tree: dict = {}
    for result_path in sorted(experiment_dir.glob("*/*/*/*/result.json")):
        seed_dir = result_path.parent
        size_dir = seed_dir.parent
        scheme_dir = size_dir.parent
        dataset_dir = scheme_dir.parent
        try:
            size = int(size_dir.name) if size_dir.name != "full" else None
        except ValueError:
            continue
        data = json.loads(result_path.read_text())
        tree.setdefault(dataset_dir.name, {}).setdefault(scheme_dir.name, {}).setdefault(
            size, []
        ).append(float(data["final_metric"]))
    return tree


def render_report(
    experiment_dir: str | Path, out_dir: str | Path | None = None
) -> Report:
    """Aggregate a finished run directory into ``report.csv``/``report.txt``.

    Full-size runs fill the main grid; runs at the smallest low-data size
    (when present) fill difference rows between the two pretraining
    sources. Missing cells render as "—" and mark the report incomplete.
    """
    experiment_dir = Path(experiment_dir)
    out_dir = Path(out_dir) if out_dir is not None else experiment_dir
    tree = _collect_runs(experiment_dir)
    if not tree:
        raise FileNotFoundError(f"no run results under {experiment_dir}")

    complete = True
    rows: list[dict] = []
    for dataset in sorted(tree):
        row = {"dataset": dataset}
        group_best: dict[str, tuple[float, str]] = {}
        group_size: dict[str, int] = {}
        for col in REPORT_COLUMNS:
            sizes = tree[dataset].get(col, {})
            values = sizes.get(None) or (sizes[max(sizes)] if sizes else None)
            if not values:
                row[col] = MISSING_CELL
                complete = False
                continue
            agg = AggregateMetric.from_values(values)
            row[col] = agg.cell()
            if col == "scratch":
                continue
            group = col.rsplit("-", 1)[0]
            group_size[group] = group_size.get(group, 0) + 1
            if group not in group_best or agg.mean > group_best[group][0]:
                group_best[group] = (agg.mean, col)
        # flag the better pretraining source within each populated pair
        for group, (_, best_col) in group_best.items():
            if group_size[group] >= 2:
                row[best_col] = f"*{row[best_col]}"
        rows.append(row)

    low_rows: list[dict] = []
    for dataset in sorted(tree):
        low_sizes = sorted(
            {
                size
                for scheme in tree[dataset].values()
                for size in scheme
                if size is not None
            }
        )
        if not low_sizes:
            continue
        n = low_sizes[0]
        for scheme in ("feature-extraction", "fine-tuning"):
            cells = {}
            for source in ("imagenet", "magnitudes"):
                values = tree[dataset].get(f"{scheme}-{source}", {}).get(n)
                cells[source] = AggregateMetric.from_values(values) if values else None
            if cells["imagenet"] is None and cells["magnitudes"] is None:
                continue
            diff = (
                f"{cells['magnitudes'].mean - cells['imagenet'].mean:+.4f}"
                if cells["imagenet"] and cells["magnitudes"]
                else MISSING_CELL
            )
            if diff == MISSING_CELL:
                complete = False
            low_rows.append(
                {
                    "dataset": f"{dataset} (n={n})",
                    "scheme": scheme,
                    "imagenet": f"{cells['imagenet'].mean:.4f}" if cells["imagenet"] else MISSING_CELL,
                    "magnitudes": f"{cells['magnitudes'].mean:.4f}" if cells["magnitudes"] else MISSING_CELL,
                    "diff": diff,
                }
            )

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dataset", *REPORT_COLUMNS])
        for row in rows:
            writer.writerow([row["dataset"], *(row[c] for c in REPORT_COLUMNS)])
        if low_rows:
            writer.writerow([])
            writer.writerow(["dataset", "scheme", "imagenet", "magnitudes", "diff"])
            for row in low_rows:
                writer.writerow(
                    [row["dataset"], row["scheme"], row["imagenet"], row["magnitudes"], row["diff"]]
                )

    txt_path = out_dir / "report.txt"
    with txt_path.open("w") as fh:
        header = ["dataset", *REPORT_COLUMNS]
        table = [[r["dataset"], *(r[c] for c in REPORT_COLUMNS)] for r in rows]
        col_w = [max(len(h), *(len(t[i]) for t in table)) if table else len(h) for i, h in enumerate(header)]
        fh.write("  ".join(h.ljust(col_w[i]) for i, h in enumerate(header)) + "\n")
        for t in table:
            fh.write("  ".join(t[i].ljust(col_w[i]) for i in range(len(header))) + "\n")
        if low_rows:
            fh.write("\nlow-data (smallest size): accuracy by pretraining source\n")
            for row in low_rows:
                fh.write(
                    f"{row['dataset']}  {row['scheme']}: imagenet {row['imagenet']}"
                    f"  magnitudes {row['magnitudes']}  diff {row['diff']}\n"
                )
        fh.write("\n* better pretraining source within feature extraction / fine-tuning\n")
        fh.write("cells are mean ± population std over repeated runs, 4 decimals\n")

    return Report(rows=rows, low_data_rows=low_rows, complete=complete, csv_path=csv_path, txt_path=txt_path)


def parse_report_csv(path: str | Path) -> tuple[list[dict], list[dict]]:
    """Read back ``report.csv`` into (grid rows, low-data rows)."""
    rows: list[dict] = []
    low_rows: list[dict] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        section = "grid"
        for record in reader:
            if not record or not any(record):
                section = "low"
                header = next(reader)
                continue
            rows_out = rows if section == "grid" else low_rows
            rows_out.append(dict(zip(header, record)))
    return rows, low_rows


def parse_cell(cell: str) -> tuple[float, float] | None:
    """Parse a "mean ± std" report cell; None for missing cells."""
    cell = cell.lstrip("*").strip()
    if cell == MISSING_CELL or not cell:
        return None
    mean, std = cell.split("±")
    return float(mean), float(std)


def render_curves(
    curves: Sequence[LearningCurve], out_dir: str | Path
) -> tuple[Path, Path]:
    """Plot learning curves and write the underlying CSV.

    Feature-extraction schemes render dashed, everything else solid; the
    x axis is the training size on a log scale.
    """
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve")
    for c in curves:
        if not c.points:
            raise ValueError(f"curve {c.scheme!r} has no points")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "curves.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "size", "mean", "std", "runs"])
        for c in curves:
            for n, m in c.points:
                writer.writerow([c.scheme, n, f"{m.mean:.6f}", f"{m.std:.6f}", m.count])

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 5))
    for c in curves:
        xs = [n for n, _ in c.points]
        ys = [m.mean for _, m in c.points]
        errs = [m.std for _, m in c.points]
        style = "--" if c.scheme.startswith("feature-extraction") else "-"
        ax.errorbar(xs, ys, yerr=errs, fmt=style, marker="o", markersize=3, label=c.scheme)
    ax.set_xscale("log")
    ax.set_xlabel("training set size")
    ax.set_ylabel("validation accuracy")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    png_path = out_dir / "curves.png"
    fig.savefig(png_path, dpi=150)
    plt.close(fig)
    return csv_path, png_path
