"""Command-line entry point for reproducible experiments.

Subcommands: ``synth``, ``pretrain``, ``train``, ``curve``, ``project``,
``report``. Every subcommand writes a ``config_snapshot.json`` (resolved
arguments plus content hashes of its file inputs) into its output
directory, so a finished run can be re-executed identically.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__, catalog, evaluator, netspec, synthgen, trainer

logger = logging.getLogger(__name__)

DATA_ROOT_ENV = "ASTROPRETEXT_DATA"


class UsageError(ValueError):
    """Bad arguments or argument combinations (exit code 2)."""


def _data_dir(value: str | None) -> Path:
    """Resolve a dataset directory from the flag or the environment root."""
    if value:
        path = Path(value)
        if not path.is_dir() and not path.is_absolute():
            root = os.environ.get(DATA_ROOT_ENV)
            if root and (Path(root) / value).is_dir():
                return Path(root) / value
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        return Path(root)
    raise UsageError(f"no --data given and {DATA_ROOT_ENV} is not set")


def _content_hash(path: Path) -> str:
    h = hashlib.sha256()
    h.update(f"blob {path.stat().st_size}\0".encode())
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_snapshot(out_dir: Path, args: argparse.Namespace, inputs: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snapshot = {
        "version": __version__,
        "command": args.command,
        "arguments": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items()
            if k != "func"
        },
        "input_hashes": {
            str(p): _content_hash(p) for p in inputs if p is not None and p.is_file()
        },
    }
    (out_dir / "config_snapshot.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True))


def _parse_classes(spec: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for part in spec.split(","):
        if ":" not in part:
            raise UsageError(f"bad class spec {part!r}; expected name:count")
        name, _, count = part.partition(":")
        try:
            counts[name.strip()] = int(count)
        except ValueError:
            raise UsageError(f"bad count in class spec {part!r}") from None
    return counts


def _backbone(args, image_size: int) -> netspec.BackboneSpec:
    return netspec.BackboneSpec(family=args.backbone, input_size=image_size)


def _set_threads(args) -> None:
    if getattr(args, "threads", None):
        import torch

        torch.set_num_threads(args.threads)


def cmd_synth(args) -> int:
    counts = _parse_classes(args.classes)
    config = synthgen.GeneratorConfig(
        image_size=args.size,
        sky_level=args.sky,
        gain=args.gain if args.gain is not None else math.inf,
        labeled=not args.unlabeled,
        stretch=args.stretch,
        q=args.q,
    )
    out = Path(args.out)
    ds = synthgen.generate_dataset(counts, out, seed=args.seed, config=config)
    _write_snapshot(out, args, [])
    print(f"wrote {sum(counts.values())} images and {ds.catalog_path}")
    return 0


def cmd_pretrain(args) -> int:
    _set_threads(args)
    data_dir = _data_dir(args.data)
    catalog_path = data_dir / "catalog.csv"
    image_dir = data_dir / "images"
    entries = catalog.load_catalog(catalog_path, image_dir=image_dir)
    total = len(entries)

    if args.exclude_labeled:
        entries = [e for e in entries if not e.label]
    if args.exclude:
        exclude_path = Path(args.exclude)
        if exclude_path.suffix == ".json":
            split_obj = catalog.Split.load(exclude_path)
            excluded_ids = set(split_obj.train) | set(split_obj.val) | set(split_obj.test)
        else:
            excluded_ids = {e.id for e in catalog.load_catalog(exclude_path, check_images=False)}
        entries = catalog.exclude_labeled(entries, excluded_ids)

    entries = catalog.filter_by_uncertainty(entries, args.threshold)
    if not entries:
        print(
            f"error: no objects retained out of {total} at uncertainty threshold "
            f"{args.threshold}; raise --threshold or regenerate with less noise",
            file=sys.stderr,
        )
        return 1
    logger.info("pretext set: %d of %d objects after filtering", len(entries), total)

    split = catalog.make_split(entries, seed=args.split_seed)
    ids = tuple(e.id for e in entries)
    images = catalog.load_image_array(image_dir, ids)
    mags = np.asarray([e.magnitudes.values for e in entries])
    data = catalog.ImageDataset(name=data_dir.name, ids=ids, images=images, magnitudes=mags)

    backbone = _backbone(args, data.image_size)
    head = netspec.HeadSpec(output_units=catalog.N_BANDS, output_activation="saturating-relu")
    model = netspec.build_model(backbone, head, seed=args.seed)
    config = trainer.PretextConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        max_epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        policy=trainer.EarlyStopPolicy(patience=args.patience),
    )
    out = Path(args.out)
    result = trainer.train_pretext(model, data, split, config, out_dir=out)
    checkpoint_dir = netspec.save_checkpoint(model, out / "checkpoint", "magnitudes", args.seed)
    split.save(out / "split.json")
    _write_snapshot(out, args, [catalog_path])
    print(
        f"pretext MAE: scaled {result.metrics['scaled_mae']:.4f} "
        f"raw {result.metrics['raw_mae']:.4f} (30x scaled), "
        f"best epoch {result.best_epoch}/{result.epochs_run}"
    )
    print(f"checkpoint: {checkpoint_dir}")
    return 0


def _scheme_checkpoint(args, scheme: trainer.SchemeConfig) -> Path | None:
    # missing checkpoints are runtime dependency failures (exit 1), not usage errors
    if scheme.pretraining == "magnitudes":
        if not args.checkpoint:
            raise ValueError(
                f"scheme {scheme.name!r} needs a magnitudes checkpoint; "
                "run pretrain first or pass --checkpoint"
            )
        return Path(args.checkpoint)
    if scheme.pretraining == "imagenet":
        if not args.imagenet_checkpoint:
            raise ValueError(
                f"scheme {scheme.name!r} needs externally supplied weights; "
                "pass --imagenet-checkpoint"
            )
        return Path(args.imagenet_checkpoint)
    return None


def cmd_train(args) -> int:
    _set_threads(args)
    data_dir = _data_dir(args.data)
    data = catalog.load_dataset(data_dir / "catalog.csv", data_dir / "images")
    try:
        scheme = trainer.scheme_preset(args.scheme, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    checkpoint = _scheme_checkpoint(args, scheme)
    split = catalog.make_split(list(data.ids), seed=args.split_seed)

    subsample = None
    size_name = "full"
    if args.subsample:
        subsample = catalog.subsample_training(
            split, args.subsample, seed=args.seed, labels=data.label_map()
        )
        size_name = str(args.subsample)

    experiment = args.experiment or data.name
    out = Path(args.out)
    results = []
    for r in range(args.repeats):
        run = replace(scheme, seed=args.seed + r)
        run_dir = out / experiment / scheme.name / size_name / str(run.seed)
        result = trainer.train_scheme(
            run,
            data,
            split,
            subsample=subsample,
            checkpoint=checkpoint,
            backbone=_backbone(args, data.image_size),
            out_dir=run_dir,
        )
        results.append(result)
        print(
            f"{scheme.name} seed {run.seed}: accuracy {result.final_metric:.4f} "
            f"(best epoch {result.best_epoch}/{result.epochs_run})"
        )
    agg = evaluator.aggregate(results)
    print(f"{scheme.name}: {agg.cell()} over {agg.count} runs")
    _write_snapshot(out / experiment, args, [data_dir / "catalog.csv"])
    return 0


@lru_cache(maxsize=2)
def _cached_dataset(catalog_path: str, image_dir: str) -> catalog.ImageDataset:
    return catalog.load_dataset(Path(catalog_path), Path(image_dir))


def _curve_point(task: dict) -> tuple[str, int, int, float]:
    """One (scheme, size, seed) run in a worker process."""
    import torch

    torch.set_num_threads(task["threads"] or 1)
    data = _cached_dataset(task["catalog_path"], task["image_dir"])
    split = catalog.Split.from_json(task["split_json"])
    scheme = trainer.scheme_preset(task["scheme"], seed=task["seed"], low_data=True)
    subsample = tuple(task["subsample"])
    result = trainer.train_scheme(
        scheme,
        data,
        split,
        subsample=subsample,
        checkpoint=task["checkpoint"],
        backbone=netspec.BackboneSpec(family=task["backbone"], input_size=data.image_size),
        out_dir=Path(task["run_dir"]),
    )
    return task["scheme"], task["size"], task["seed"], result.final_metric


def cmd_curve(args) -> int:
    _set_threads(args)
    data_dir = _data_dir(args.data)
    data = catalog.load_dataset(data_dir / "catalog.csv", data_dir / "images")
    split = catalog.make_split(list(data.ids), seed=args.split_seed)
    schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
    max_n = args.max_n or len(split.train)
    sizes = trainer.low_data_schedule(max_n)
    out = Path(args.out)
    experiment = args.experiment or data.name

    tasks = []
    labels = data.label_map()
    nested = {
        args.seed + r: catalog.nested_subsamples(split, sizes, args.seed + r, labels)
        for r in range(args.repeats)
    }
    for name in schemes:
        scheme = trainer.scheme_preset(name, low_data=True)
        checkpoint = _scheme_checkpoint(args, scheme)
        for i, n in enumerate(sizes):
            for r in range(args.repeats):
                seed = args.seed + r
                tasks.append(
                    {
                        "catalog_path": str(data_dir / "catalog.csv"),
                        "image_dir": str(data_dir / "images"),
                        "split_json": split.to_json(),
                        "scheme": name,
                        "size": n,
                        "seed": seed,
                        "subsample": list(nested[seed][i]),
                        "checkpoint": str(checkpoint) if checkpoint else None,
                        "backbone": args.backbone,
                        "run_dir": str(out / experiment / scheme.name / str(n) / str(seed)),
                        "threads": args.threads,
                    }
                )

    outcomes: list[tuple[str, int, int, float]] = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_curve_point, tasks))
    else:
        outcomes = [_curve_point(t) for t in tasks]

    curves = []
    for name in schemes:
        scheme = trainer.scheme_preset(name, low_data=True)
        points = []
        for n in sizes:
            values = [m for s, size, _, m in outcomes if s == name and size == n]
            points.append((n, evaluator.AggregateMetric.from_values(values)))
        curves.append(evaluator.LearningCurve(scheme=scheme.name, points=tuple(points)))
    csv_path, png_path = evaluator.render_curves(curves, out / experiment)
    split.save(out / experiment / "split.json")
    _write_snapshot(out / experiment, args, [data_dir / "catalog.csv"])
    print(f"wrote {csv_path} and {png_path}")
    return 0


def cmd_project(args) -> int:
    _set_threads(args)
    data_dir = _data_dir(args.data)
    data = catalog.load_dataset(data_dir / "catalog.csv", data_dir / "images")
    model, meta = netspec.load_checkpoint(Path(args.checkpoint))
    ids = list(data.ids)
    if args.sample and args.sample < len(ids):
        rng = np.random.default_rng(args.seed)
        keep = rng.permutation(len(ids))[: args.sample]
    else:
        keep = np.arange(len(ids))
    features = netspec.extract_features(model, data.images[keep])
    labels = None
    if data.labels is not None:
        labels = [data.class_names[c] for c in data.labels[keep]]
    projection = evaluator.project_features(
        features,
        perplexity=args.perplexity,
        seed=args.seed,
        labels=labels,
        ids=[ids[i] for i in keep],
    )
    out = Path(args.out)
    csv_path, png_path = evaluator.save_projection(projection, out)
    _write_snapshot(out, args, [data_dir / "catalog.csv", Path(args.checkpoint) / "model.json"])
    print(f"wrote {csv_path} and {png_path} (provenance: {meta.provenance})")
    return 0


def cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    out_dir = Path(args.out) if args.out else runs_dir
    report = evaluator.render_report(runs_dir, out_dir=out_dir)
    _write_snapshot(out_dir, args, [])
    print(report.txt_path.read_text())
    if not report.complete:
        print("report incomplete: some cells have no finished runs", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="astropretext",
        description="Self-supervised magnitude pretraining and transfer benchmarks.",
    )
    parser.add_argument("--config", help="JSON config file; explicit flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, data: bool = True) -> None:
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=False, help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="max parallel runs (curve only)")
        p.add_argument("--backbone", choices=("vgg16", "tiny"), default="tiny")
        p.add_argument("--threads", type=int, default=None, help="torch CPU threads")
        if data:
            p.add_argument("--data", help=f"dataset dir (default: ${DATA_ROOT_ENV})")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, data=False)
    p.add_argument("--classes", required=True, help="e.g. star:500,galaxy:500")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--sky", type=float, default=0.0, help="sky level (counts/pixel)")
    p.add_argument("--gain", type=float, default=None, help="noise gain; omit for noiseless")
    p.add_argument("--stretch", type=float, default=synthgen.DEFAULT_STRETCH)
    p.add_argument("--q", type=float, default=synthgen.DEFAULT_Q)
    p.add_argument("--unlabeled", action="store_true", help="write empty labels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train the magnitude-regression pretext model")
    common(p)
    p.add_argument("--threshold", type=float, default=0.1, help="max magnitude uncertainty")
    p.add_argument("--exclude", help="catalog CSV or split JSON whose ids to exclude")
    p.add_argument(
        "--exclude-labeled", action="store_true", help="drop rows that carry a label"
    )
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--patience", type=int, default=10)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train one downstream scheme")
    common(p)
    p.add_argument("--scheme", required=True, help=f"one of {trainer.SCHEME_PRESET_NAMES}")
    p.add_argument("--checkpoint", help="magnitudes checkpoint dir")
    p.add_argument("--imagenet-checkpoint", help="externally supplied checkpoint dir")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--subsample", type=int, default=None, help="train on N samples")
    p.add_argument("--repeats", type=int, default=1, help="runs at seed, seed+1, ...")
    p.add_argument("--experiment", help="run directory name (default: dataset name)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("curve", help="run the low-data curriculum")
    common(p)
    p.add_argument("--schemes", required=True, help="comma-separated scheme presets")
    p.add_argument("--checkpoint", help="magnitudes checkpoint dir")
    p.add_argument("--imagenet-checkpoint", help="externally supplied checkpoint dir")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--max-n", type=int, default=None, help="largest training size")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--experiment", help="run directory name (default: dataset name)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("project", help="export a 2-D feature projection")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint dir")
    p.add_argument("--perplexity", type=float, default=50.0)
    p.add_argument("--sample", type=int, default=2000, help="rows to project")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("report", help="aggregate finished runs into report files")
    common(p, data=False)
    p.add_argument("--runs", required=True, help="runs directory to aggregate")
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    config_path = Path(args.config)
    if not config_path.is_file():
        raise UsageError(f"config file {config_path} not found")
    overrides = json.loads(config_path.read_text())
    if not isinstance(overrides, dict):
        raise UsageError(f"{config_path}: config must be a JSON object")
    # flags given explicitly on the command line win over the file
    given = {a.lstrip("-").split("=")[0].replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in vars(args):
            raise UsageError(f"{config_path}: unknown config key {key!r}")
        if attr not in given and attr != "config":
            setattr(args, attr, value)
    return args


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _apply_config_file(parser, list(argv) if argv is not None else sys.argv[1:])
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not getattr(args, "out", None) and args.command != "report":
        print("error: --out is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
