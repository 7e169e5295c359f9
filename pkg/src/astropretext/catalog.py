"""Catalog ingestion, filtering, deterministic splits and subsampling.

A catalog is a flat CSV with one row per object: identifier, sky position,
twelve per-band magnitudes with uncertainties, and an optional class label.
Images live next to it as 8-bit RGB PNG files named ``<id>.png``, all with
the same square dimensions.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

#: Passband names in wavelength order. Broad bands are the ugriz system,
#: the f--- bands are the narrow filters in between.
BANDS = ("u", "f378", "f395", "f410", "f430", "g", "f515", "r", "f660", "i", "f861", "z")
N_BANDS = len(BANDS)

#: Divisor that maps survey magnitudes into [0, 1] regression targets.
MAGNITUDE_SCALE = 30.0

#: Sanity bounds for magnitude values. Wider than typical survey values to
#: admit faint outliers without rejecting real rows.
MAG_MIN = 0.0
MAG_MAX = 40.0

CATALOG_COLUMNS: tuple[str, ...] = (
    ("id", "ra", "dec")
    + tuple(col for band in BANDS for col in (band, f"{band}_err"))
    + ("label",)
)


class CatalogFormatError(ValueError):
    """The catalog file as a whole is unusable (bad header, no valid rows)."""


@dataclass(frozen=True)
class MagnitudeVector:
    """Per-band magnitudes and their uncertainties for one object.

    Both tuples hold exactly one value per entry of :data:`BANDS`, in band
    order. Magnitudes must fall inside the sanity bounds and uncertainties
    must be non-negative.
    """

    values: tuple[float, ...]
    uncertainties: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != N_BANDS or len(self.uncertainties) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} magnitudes and uncertainties")
        for v in self.values:
            if not np.isfinite(v) or not (MAG_MIN <= v <= MAG_MAX):
                raise ValueError(f"magnitude {v} outside sane range [{MAG_MIN}, {MAG_MAX}]")
        for u in self.uncertainties:
            if not np.isfinite(u) or u < 0.0:
                raise ValueError(f"uncertainty {u} must be non-negative")

    def max_uncertainty(self) -> float:
        return max(self.uncertainties)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class CatalogEntry:
    """One catalog row: identifier, position, photometry, optional label."""

    id: str
    ra: float
    dec: float
    magnitudes: MagnitudeVector
    label: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("entry id must be non-empty")
        if not (0.0 <= self.ra < 360.0):
            raise ValueError(f"ra {self.ra} outside [0, 360)")
        if not (-90.0 <= self.dec <= 90.0):
            raise ValueError(f"dec {self.dec} outside [-90, 90]")


@dataclass(frozen=True)
class DatasetDescriptor:
    """Names a dataset, its task kind and (for classification) class schema.

    ``classes`` pairs class names with the object counts expected for the
    named benchmark datasets; user-supplied data is validated against them
    with a warning on mismatch.
    """

    name: str
    task: str  # "classification" | "regression"
    classes: tuple[tuple[str, int], ...] = ()
    image_dir: str | None = None
    catalog_path: str | None = None

    def __post_init__(self) -> None:
        if self.task not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.task!r}")
        if self.task == "classification" and not self.classes:
            raise ValueError("classification descriptor needs class names")

    @property
    def class_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.classes)

    @property
    def total_count(self) -> int:
        return sum(count for _, count in self.classes)

    def validate_counts(self, entries: Sequence[CatalogEntry]) -> list[str]:
        """Compare per-class counts against the expected schema.

        Returns warning strings (also logged); mismatches are not fatal.
        """
        warnings: list[str] = []
        actual: dict[str, int] = {}
        for e in entries:
            if e.label:
                actual[e.label] = actual.get(e.label, 0) + 1
        for name, expected in self.classes:
            got = actual.pop(name, 0)
            if got != expected:
                warnings.append(f"{self.name}: class {name!r} has {got} objects, expected {expected}")
        for name, got in sorted(actual.items()):
            warnings.append(f"{self.name}: unexpected class {name!r} with {got} objects")
        for w in warnings:
            logger.warning(w)
        return warnings


#: Benchmark dataset schemas, keyed by short name.
PRESET_DESCRIPTORS: dict[str, DatasetDescriptor] = {
    "SG": DatasetDescriptor("SG", "classification", (("Stars", 27981), ("Galaxies", 22109))),
    "SGQ": DatasetDescriptor(
        "SGQ", "classification", (("Stars", 18000), ("Galaxies", 18000), ("Quasars", 18000))
    ),
    "MG": DatasetDescriptor("MG", "classification", (("Merging", 5778), ("Non-interacting", 9988))),
    "EF-2": DatasetDescriptor("EF-2", "classification", (("Elliptical", 289), ("Spiral", 3315))),
    "EF-4": DatasetDescriptor(
        "EF-4",
        "classification",
        (("Elliptical", 289), ("Spiral", 3315), ("Lenticular", 537), ("Irregular", 248)),
    ),
    "EF-15": DatasetDescriptor(
        "EF-15",
        "classification",
        (
            ("Elliptical:-5", 227),
            ("Spiral:0", 196),
            ("Spiral:1", 257),
            ("Spiral:2", 219),
            ("Spiral:3", 517),
            ("Spiral:4", 472),
            ("Spiral:5", 303),
            ("Spiral:6", 448),
            ("Spiral:7", 285),
            ("Spiral:8", 355),
            ("Spiral:9", 263),
            ("Lenticular:-3", 189),
            ("Lenticular:-2", 196),
            ("Lenticular:-1", 152),
            ("Irregular:10", 248),
        ),
    ),
}


@dataclass(frozen=True)
class Split:
    """Disjoint train/validation/test id partitions plus the seed that made them."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "train": list(self.train), "val": list(self.val), "test": list(self.test)},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "Split":
        d = json.loads(text)
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Split":
        return cls.from_json(Path(path).read_text())


def _parse_row(row: dict[str, str], line_no: int) -> CatalogEntry:
    values = []
    uncertainties = []
    for band in BANDS:
        values.append(float(row[band]))
        uncertainties.append(float(row[f"{band}_err"]))
    label = (row.get("label") or "").strip()
    return CatalogEntry(
        id=row["id"].strip(),
        ra=float(row["ra"]),
        dec=float(row["dec"]),
        magnitudes=MagnitudeVector(tuple(values), tuple(uncertainties)),
        label=label or None,
    )


def load_catalog(
    path: str | Path,
    image_dir: str | Path | None = None,
    check_images: bool = True,
) -> list[CatalogEntry]:
    """Read a catalog CSV into entries, in file order.

    Malformed rows (bad numbers, negative uncertainties, out-of-range
    coordinates, duplicate ids) are dropped with a warning naming the line
    number. When ``image_dir`` is given, entries whose ``<id>.png`` is
    missing are dropped the same way. Raises :class:`CatalogFormatError`
    when a required column is absent or no row survives.
    """
    path = Path(path)
    entries: list[CatalogEntry] = []
    seen: set[str] = set()
    n_rows = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CATALOG_COLUMNS if c not in header]
        if missing:
            raise CatalogFormatError(f"{path}: missing required columns {missing}")
        for line_no, row in enumerate(reader, start=2):
            n_rows += 1
            try:
                entry = _parse_row(row, line_no)
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("%s:%d: dropped row (%s)", path, line_no, exc)
                continue
            if entry.id in seen:
                logger.warning("%s:%d: dropped row (duplicate id %r)", path, line_no, entry.id)
                continue
            if image_dir is not None and check_images:
                img = Path(image_dir) / f"{entry.id}.png"
                if not img.is_file():
                    logger.warning("%s:%d: dropped row (missing image %s)", path, line_no, img)
                    continue
            seen.add(entry.id)
            entries.append(entry)
    if n_rows > 0 and not entries:
        raise CatalogFormatError(f"{path}: no valid rows out of {n_rows}")
    return entries


def write_catalog(entries: Iterable[CatalogEntry], path: str | Path) -> None:
    """Write entries to CSV in the canonical column order.

    Float formatting is fixed so identical inputs produce byte-identical
    files.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_COLUMNS)
        for e in entries:
            row: list[str] = [e.id, f"{e.ra:.6f}", f"{e.dec:.6f}"]
            for v, u in zip(e.magnitudes.values, e.magnitudes.uncertainties):
                row.append(f"{v:.4f}")
                row.append(f"{u:.4f}")
            row.append(e.label or "")
            writer.writerow(row)


def filter_by_uncertainty(
    entries: Sequence[CatalogEntry], threshold: float = 0.1
) -> list[CatalogEntry]:
    """Keep entries whose twelve uncertainties are all at or below ``threshold``.

    Threshold 0 keeps only exact-zero uncertainties (noiseless oracles);
    negative thresholds are rejected.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    return [e for e in entries if e.magnitudes.max_uncertainty() <= threshold]


def exclude_labeled(entries: Sequence[CatalogEntry], labeled_ids: Iterable[str]) -> list[CatalogEntry]:
    """Drop entries whose id appears in ``labeled_ids``.

    Used before pretraining so objects reserved for downstream tasks never
    leak into the pretext set.
    """
    labeled = set(labeled_ids)
    return [e for e in entries if e.id not in labeled]


def _entry_ids(entries_or_ids: Sequence) -> list[str]:
    return [e.id if isinstance(e, CatalogEntry) else str(e) for e in entries_or_ids]


def make_split(
    entries: Sequence,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> Split:
    """Partition entries (or plain ids) into train/val/test.

    Ids are shuffled by a PCG64 generator seeded with ``seed`` (fixed
    across platforms), then sliced by cumulative ratios with floor
    rounding; leftover elements go to train first, then val, then test.
    Same inputs always give the same split, and the seed never changes the
    sizes.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios {ratios} must sum to 1")
    ids = _entry_ids(entries)
    n = len(ids)
    if n < 3:
        raise ValueError(f"need at least 3 entries to populate all splits, got {n}")
    if len(set(ids)) != n:
        raise ValueError("duplicate ids in input")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    shuffled = [ids[i] for i in order]
    counts = [int(np.floor(r * n)) for r in ratios]
    for i in range(n - sum(counts)):
        counts[i % 3] += 1
    train = tuple(shuffled[: counts[0]])
    val = tuple(shuffled[counts[0] : counts[0] + counts[1]])
    test = tuple(shuffled[counts[0] + counts[1] :])
    return Split(train=train, val=val, test=test, seed=seed)


def scale_magnitudes(values) -> np.ndarray:
    """Map raw magnitudes into [0, 1] regression targets (divide by 30)."""
    return np.asarray(values, dtype=np.float64) / MAGNITUDE_SCALE


def unscale_magnitudes(values) -> np.ndarray:
    """Inverse of :func:`scale_magnitudes` (multiply by 30)."""
    return np.asarray(values, dtype=np.float64) * MAGNITUDE_SCALE


def stratified_allocation(counts: Sequence[int], n: int) -> list[int]:
    """Apportion ``n`` draws across classes by largest remainder.

    ``counts`` are the available per-class pool sizes; the result is
    proportional to them, sums to ``n``, and never exceeds a pool.
    """
    total = sum(counts)
    if n > total:
        raise ValueError(f"cannot draw {n} from {total} available")
    quotas = [n * c / total for c in counts]
    alloc = [int(np.floor(q)) for q in quotas]
    remainders = [q - a for q, a in zip(quotas, alloc)]
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    short = n - sum(alloc)
    for i in order:
        if short == 0:
            break
        if alloc[i] < counts[i]:
            alloc[i] += 1
            short -= 1
    # pools can cap a class below its quota; spill the difference greedily
    i = 0
    while short > 0:
        if alloc[order[i % len(order)]] < counts[order[i % len(order)]]:
            alloc[order[i % len(order)]] += 1
            short -= 1
        i += 1
    return alloc


def _class_pools(
    train_ids: Sequence[str], labels: Mapping[str, str], seed: int
) -> dict[str, list[str]]:
    """Per-class id lists in a seeded shuffle order (prefixes are the draws)."""
    by_class: dict[str, list[str]] = {}
    for i in train_ids:
        by_class.setdefault(labels[i], []).append(i)
    rng = np.random.default_rng(seed)
    pools: dict[str, list[str]] = {}
    for name in sorted(by_class):
        members = by_class[name]
        order = rng.permutation(len(members))
        pools[name] = [members[j] for j in order]
    return pools


def subsample_training(
    split: Split,
    n: int,
    seed: int,
    labels: Mapping[str, str] | None = None,
) -> tuple[str, ...]:
    """Draw ``n`` training ids, deterministically for a given seed.

    With ``labels`` (id -> class name) the draw is stratified: class
    allocations follow largest-remainder apportionment of the train-split
    class proportions, and members are prefixes of a per-class seeded
    shuffle. Without labels the draw is a uniform shuffle prefix. Only the
    train split is touched.
    """
    if not 1 <= n <= len(split.train):
        raise ValueError(f"n={n} outside [1, {len(split.train)}]")
    if labels is None:
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(split.train))
        return tuple(split.train[i] for i in order[:n])
    missing = [i for i in split.train if i not in labels]
    if missing:
        raise ValueError(f"{len(missing)} train ids have no label (e.g. {missing[0]!r})")
    pools = _class_pools(split.train, labels, seed)
    names = sorted(pools)
    alloc = stratified_allocation([len(pools[c]) for c in names], n)
    picked: list[str] = []
    for name, k in zip(names, alloc):
        picked.extend(pools[name][:k])
    return tuple(picked)


def nested_subsamples(
    split: Split,
    sizes: Sequence[int],
    seed: int,
    labels: Mapping[str, str] | None = None,
) -> list[tuple[str, ...]]:
    """Subsamples for increasing sizes where each contains the previous.

    Stratified draws are grown incrementally: at each size the shortfall
    against the proportional quota is apportioned by largest remainder, so
    class balance stays within one element of proportional while nesting
    is guaranteed. Unlabeled draws are shuffle prefixes, nested trivially.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be strictly increasing")
    if labels is None:
        full = subsample_training(split, sizes[-1], seed)
        return [tuple(full[:n]) for n in sizes]
    pools = _class_pools(split.train, labels, seed)
    names = sorted(pools)
    pool_sizes = [len(pools[c]) for c in names]
    total = sum(pool_sizes)
    taken = [0] * len(names)
    out: list[tuple[str, ...]] = []
    for n in sizes:
        if n > total:
            raise ValueError(f"n={n} outside [1, {total}]")
        deficits = [max(0.0, n * p / total - t) for p, t in zip(pool_sizes, taken)]
        room = [p - t for p, t in zip(pool_sizes, taken)]
        extra = [min(int(np.floor(d)), r) for d, r in zip(deficits, room)]
        remainders = [d - e for d, e in zip(deficits, extra)]
        order = sorted(range(len(names)), key=lambda i: (-remainders[i], i))
        short = n - sum(taken) - sum(extra)
        i = 0
        while short > 0:
            j = order[i % len(order)]
            if extra[j] < room[j]:
                extra[j] += 1
                short -= 1
            i += 1
        taken = [t + e for t, e in zip(taken, extra)]
        picked: list[str] = []
        for name, k in zip(names, taken):
            picked.extend(pools[name][:k])
        out.append(tuple(picked))
    return out


def load_image(path: str | Path) -> np.ndarray:
    """Read one PNG as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def load_image_array(
    image_dir: str | Path, ids: Sequence[str], expected_size: int | None = None
) -> np.ndarray:
    """Read ``<id>.png`` for every id into an (N, H, W, 3) float32 array.

    All images must be square and share one size; ``expected_size`` pins
    it explicitly.
    """
    image_dir = Path(image_dir)
    images = []
    size = expected_size
    for i in ids:
        arr = load_image(image_dir / f"{i}.png")
        h, w = arr.shape[:2]
        if h != w:
            raise ValueError(f"{i}.png is {w}x{h}, expected square")
        if size is None:
            size = h
        elif h != size:
            raise ValueError(f"{i}.png is {h}px, expected {size}px")
        images.append(arr)
    if not images:
        raise ValueError("no ids given")
    return np.stack(images)


@dataclass
class ImageDataset:
    """In-memory dataset: aligned ids, images and (optionally) labels.

    ``images`` is (N, H, W, 3) float32 in [0, 1]; ``labels`` are class
    indices into ``class_names``; ``magnitudes`` are raw (unscaled) values.
    """

    name: str
    ids: tuple[str, ...]
    images: np.ndarray
    magnitudes: np.ndarray | None = None
    labels: np.ndarray | None = None
    class_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n = len(self.ids)
        if self.images.shape[0] != n:
            raise ValueError("images misaligned with ids")
        if self.magnitudes is not None and self.magnitudes.shape != (n, N_BANDS):
            raise ValueError("magnitudes misaligned with ids")
        if self.labels is not None and self.labels.shape != (n,):
            raise ValueError("labels misaligned with ids")

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    def label_map(self) -> dict[str, str]:
        if self.labels is None:
            return {}
        return {i: self.class_names[c] for i, c in zip(self.ids, self.labels)}

    def index_of(self, ids: Sequence[str]) -> np.ndarray:
        pos = {i: k for k, i in enumerate(self.ids)}
        try:
            return np.asarray([pos[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"id {exc.args[0]!r} not in dataset {self.name!r}") from None


def load_dataset(
    catalog_path: str | Path,
    image_dir: str | Path,
    name: str | None = None,
    class_names: Sequence[str] | None = None,
) -> ImageDataset:
    """Load a catalog plus its image directory into an :class:`ImageDataset`.

    Class names default to the sorted distinct labels found in the
    catalog; pass ``class_names`` to pin an explicit order.
    """
    entries = load_catalog(catalog_path, image_dir=image_dir)
    ids = tuple(e.id for e in entries)
    images = load_image_array(image_dir, ids)
    mags = np.asarray([e.magnitudes.values for e in entries], dtype=np.float64)
    labeled = [e for e in entries if e.label]
    labels = None
    names: tuple[str, ...] = ()
    if labeled:
        if len(labeled) != len(entries):
            raise ValueError("catalog mixes labeled and unlabeled rows; split it first")
        names = tuple(class_names) if class_names else tuple(sorted({e.label for e in labeled}))
        index = {c: k for k, c in enumerate(names)}
        try:
            labels = np.asarray([index[e.label] for e in entries], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"label {exc.args[0]!r} not in class names {names}") from None
    return ImageDataset(
        name=name or Path(catalog_path).stem,
        ids=ids,
        images=images,
        magnitudes=mags,
        labels=labels,
        class_names=names,
    )
