"""Synthetic sky rendering with analytically known per-band photometry.

Stands in for survey imagery that cannot be redistributed: sources are
drawn with known per-band fluxes, rendered onto 12-plane images, optionally
degraded with Poisson noise, composed into RGB cutouts, and written in the
exact catalog/PNG formats the :mod:`astropretext.catalog` module reads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from . import catalog
from .catalog import BANDS, N_BANDS, CatalogEntry, MagnitudeVector

#: Magnitude of a unit-flux source, per band.
DEFAULT_ZERO_POINT = 20.0

#: Flux ratio corresponding to a magnitude difference of 1 (100**0.2).
FLUX_RATIO_PER_MAG = 100.0 ** 0.2

SOURCE_KINDS = ("star", "elliptical-galaxy", "spiral-galaxy")

#: Profiles are cut off at this many effective radii (or PSF sigmas).
TRUNCATION_RADII = 5.0

# Half-light shape constants for the exponential (n=1) and de
# Vaucouleurs-like (n=4) radial laws.
_SERSIC_B1 = 1.6783
_SERSIC_B4 = 7.6693


def default_zero_points() -> np.ndarray:
    return np.full(N_BANDS, DEFAULT_ZERO_POINT)


def flux_to_magnitude(flux, zero_point):
    """Magnitude of a flux given the band zero point: ``zp - 2.5*log10(flux)``.

    A flux ratio of 100**(1/5) between two sources is exactly one
    magnitude; lower magnitudes are brighter. Accepts scalars or arrays.
    """
    flux = np.asarray(flux, dtype=np.float64)
    if np.any(flux <= 0):
        raise ValueError("flux must be positive")
    out = np.asarray(zero_point, dtype=np.float64) - 2.5 * np.log10(flux)
    return float(out) if out.ndim == 0 else out


def magnitude_to_flux(magnitude, zero_point):
    """Inverse of :func:`flux_to_magnitude`: ``10**((zp - m)/2.5)``."""
    m = np.asarray(magnitude, dtype=np.float64)
    out = 10.0 ** ((np.asarray(zero_point, dtype=np.float64) - m) / 2.5)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SourceParams:
    """Parameters of one renderable source.

    ``fluxes`` are linear per-band counts. Stars use ``psf_sigma``;
    galaxies use effective radius, axis ratio and position angle, with
    ``arm_count``/``arm_twist`` adding spiral modulation.
    """

    kind: str
    center: tuple[float, float]  # (x, y) pixels
    fluxes: tuple[float, ...]
    psf_sigma: float = 1.5
    r_effective: float = 2.5
    axis_ratio: float = 1.0
    position_angle: float = 0.0
    arm_count: int = 2
    arm_twist: float = 3.0

    def __post_init__(self) -> None:
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if len(self.fluxes) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} fluxes")
        if any(f <= 0 for f in self.fluxes):
            raise ValueError("fluxes must be positive")
        if self.psf_sigma <= 0 or self.r_effective <= 0:
            raise ValueError("shape scales must be positive")
        if not 0 < self.axis_ratio <= 1:
            raise ValueError("axis ratio must lie in (0, 1]")

    @property
    def truncation_radius(self) -> float:
        scale = self.psf_sigma if self.kind == "star" else self.r_effective
        return TRUNCATION_RADII * scale


@dataclass
class BandImage:
    """A stack of per-band pixel planes; all values are linear counts >= 0."""

    width: int
    height: int
    planes: np.ndarray  # (n_bands, height, width)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("canvas must have positive dimensions")
        if self.planes.shape != (self.planes.shape[0], self.height, self.width):
            raise ValueError("plane shape does not match width/height")
        if np.any(self.planes < 0):
            raise ValueError("pixel counts must be non-negative")

    @classmethod
    def zeros(cls, width: int, height: int, n_bands: int = N_BANDS) -> "BandImage":
        return cls(width, height, np.zeros((n_bands, height, width)))

    def copy(self) -> "BandImage":
        return BandImage(self.width, self.height, self.planes.copy())

    def band_sums(self) -> np.ndarray:
        return self.planes.sum(axis=(1, 2))


def _unit_profile(params: SourceParams, width: int, height: int) -> np.ndarray:
    """Truncated radial profile on the canvas grid, normalized to unit total.

    Normalization uses the full truncated profile, including any part that
    falls outside the canvas, so a source well inside the frame deposits
    its whole flux.
    """
    cx, cy = params.center
    rt = params.truncation_radius
    x = np.arange(width) - cx
    y = np.arange(height) - cy
    # evaluate on a grid just covering the truncation circle, then embed
    x_full = np.arange(math.floor(cx - rt), math.ceil(cx + rt) + 1) - cx
    y_full = np.arange(math.floor(cy - rt), math.ceil(cy + rt) + 1) - cy
    xf, yf = np.meshgrid(x_full, y_full)

    if params.kind == "star":
        r2 = xf**2 + yf**2
        prof = np.exp(-0.5 * r2 / params.psf_sigma**2)
        prof[r2 > rt**2] = 0.0
    else:
        pa = params.position_angle
        u = xf * math.cos(pa) + yf * math.sin(pa)
        v = -xf * math.sin(pa) + yf * math.cos(pa)
        r = np.sqrt(u**2 + (v / params.axis_ratio) ** 2)
        scaled = r / params.r_effective
        if params.kind == "elliptical-galaxy":
            prof = np.exp(-_SERSIC_B4 * (np.maximum(scaled, 1e-9) ** 0.25 - 1.0))
        else:
            prof = np.exp(-_SERSIC_B1 * (scaled - 1.0))
            if params.arm_count > 0:
                theta = np.arctan2(v, u)
                winding = theta - params.arm_twist * np.log(np.maximum(scaled, 1e-3))
                prof = prof * (1.0 + 0.6 * np.cos(params.arm_count * winding))
        prof[scaled > TRUNCATION_RADII] = 0.0

    total = prof.sum()
    if total <= 0:
        raise ValueError("profile has no flux inside the truncation radius")
    prof /= total

    # embed the window back into canvas coordinates, cropping overhang
    out = np.zeros((height, width))
    x0, y0 = math.floor(cx - rt), math.floor(cy - rt)
    xs0, ys0 = max(0, -x0), max(0, -y0)
    xd0, yd0 = max(0, x0), max(0, y0)
    w = min(width - xd0, prof.shape[1] - xs0)
    h = min(height - yd0, prof.shape[0] - ys0)
    if w > 0 and h > 0:
        out[yd0 : yd0 + h, xd0 : xd0 + w] = prof[ys0 : ys0 + h, xs0 : xs0 + w]
    return out


def render_source(params: SourceParams, canvas: BandImage) -> BandImage:
    """Return a copy of ``canvas`` with the source's flux added per band.

    The deposited flux in each band equals the requested flux up to the
    profile truncation (within 1% for sources well inside the frame).
    """
    cx, cy = params.center
    if not (0 <= cx < canvas.width and 0 <= cy < canvas.height):
        raise ValueError(f"center {params.center} outside canvas")
    profile = _unit_profile(params, canvas.width, canvas.height)
    fluxes = np.asarray(params.fluxes)
    out = canvas.copy()
    out.planes = out.planes + fluxes[:, None, None] * profile[None, :, :]
    return out


def add_noise(
    image: BandImage, sky_level: float, gain: float, seed: int
) -> tuple[BandImage, np.ndarray]:
    """Apply seeded Poisson noise and estimate per-band magnitude errors.

    Photons are drawn as Poisson((pixel + sky) * gain) / gain - sky, then
    clipped at zero. The returned uncertainties propagate the shot noise
    of the noiseless frame: dm = (2.5/ln 10) * df / f with
    df = sqrt((f + npix*sky) / gain). An infinite gain is the noiseless
    limit: the image is returned unchanged with zero uncertainties.
    """
    if sky_level < 0:
        raise ValueError("sky level must be non-negative")
    if not gain > 0:
        raise ValueError("gain must be positive")
    flux = image.band_sums()
    if math.isinf(gain):
        return image.copy(), np.zeros(N_BANDS)
    npix = image.width * image.height
    dflux = np.sqrt((flux + npix * sky_level) / gain)
    with np.errstate(divide="ignore"):  # a fluxless band has no defined error
        uncertainties = (2.5 / math.log(10.0)) * dflux / flux
    rng = np.random.default_rng(seed)
    lam = (image.planes + sky_level) * gain
    noisy = rng.poisson(lam).astype(np.float64) / gain - sky_level
    noisy = np.maximum(noisy, 0.0)
    return BandImage(image.width, image.height, noisy), uncertainties


#: Band indices feeding each RGB channel (wavelength-ordered thirds).
DEFAULT_BAND_MAP: dict[str, tuple[int, ...]] = {
    "b": (0, 1, 2, 3, 4),
    "g": (5, 6, 7),
    "r": (8, 9, 10, 11),
}

DEFAULT_STRETCH = 0.1
DEFAULT_Q = 5.0


def compose_rgb(
    image: BandImage,
    band_map: Mapping[str, Sequence[int]] | None = None,
    stretch: float = DEFAULT_STRETCH,
    q: float = DEFAULT_Q,
) -> np.ndarray:
    """Arcsinh-compose band planes into an (H, W, 3) float image in [0, 1].

    Each channel averages its mapped bands; with I the channel mean, every
    channel is scaled by asinh(q*I/stretch)/(q*I) (limit 1/stretch at
    I -> 0), then pixels whose largest channel exceeds 1 are divided by
    that maximum so hue is preserved. Output is monotone in input flux.
    """
    if not stretch > 0 or not q > 0:
        raise ValueError("stretch and q must be positive")
    band_map = dict(band_map or DEFAULT_BAND_MAP)
    for key in ("r", "g", "b"):
        if key not in band_map:
            raise ValueError(f"band map missing channel {key!r}")
    channels = np.stack(
        [image.planes[list(band_map[key])].mean(axis=0) for key in ("r", "g", "b")],
        axis=-1,
    )
    intensity = channels.mean(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.arcsinh(q * intensity / stretch) / (q * intensity)
    scale = np.where(intensity > 0, scale, 1.0 / stretch)
    scaled = channels * scale[..., None]
    peak = scaled.max(axis=-1)
    scaled = scaled / np.maximum(peak, 1.0)[..., None]
    return np.clip(scaled, 0.0, 1.0)


def rgb_to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


# Per-class appearance: color offsets are magnitudes added to the drawn
# reference magnitude per band (positive = fainter in that band), chosen so
# stars run blue and galaxies red with the narrow bands tracking their
# neighbours. Values are fixed so generated datasets are comparable across
# machines; the manifest records them.
CLASS_COLOR_OFFSETS: dict[str, tuple[float, ...]] = {
    "star": (0.10, 0.10, 0.05, 0.05, 0.00, 0.00, 0.05, 0.15, 0.25, 0.35, 0.45, 0.50),
    "spiral-galaxy": (0.50, 0.46, 0.42, 0.38, 0.30, 0.22, 0.18, 0.15, 0.12, 0.15, 0.18, 0.22),
    "elliptical-galaxy": (0.85, 0.78, 0.70, 0.62, 0.52, 0.40, 0.30, 0.22, 0.15, 0.12, 0.10, 0.10),
}

#: Reference-magnitude range and per-band scatter for generated objects.
DEFAULT_MAG_RANGE = (15.0, 18.0)
DEFAULT_COLOR_SCATTER = 0.12

#: Shape parameter ranges objects are drawn from (uniform).
STAR_SIGMA_RANGE = (1.2, 1.8)
GALAXY_RADIUS_RANGE = (1.2, 2.6)
GALAXY_AXIS_RATIO_RANGE = (0.45, 0.95)

#: Sources land anywhere within this fraction of the frame around its
#: center, mimicking the centering scatter of survey cutouts.
CENTER_JITTER_FRACTION = 0.2

#: How generator class names map onto renderable morphologies. "galaxy"
#: alternates between the two galaxy kinds per object.
GENERATOR_CLASSES = ("star", "galaxy", "spiral", "elliptical")


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs for :func:`generate_dataset`, with desk-scale defaults."""

    image_size: int = 64
    zero_points: tuple[float, ...] = tuple([DEFAULT_ZERO_POINT] * N_BANDS)
    mag_range: tuple[float, float] = DEFAULT_MAG_RANGE
    color_scatter: float = DEFAULT_COLOR_SCATTER
    color_offsets: Mapping[str, tuple[float, ...]] | None = None
    sky_level: float = 0.0
    gain: float = math.inf
    stretch: float = DEFAULT_STRETCH
    q: float = DEFAULT_Q
    labeled: bool = True

    def __post_init__(self) -> None:
        if self.image_size < 16:
            raise ValueError("image size below 16 cannot resolve the profiles")
        if len(self.zero_points) != N_BANDS:
            raise ValueError(f"expected {N_BANDS} zero points")


def _draw_source(
    class_name: str, rng: np.random.Generator, config: GeneratorConfig
) -> tuple[SourceParams, str]:
    """Sample one object of the class; returns its params and morphology."""
    if class_name == "star":
        kind = "star"
    elif class_name == "spiral":
        kind = "spiral-galaxy"
    elif class_name == "elliptical":
        kind = "elliptical-galaxy"
    elif class_name == "galaxy":
        kind = "spiral-galaxy" if rng.random() < 0.5 else "elliptical-galaxy"
    else:
        raise ValueError(f"unknown class {class_name!r}; known: {GENERATOR_CLASSES}")

    lo, hi = config.mag_range
    m_ref = rng.uniform(lo, hi)
    offsets = np.asarray((config.color_offsets or CLASS_COLOR_OFFSETS)[kind])
    mags = m_ref + offsets + rng.normal(0.0, config.color_scatter, N_BANDS)
    fluxes = magnitude_to_flux(mags, np.asarray(config.zero_points))

    size = config.image_size
    jitter = size * CENTER_JITTER_FRACTION
    center = (
        size / 2 + rng.uniform(-jitter, jitter),
        size / 2 + rng.uniform(-jitter, jitter),
    )
    if kind == "star":
        params = SourceParams(
            kind=kind, center=center, fluxes=tuple(fluxes), psf_sigma=rng.uniform(*STAR_SIGMA_RANGE)
        )
    else:
        params = SourceParams(
            kind=kind,
            center=center,
            fluxes=tuple(fluxes),
            r_effective=rng.uniform(*GALAXY_RADIUS_RANGE),
            axis_ratio=rng.uniform(*GALAXY_AXIS_RATIO_RANGE),
            position_angle=rng.uniform(0.0, math.pi),
            arm_count=int(rng.integers(2, 4)) if kind == "spiral-galaxy" else 0,
            arm_twist=rng.uniform(2.0, 5.0),
        )
    return params, kind


@dataclass
class GeneratedDataset:
    """Where a generated dataset landed and what it contains."""

    out_dir: Path
    catalog_path: Path
    image_dir: Path
    manifest_path: Path
    entries: list[CatalogEntry]


def generate_dataset(
    class_counts: Mapping[str, int],
    out_dir: str | Path,
    seed: int = 0,
    config: GeneratorConfig | None = None,
) -> GeneratedDataset:
    """Render a dataset of ``class_counts`` objects to ``out_dir``.

    Writes ``catalog.csv``, an ``images/`` directory of PNG cutouts and a
    ``dataset_manifest.json``. Catalog magnitudes are the exact photometry
    of the noiseless render (flux integrated before noise), so they serve
    as ground truth for the regression task. Each object owns a PRNG
    stream spawned from (seed, object index); output is byte-identical
    for identical arguments.
    """
    config = config or GeneratorConfig()
    for name, count in class_counts.items():
        if count < 1:
            raise ValueError(f"class {name!r} needs a positive count")
        if name not in GENERATOR_CLASSES:
            raise ValueError(f"unknown class {name!r}; known: {GENERATOR_CLASSES}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)

    zp = np.asarray(config.zero_points)
    streams = np.random.SeedSequence(seed).spawn(sum(class_counts.values()))
    entries: list[CatalogEntry] = []
    index = 0
    for class_name, count in class_counts.items():
        for k in range(count):
            rng = np.random.default_rng(streams[index])
            params, kind = _draw_source(class_name, rng, config)
            canvas = BandImage.zeros(config.image_size, config.image_size)
            clean = render_source(params, canvas)
            true_mags = flux_to_magnitude(clean.band_sums(), zp)
            noise_seed = int(rng.integers(0, 2**31 - 1))
            noisy, uncertainties = add_noise(clean, config.sky_level, config.gain, noise_seed)
            rgb = compose_rgb(noisy, stretch=config.stretch, q=config.q)

            obj_id = f"{class_name}-{k:05d}"
            entry = CatalogEntry(
                id=obj_id,
                ra=float(rng.uniform(0.0, 360.0)),
                dec=float(rng.uniform(-90.0, 90.0)),
                magnitudes=MagnitudeVector(
                    tuple(float(m) for m in true_mags),
                    tuple(float(u) for u in uncertainties),
                ),
                label=class_name if config.labeled else None,
            )
            entries.append(entry)
            Image.fromarray(rgb_to_uint8(rgb)).save(image_dir / f"{obj_id}.png")
            index += 1

    catalog_path = out_dir / "catalog.csv"
    catalog.write_catalog(entries, catalog_path)
    manifest = {
        "seed": seed,
        "image_size": config.image_size,
        "class_counts": dict(class_counts),
        "zero_points": list(config.zero_points),
        "mag_range": list(config.mag_range),
        "color_scatter": config.color_scatter,
        "class_color_offsets": {
            k: list(v) for k, v in (config.color_offsets or CLASS_COLOR_OFFSETS).items()
        },
        "sky_level": config.sky_level,
        "gain": None if math.isinf(config.gain) else config.gain,
        "stretch": config.stretch,
        "q": config.q,
        "labeled": config.labeled,
        "bands": list(BANDS),
    }
    manifest_path = out_dir / "dataset_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return GeneratedDataset(out_dir, catalog_path, image_dir, manifest_path, entries)
