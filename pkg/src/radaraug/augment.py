"""Physics-guided augmentation of radar object images.

The stages model how an object crop would look at a different range:

* attenuation - object pixels follow a per-class linear dB-vs-range fit
* resolution - cross-range cells widen as ``2 R sin(theta / 2)``
* speckle - multiplicative ``N(1, sigma^2)`` noise on the stored values
* background shift - constant offset applied to non-object pixels only

plus the usual translate/mirror image augmentation, and a seeded batch
driver that replicates every source sample a fixed number of times.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.ndimage import maximum_filter1d

from .errors import (DomainError, EmptySelectionError, InvalidInputError,
                     SingularFitError, UnknownClassError)
from .geometry import FILL_DB, CartesianImage, SensorConfig

DEFAULT_SHIFT_LEVELS = (-6.0, -3.0, 3.0, 6.0)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectMask:
    """Boolean object/background split of an image (True = object)."""

    mask: np.ndarray
    threshold_db: float

    def __post_init__(self):
        m = np.array(self.mask, dtype=bool, copy=True)
        if m.ndim != 2:
            raise InvalidInputError("mask must be 2-D")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def _data(img) -> np.ndarray:
    return img.data if isinstance(img, CartesianImage) else np.asarray(img)


def _check_congruent(img, mask: ObjectMask) -> None:
    if _data(img).shape != mask.mask.shape:
        raise InvalidInputError(
            f"mask shape {mask.mask.shape} does not match image shape {_data(img).shape}")


def segment_threshold(img, threshold: float) -> ObjectMask:
    """Pixels strictly above ``threshold`` dB are object."""
    return ObjectMask(_data(img) > threshold, float(threshold))


def default_threshold(img: CartesianImage, k_sigma: float = 3.0,
                      annulus_fraction: float = 0.1) -> float:
    """Background mean + ``k_sigma`` std, estimated on the farthest range annulus.

    The annulus is the outer ``annulus_fraction`` of the image's span of
    distances from the sensor.
    """
    r = img.ranges()
    lo, hi = float(r.min()), float(r.max())
    sel = r >= hi - annulus_fraction * (hi - lo)
    bg = img.data[sel]
    return float(bg.mean() + k_sigma * bg.std())


def mean_object_power(img, mask: ObjectMask) -> float:
    """Arithmetic mean of the dB values under the mask."""
    _check_congruent(img, mask)
    if not mask.mask.any():
        raise EmptySelectionError("object mask selects no pixels")
    return float(_data(img)[mask.mask].mean())


# ---------------------------------------------------------------------------
# Attenuation model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttenuationFit:
    slope: float        # dB per meter
    intercept: float    # dB
    n_points: int
    rmse: float

    def predict(self, range_m):
        return self.intercept + self.slope * np.asarray(range_m, dtype=float)


def fit_attenuation(samples: Iterable[tuple[float, float]]) -> AttenuationFit:
    """Ordinary least squares of mean object power (dB) against range (m)."""
    pts = np.asarray(list(samples), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise SingularFitError("need at least two (range, power) samples")
    x, y = pts[:, 0], pts[:, 1]
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise SingularFitError("all samples share one range; slope is undetermined")
    slope = float(dx @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return AttenuationFit(slope, intercept, len(pts), rmse)


@dataclass
class AttenuationModel:
    """Per-class attenuation fits, keyed by class label."""

    entries: dict[str, AttenuationFit] = field(default_factory=dict)

    def __contains__(self, label) -> bool:
        return label in self.entries

    def __getitem__(self, label: str) -> AttenuationFit:
        try:
            return self.entries[label]
        except KeyError:
            raise UnknownClassError(f"class {label!r} not in attenuation model") from None

    def slope(self, label: str) -> float:
        return self[label].slope

    @property
    def classes(self) -> list[str]:
        return list(self.entries)

    @classmethod
    def fit(cls, samples: Iterable[tuple[str, float, float]]) -> "AttenuationModel":
        """Fit every class from ``(label, range_m, mean_power_db)`` triples."""
        grouped: dict[str, list[tuple[float, float]]] = {}
        for label, r, p in samples:
            grouped.setdefault(label, []).append((r, p))
        return cls({k: fit_attenuation(v) for k, v in grouped.items()})

    def to_dict(self) -> dict:
        return {k: {"slope_db_per_m": e.slope, "intercept_db": e.intercept,
                    "n_points": e.n_points, "rmse": e.rmse}
                for k, e in self.entries.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "AttenuationModel":
        entries = {}
        for label, e in d.items():
            fit = AttenuationFit(float(e["slope_db_per_m"]), float(e["intercept_db"]),
                                 int(e["n_points"]), float(e["rmse"]))
            if fit.n_points < 2 or fit.rmse < 0:
                raise InvalidInputError(f"invalid attenuation entry for {label!r}")
            entries[label] = fit
        return cls(entries)


# ---------------------------------------------------------------------------
# Range augmentation stages
# ---------------------------------------------------------------------------

def apply_attenuation(img: CartesianImage, mask: ObjectMask, slope: float,
                      r_curr: float, r_new: float) -> CartesianImage:
    """Shift object pixels by ``(r_new - r_curr) * slope``; background untouched."""
    _check_congruent(img, mask)
    if not np.isfinite(slope):
        raise DomainError("slope must be finite")
    r_diff = r_new - r_curr
    data = np.where(mask.mask, img.data + r_diff * slope, img.data)
    return img.with_data(data)


def cross_range_cells(range_m: float, sensor: SensorConfig, mpp: float) -> int:
    """Cross-range cell width at ``range_m`` rounded up to whole pixels."""
    width = sensor.cell_size(range_m) / mpp
    return max(1, math.ceil(width - 1e-9))


def resample_resolution(img: CartesianImage, sensor: SensorConfig, r_curr: float,
                        r_new: float, mask: ObjectMask | None = None) -> CartesianImage:
    """Re-render the object with the cross-range resolution of ``r_new``.

    Each pixel column acts as a scan line whose beam covers a cross-range cell
    of ``ceil(2 r_new sin(theta/2) / mpp)`` pixels; the cell reports its
    strongest object return (nearest-neighbour render, no averaging).  The
    range axis is left alone.  When the new cell is no wider than the current
    one the source already holds all the detail the coarser view could show,
    so the image is returned unchanged.

    Pixels outside the widened object support are bit-identical to the input.
    """
    for name, r in (("r_curr", r_curr), ("r_new", r_new)):
        if not (r > 0 and r <= sensor.max_range):
            raise DomainError(f"{name}={r} outside (0, {sensor.max_range}] m")
    mpp = img.meters_per_pixel
    k_new = cross_range_cells(r_new, sensor, mpp)
    if k_new <= cross_range_cells(r_curr, sensor, mpp):
        return img
    if mask is None:
        mask = segment_threshold(img, default_threshold(img))
    _check_congruent(img, mask)
    obj = np.where(mask.mask, img.data, -np.inf)
    wide = maximum_filter1d(obj, size=k_new, axis=1, mode="constant", cval=-np.inf)
    support = np.isfinite(wide)
    return img.with_data(np.where(support, wide, img.data))


def translate_to_range(img: CartesianImage, r_curr: float, r_new: float) -> CartesianImage:
    """Move the scene along boresight by ``r_new - r_curr`` (lateral offset kept).

    Object crops carry their own georeferencing, so moving the object means
    moving the crop frame; pixel content and background are preserved.
    """
    ox, oy = img.origin
    return CartesianImage(img.data, img.meters_per_pixel, (ox, oy + (r_new - r_curr)), img.sensor)


def synthesize_at_range(img: CartesianImage, label: str, model: AttenuationModel,
                        sensor: SensorConfig, r_curr: float, r_new: float,
                        threshold: float | None = None) -> CartesianImage:
    """Simulate the object of class ``label`` seen at ``r_new`` instead of ``r_curr``.

    segment -> attenuate -> widen cross-range cells -> move along boresight.
    """
    slope = model.slope(label)
    if threshold is None:
        threshold = default_threshold(img)
    mask = segment_threshold(img, threshold)
    out = apply_attenuation(img, mask, slope, r_curr, r_new)
    out = resample_resolution(out, sensor, r_curr, r_new, mask=mask)
    return translate_to_range(out, r_curr, r_new)


# ---------------------------------------------------------------------------
# Noise and photometric stages
# ---------------------------------------------------------------------------

def _check_spread(lo: float, hi: float) -> None:
    if not (0 <= lo <= hi) or not np.isfinite(hi):
        raise DomainError(f"speckle bounds must satisfy 0 <= min <= max, got ({lo}, {hi})")


def draw_speckle_variance(rng: np.random.Generator, sigma_sq_min: float = 0.01,
                          sigma_sq_max: float = 0.15, spread: str = "variance") -> float:
    """Draw the per-image noise variance.

    ``spread="variance"`` samples sigma^2 uniformly in the bounds;
    ``spread="std"`` samples sigma uniformly and returns its square.
    """
    _check_spread(sigma_sq_min, sigma_sq_max)
    v = float(rng.uniform(sigma_sq_min, sigma_sq_max))
    if spread == "variance":
        return v
    if spread == "std":
        return v * v
    raise DomainError(f"unknown speckle spread {spread!r}")


def apply_speckle(img: CartesianImage, rng: np.random.Generator, sigma_sq: float) -> CartesianImage:
    """Multiply every pixel by an independent ``N(1, sigma_sq)`` factor."""
    if not sigma_sq >= 0:
        raise DomainError("sigma_sq must be >= 0")
    factor = rng.normal(1.0, math.sqrt(sigma_sq), size=img.shape)
    return img.with_data(img.data * factor)


def speckle(img: CartesianImage, rng: np.random.Generator, sigma_sq_min: float = 0.01,
            sigma_sq_max: float = 0.15, spread: str = "variance") -> CartesianImage:
    sigma_sq = draw_speckle_variance(rng, sigma_sq_min, sigma_sq_max, spread)
    return apply_speckle(img, rng, sigma_sq)


def background_shift(img: CartesianImage, mask: ObjectMask, delta: float) -> CartesianImage:
    """Add ``delta`` dB to background pixels; object pixels unchanged."""
    _check_congruent(img, mask)
    return img.with_data(np.where(mask.mask, img.data, img.data + delta))


def translate(img: CartesianImage, dx: int, dy: int, fill: float = FILL_DB) -> CartesianImage:
    """Shift content by ``dx`` columns and ``dy`` rows; vacated pixels get ``fill``."""
    dx, dy = int(dx), int(dy)
    rows, cols = img.shape
    out = np.full_like(img.data, fill)
    if abs(dx) < cols and abs(dy) < rows:
        src_r = slice(max(0, -dy), rows - max(0, dy))
        src_c = slice(max(0, -dx), cols - max(0, dx))
        dst_r = slice(max(0, dy), rows - max(0, -dy))
        dst_c = slice(max(0, dx), cols - max(0, -dx))
        out[dst_r, dst_c] = img.data[src_r, src_c]
    return img.with_data(out)


def mirror(img: CartesianImage) -> CartesianImage:
    """Left-right flip."""
    return img.with_data(img.data[:, ::-1])


def standard_augment(img: CartesianImage, rng: np.random.Generator, max_translation: int = 0,
                     mirror_image: bool = False, fill: float = FILL_DB) -> CartesianImage:
    """Random integer translation in ``[-max_translation, max_translation]``,
    preceded by a left-right flip when ``mirror_image`` is set."""
    if max_translation < 0 or max_translation >= min(img.shape):
        raise DomainError("max_translation must be in [0, image size)")
    dx, dy = (int(v) for v in rng.integers(-max_translation, max_translation, size=2, endpoint=True))
    out = mirror(img) if mirror_image else img
    return translate(out, dx, dy, fill)


# ---------------------------------------------------------------------------
# Batch driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sample:
    image: CartesianImage
    label: str
    range_m: float


@dataclass(frozen=True)
class AugmentationPlan:
    """How to expand each source sample.

    ``target_range`` is the uniform sampling interval for the new range; None
    keeps each sample at its own range.  ``threshold_db`` None means a
    per-image :func:`default_threshold`.
    """

    replication: int = 41
    target_range: tuple[float, float] | None = (1.0, 12.0)
    sigma_sq: tuple[float, float] = (0.01, 0.15)
    speckle_spread: str = "variance"
    shift_levels: tuple[float, ...] = DEFAULT_SHIFT_LEVELS
    max_translation: int = 8
    mirror: bool = True
    seed: int = 0
    range_stage: bool = True
    speckle_stage: bool = True
    shift_stage: bool = True
    standard_stage: bool = True
    threshold_db: float | None = None
    fill_db: float = FILL_DB

    def __post_init__(self):
        if int(self.replication) < 1:
            raise DomainError("replication must be >= 1")
        if self.target_range is not None:
            lo, hi = self.target_range
            if not 0 < lo <= hi:
                raise DomainError("target_range must satisfy 0 < min <= max")
            object.__setattr__(self, "target_range", (float(lo), float(hi)))
        _check_spread(*self.sigma_sq)
        if self.speckle_spread not in ("variance", "std"):
            raise DomainError(f"unknown speckle spread {self.speckle_spread!r}")
        if not self.shift_levels:
            raise DomainError("shift_levels must not be empty")
        if self.max_translation < 0:
            raise DomainError("max_translation must be >= 0")
        object.__setattr__(self, "shift_levels", tuple(float(v) for v in self.shift_levels))
        object.__setattr__(self, "sigma_sq", tuple(float(v) for v in self.sigma_sq))

    @classmethod
    def identity(cls, replication: int = 1, seed: int = 0) -> "AugmentationPlan":
        """A plan whose every recipe reproduces its source image."""
        return cls(replication=replication, target_range=None, sigma_sq=(0.0, 0.0),
                   shift_levels=(0.0,), max_translation=0, mirror=False, seed=seed)

    def validate_for(self, sensor: SensorConfig) -> None:
        if self.target_range is not None and self.target_range[1] > sensor.max_range:
            raise DomainError(
                f"target range {self.target_range[1]} m beyond sensor max_range {sensor.max_range} m")


@dataclass(frozen=True)
class Recipe:
    """Everything needed to regenerate one augmented image."""

    source: int
    replica: int
    label: str
    source_range_m: float
    target_range_m: float
    sigma_sq: float
    shift_db: float
    dx: int
    dy: int
    mirrored: bool
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class AugmentedSample:
    image: CartesianImage
    label: str
    recipe: Recipe


def _rng(seed: int, source: int, replica: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(source, replica, stream))
    return np.random.default_rng(ss)


def make_recipe(sample: Sample, index: int, replica: int, plan: AugmentationPlan) -> Recipe:
    """Draw the random parameters of one augmented copy from its child seed."""
    rng = _rng(plan.seed, index, replica, 0)
    target = sample.range_m
    if plan.range_stage and plan.target_range is not None:
        target = float(rng.uniform(*plan.target_range))
    sigma_sq = 0.0
    if plan.speckle_stage:
        sigma_sq = draw_speckle_variance(rng, *plan.sigma_sq, spread=plan.speckle_spread)
    shift = 0.0
    if plan.shift_stage:
        shift = float(plan.shift_levels[int(rng.integers(len(plan.shift_levels)))])
    dx = dy = 0
    mirrored = False
    if plan.standard_stage:
        m = plan.max_translation
        dx, dy = (int(v) for v in rng.integers(-m, m, size=2, endpoint=True))
        mirrored = bool(plan.mirror and rng.random() < 0.5)
    return Recipe(index, replica, sample.label, float(sample.range_m), target, sigma_sq,
                  shift, dx, dy, mirrored, plan.seed)


def render_recipe(sample: Sample, recipe: Recipe, model: AttenuationModel,
                  sensor: SensorConfig, plan: AugmentationPlan) -> CartesianImage:
    """Apply range -> speckle -> background shift -> translate/mirror."""
    img = sample.image
    threshold = plan.threshold_db if plan.threshold_db is not None else default_threshold(img)
    if plan.range_stage and recipe.target_range_m != recipe.source_range_m:
        img = synthesize_at_range(img, sample.label, model, sensor, recipe.source_range_m,
                                  recipe.target_range_m, threshold)
    if plan.speckle_stage and recipe.sigma_sq > 0:
        img = apply_speckle(img, _rng(recipe.seed, recipe.source, recipe.replica, 1), recipe.sigma_sq)
    if plan.shift_stage and recipe.shift_db != 0:
        img = background_shift(img, segment_threshold(img, threshold), recipe.shift_db)
    if plan.standard_stage:
        if recipe.mirrored:
            img = mirror(img)
        if recipe.dx or recipe.dy:
            img = translate(img, recipe.dx, recipe.dy, plan.fill_db)
    return img


def _augment_one(args) -> list[AugmentedSample]:
    index, sample, plan, model, sensor = args
    out = []
    for j in range(plan.replication):
        recipe = make_recipe(sample, index, j, plan)
        out.append(AugmentedSample(render_recipe(sample, recipe, model, sensor, plan),
                                   sample.label, recipe))
    return out


def augment_dataset(samples: Sequence[Sample], plan: AugmentationPlan, model: AttenuationModel,
                    sensor: SensorConfig, jobs: int = 1) -> Iterator[AugmentedSample]:
    """Yield ``plan.replication`` augmented copies of every sample, in order.

    Each copy is a pure function of the sample, ``plan.seed`` and its
    (sample, replica) index, so serial and parallel runs agree exactly.
    Results stream; wrap in ``list`` for small sets.
    """
    plan.validate_for(sensor)
    if plan.range_stage and plan.target_range is not None:
        missing = sorted({s.label for s in samples} - set(model.classes))
        if missing:
            raise UnknownClassError(f"classes missing from attenuation model: {missing}")
    tasks = ((i, s, plan, model, sensor) for i, s in enumerate(samples))
    if jobs <= 1:
        for t in tasks:
            yield from _augment_one(t)
        return
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for batch in pool.map(_augment_one, tasks, chunksize=4):
            yield from batch


def augmentation_manifest(samples: Sequence[Sample], plan: AugmentationPlan) -> list[dict]:
    """Recipes of every augmented copy, without rendering any image."""
    return [make_recipe(s, i, j, plan).to_dict()
            for i, s in enumerate(samples) for j in range(plan.replication)]
