"""Sensor geometry, radar image containers and polar/Cartesian resampling.

Conventions
-----------
* Azimuth is measured in degrees clockwise from boresight, boresight being +y.
  A point at range ``r`` and azimuth ``a`` sits at ``(r sin a, r cos a)``.
* Polar images are azimuth-major: ``data[azimuth_bin, range_bin]``.  Range bin
  ``i`` is centred at ``i * range_resolution``.
* Cartesian images are row-major with ``data[row, col]``; the centre of pixel
  ``(row, col)`` is at ``origin + (col, row) * meters_per_pixel``.  Rows grow
  with +y, so "up" in array index space is towards the sensor.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import DomainError, InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0
FILL_DB = -100.0

AZIMUTH_CONVENTION = "degrees clockwise from boresight (+y)"


def _frozen_array(data, dtype=None) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def range_resolution(bandwidth: float) -> float:
    """Range resolution ``c / (2B)`` in meters for a sweep bandwidth in Hz."""
    if not np.isfinite(bandwidth) or bandwidth <= 0:
        raise DomainError(f"bandwidth must be positive, got {bandwidth!r}")
    return SPEED_OF_LIGHT / (2.0 * bandwidth)


def bandwidth_for_resolution(resolution: float) -> float:
    """Inverse of :func:`range_resolution`."""
    if not np.isfinite(resolution) or resolution <= 0:
        raise DomainError(f"range resolution must be positive, got {resolution!r}")
    return SPEED_OF_LIGHT / (2.0 * resolution)


def cross_range_cell_size(range_m, beamwidth_deg):
    """Width of a beam-limited cell, ``2 R sin(theta / 2)``.

    Works elementwise on arrays.  ``beamwidth_deg`` must lie in ``[0, 180)``
    and ``range_m`` must be non-negative.
    """
    r = np.asarray(range_m, dtype=float)
    theta = np.asarray(beamwidth_deg, dtype=float)
    if np.any(~np.isfinite(theta)) or np.any(theta < 0) or np.any(theta >= 180):
        raise DomainError(f"beamwidth must be in [0, 180) degrees, got {beamwidth_deg!r}")
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise DomainError(f"range must be non-negative, got {range_m!r}")
    out = 2.0 * r * np.sin(np.deg2rad(theta) / 2.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SensorConfig:
    """Scanning FMCW radar description.

    ``max_range`` is optional; when given it must agree with
    ``range_resolution * range_bins``.  ``azimuth_start`` defaults to a scan
    centred on boresight.
    """

    bandwidth: float
    azimuth_beamwidth: float
    azimuth_step: float
    range_bins: int
    azimuth_bins: int
    max_range: float | None = None
    azimuth_start: float | None = None

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise DomainError("bandwidth must be > 0")
        if not 0 < self.azimuth_beamwidth < 180:
            raise DomainError("azimuth_beamwidth must be in (0, 180) degrees")
        if not self.azimuth_step > 0:
            raise DomainError("azimuth_step must be > 0")
        if int(self.range_bins) < 1 or int(self.azimuth_bins) < 1:
            raise DomainError("range_bins and azimuth_bins must be >= 1")
        object.__setattr__(self, "range_bins", int(self.range_bins))
        object.__setattr__(self, "azimuth_bins", int(self.azimuth_bins))
        derived = self.range_resolution * self.range_bins
        if self.max_range is None:
            object.__setattr__(self, "max_range", derived)
        elif not np.isclose(self.max_range, derived, rtol=1e-9, atol=0.0):
            raise DomainError(
                f"max_range {self.max_range} disagrees with range_resolution * range_bins = {derived}"
            )
        if self.azimuth_start is None:
            object.__setattr__(
                self, "azimuth_start", -0.5 * (self.azimuth_bins - 1) * self.azimuth_step
            )

    @classmethod
    def from_resolution(cls, resolution: float, **kwargs) -> "SensorConfig":
        return cls(bandwidth=bandwidth_for_resolution(resolution), **kwargs)

    @property
    def range_resolution(self) -> float:
        return range_resolution(self.bandwidth)

    def cell_size(self, range_m):
        """Cross-range cell width at ``range_m`` for this sensor's beam."""
        return cross_range_cell_size(range_m, self.azimuth_beamwidth)

    def to_dict(self) -> dict:
        return {
            "bandwidth_hz": self.bandwidth,
            "azimuth_beamwidth_deg": self.azimuth_beamwidth,
            "azimuth_step_deg": self.azimuth_step,
            "range_bins": self.range_bins,
            "azimuth_bins": self.azimuth_bins,
            "max_range_m": self.max_range,
            "azimuth_start_deg": self.azimuth_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        return cls(
            bandwidth=float(d["bandwidth_hz"]),
            azimuth_beamwidth=float(d["azimuth_beamwidth_deg"]),
            azimuth_step=float(d["azimuth_step_deg"]),
            range_bins=int(d["range_bins"]),
            azimuth_bins=int(d["azimuth_bins"]),
            max_range=d.get("max_range_m"),
            azimuth_start=d.get("azimuth_start_deg"),
        )


def sensor_300ghz(range_bins: int = 2000, azimuth_bins: int = 201,
                  azimuth_step: float = 0.2) -> SensorConfig:
    """The 20 GHz-bandwidth, 1.2 degree-beam low-THz scanner."""
    return SensorConfig(bandwidth=20e9, azimuth_beamwidth=1.2, azimuth_step=azimuth_step,
                        range_bins=range_bins, azimuth_bins=azimuth_bins)


@dataclass(frozen=True)
class PolarImage:
    """Power in dB on an (azimuth, range) grid."""

    data: np.ndarray
    range_resolution: float
    azimuth_start: float
    azimuth_step: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidInputError(f"polar data must be 2-D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("polar image contains non-finite values")
        if not self.range_resolution > 0 or not self.azimuth_step > 0:
            raise InvalidInputError("range_resolution and azimuth_step must be > 0")
        object.__setattr__(self, "data", _frozen_array(data))

    @property
    def azimuth_bins(self) -> int:
        return self.data.shape[0]

    @property
    def range_bins(self) -> int:
        return self.data.shape[1]

    @property
    def ranges(self) -> np.ndarray:
        return np.arange(self.range_bins) * self.range_resolution

    @property
    def azimuths(self) -> np.ndarray:
        return self.azimuth_start + np.arange(self.azimuth_bins) * self.azimuth_step

    def cell_position(self, azimuth_bin, range_bin):
        """Metric (x, y) of cell centres; accepts scalars or arrays."""
        r = np.asarray(range_bin, dtype=float) * self.range_resolution
        a = np.deg2rad(self.azimuth_start + np.asarray(azimuth_bin, dtype=float) * self.azimuth_step)
        return r * np.sin(a), r * np.cos(a)

    def with_data(self, data) -> "PolarImage":
        return replace(self, data=data)


@dataclass(frozen=True)
class CartesianImage:
    """Power in dB on a uniform square grid.

    ``origin`` is the metric position of the centre of pixel ``(0, 0)``;
    ``sensor`` is the radar position in the same frame.
    """

    data: np.ndarray
    meters_per_pixel: float
    origin: tuple[float, float] = (0.0, 0.0)
    sensor: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvalidInputError(f"image data must be 2-D, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("image contains non-finite values")
        if not self.meters_per_pixel > 0:
            raise InvalidInputError("meters_per_pixel must be > 0")
        object.__setattr__(self, "data", _frozen_array(data))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "sensor", (float(self.sensor[0]), float(self.sensor[1])))

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def x_coords(self) -> np.ndarray:
        return self.origin[0] + np.arange(self.data.shape[1]) * self.meters_per_pixel

    @property
    def y_coords(self) -> np.ndarray:
        return self.origin[1] + np.arange(self.data.shape[0]) * self.meters_per_pixel

    def world_to_pixel(self, x, y):
        """Fractional (col, row) of a metric position."""
        col = (np.asarray(x, dtype=float) - self.origin[0]) / self.meters_per_pixel
        row = (np.asarray(y, dtype=float) - self.origin[1]) / self.meters_per_pixel
        return col, row

    def pixel_to_world(self, col, row):
        x = self.origin[0] + np.asarray(col, dtype=float) * self.meters_per_pixel
        y = self.origin[1] + np.asarray(row, dtype=float) * self.meters_per_pixel
        return x, y

    def ranges(self) -> np.ndarray:
        """Distance of every pixel centre from the sensor."""
        xs = self.x_coords - self.sensor[0]
        ys = self.y_coords - self.sensor[1]
        return np.hypot(xs[None, :], ys[:, None])

    def with_data(self, data) -> "CartesianImage":
        return replace(self, data=data)


@dataclass(frozen=True)
class GridPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InvalidInputError("grid point coordinates must be finite")


def crop(img: CartesianImage, col0: int, row0: int, width: int, height: int,
         fill: float = FILL_DB) -> CartesianImage:
    """Integer-aligned window of ``img``; pixels outside the source take ``fill``.

    The returned image keeps metric georeferencing (its origin is the centre
    of the window's first pixel).
    """
    col0, row0, width, height = int(col0), int(row0), int(width), int(height)
    if width <= 0 or height <= 0:
        raise InvalidInputError("crop size must be positive")
    out = np.full((height, width), fill, dtype=img.data.dtype)
    rows, cols = img.shape
    r_lo, r_hi = max(row0, 0), min(row0 + height, rows)
    c_lo, c_hi = max(col0, 0), min(col0 + width, cols)
    if r_lo < r_hi and c_lo < c_hi:
        out[r_lo - row0:r_hi - row0, c_lo - col0:c_hi - col0] = img.data[r_lo:r_hi, c_lo:c_hi]
    x0, y0 = img.pixel_to_world(col0, row0)
    return CartesianImage(out, img.meters_per_pixel, (float(x0), float(y0)), img.sensor)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

_METHODS = ("nearest", "bilinear")


class _Lookup(NamedTuple):
    """Precomputed sampling of a source grid at a set of target positions."""

    inside: np.ndarray   # bool, target shape
    i0: np.ndarray       # first-axis lower index (flat over inside)
    i1: np.ndarray
    j0: np.ndarray       # second-axis lower index
    j1: np.ndarray
    ti: np.ndarray       # fractional weights; zero for nearest
    tj: np.ndarray


def _axis_lookup(f: np.ndarray, n: int, method: str):
    """Index/weight pair for fractional coordinates ``f`` on an axis of ``n`` samples."""
    if method == "nearest":
        i = np.clip(np.floor(f + 0.5).astype(np.intp), 0, n - 1)
        return i, i, np.zeros_like(f)
    fc = np.clip(f, 0.0, n - 1)
    if n == 1:
        i0 = np.zeros(f.shape, dtype=np.intp)
        return i0, i0, np.zeros_like(f)
    i0 = np.floor(fc).astype(np.intp)
    # on the last sample the weight is exactly 0, so endpoints are reproduced bit-for-bit
    return i0, np.minimum(i0 + 1, n - 1), fc - i0


def _build_lookup(fi: np.ndarray, fj: np.ndarray, shape: tuple[int, int], method: str) -> _Lookup:
    ni, nj = shape
    inside = (fi >= -0.5) & (fi <= ni - 0.5) & (fj >= -0.5) & (fj <= nj - 0.5)
    i0, i1, ti = _axis_lookup(fi[inside], ni, method)
    j0, j1, tj = _axis_lookup(fj[inside], nj, method)
    return _Lookup(inside, i0, i1, j0, j1, ti, tj)


def _apply_lookup(src: np.ndarray, lk: _Lookup, fill: float) -> np.ndarray:
    out = np.full(lk.inside.shape, fill, dtype=np.float64)
    a = src[lk.i0, lk.j0]
    b = src[lk.i0, lk.j1]
    c = src[lk.i1, lk.j0]
    d = src[lk.i1, lk.j1]
    # a + t (b - a) keeps constants exact
    top = a + lk.tj * (b - a)
    bottom = c + lk.tj * (d - c)
    out[lk.inside] = top + lk.ti * (bottom - top)
    return out


def _wrap_to(a_deg: np.ndarray, centre: float) -> np.ndarray:
    return (a_deg - centre + 180.0) % 360.0 - 180.0 + centre


def cartesian_extent(range_bins: int, range_res: float, az_start: float, az_step: float,
                     az_bins: int, mpp: float) -> tuple[float, float, int, int]:
    """Pixel-aligned bounding grid ``(x0, y0, cols, rows)`` of a scanned sector.

    Grid nodes sit on integer multiples of ``mpp`` so the sensor is a node.
    """
    r_max = (range_bins - 0.5) * range_res
    a_lo = az_start - 0.5 * az_step
    a_hi = az_start + (az_bins - 0.5) * az_step
    angles = [a_lo, a_hi]
    # include cardinal directions that fall inside the sector
    k_lo, k_hi = int(np.ceil(a_lo / 90.0)), int(np.floor(a_hi / 90.0))
    angles += [90.0 * k for k in range(k_lo, k_hi + 1)]
    ang = np.deg2rad(np.array(angles))
    xs = np.concatenate([[0.0], r_max * np.sin(ang)])
    ys = np.concatenate([[0.0], r_max * np.cos(ang)])
    c_lo, c_hi = int(np.floor(xs.min() / mpp)), int(np.ceil(xs.max() / mpp))
    r_lo, r_hi = int(np.floor(ys.min() / mpp)), int(np.ceil(ys.max() / mpp))
    return c_lo * mpp, r_lo * mpp, c_hi - c_lo + 1, r_hi - r_lo + 1


@lru_cache(maxsize=8)
def _polar_to_cartesian_lookup(shape: tuple[int, int], range_res: float, az_start: float,
                               az_step: float, mpp: float, method: str):
    n_az, n_r = shape
    x0, y0, cols, rows = cartesian_extent(n_r, range_res, az_start, az_step, n_az, mpp)
    xs = x0 + np.arange(cols) * mpp
    ys = y0 + np.arange(rows) * mpp
    X, Y = np.meshgrid(xs, ys)
    r = np.hypot(X, Y)
    centre = az_start + 0.5 * (n_az - 1) * az_step
    a = _wrap_to(np.rad2deg(np.arctan2(X, Y)), centre)
    fr = r / range_res
    fa = (a - az_start) / az_step
    return (x0, y0), _build_lookup(fa, fr, shape, method)


def polar_to_cartesian(img: PolarImage, meters_per_pixel: float | None = None,
                       method: str = "bilinear", fill: float = FILL_DB) -> CartesianImage:
    """Resample a polar scan onto a uniform Cartesian grid.

    The grid covers the scanned sector's bounding box with the sensor at the
    metric origin.  Pixels outside the sector receive ``fill``.
    ``meters_per_pixel`` defaults to the range resolution.
    """
    if img.data.size == 0:
        raise InvalidInputError("polar image is empty")
    if method not in _METHODS:
        raise InvalidInputError(f"unknown interpolation method {method!r}")
    mpp = img.range_resolution if meters_per_pixel is None else float(meters_per_pixel)
    if not mpp > 0:
        raise DomainError("meters_per_pixel must be > 0")
    origin, lk = _polar_to_cartesian_lookup(
        img.data.shape, float(img.range_resolution), float(img.azimuth_start),
        float(img.azimuth_step), mpp, method)
    data = _apply_lookup(np.asarray(img.data, dtype=np.float64), lk, fill)
    return CartesianImage(data, mpp, origin, (0.0, 0.0))


def cartesian_to_polar(img: CartesianImage, sensor: SensorConfig, method: str = "bilinear",
                       fill: float = FILL_DB) -> PolarImage:
    """Sample a Cartesian image on the sensor's polar grid (inverse of
    :func:`polar_to_cartesian`).  Cells that fall outside the image get ``fill``.
    """
    if img.data.size == 0:
        raise InvalidInputError("cartesian image is empty")
    if method not in _METHODS:
        raise InvalidInputError(f"unknown interpolation method {method!r}")
    r = np.arange(sensor.range_bins) * sensor.range_resolution
    a = np.deg2rad(sensor.azimuth_start + np.arange(sensor.azimuth_bins) * sensor.azimuth_step)
    x = img.sensor[0] + np.sin(a)[:, None] * r[None, :]
    y = img.sensor[1] + np.cos(a)[:, None] * r[None, :]
    col, row = img.world_to_pixel(x, y)
    lk = _build_lookup(row, col, img.shape, method)
    data = _apply_lookup(np.asarray(img.data, dtype=np.float64), lk, fill)
    return PolarImage(data, sensor.range_resolution, sensor.azimuth_start, sensor.azimuth_step)


def resize_bilinear(data: np.ndarray, out_rows: int, out_cols: int | None = None) -> np.ndarray:
    """Corner-aligned bilinear resize; endpoints map to endpoints exactly."""
    out_cols = out_rows if out_cols is None else out_cols
    src = np.asarray(data, dtype=np.float64)
    rows, cols = src.shape

    def axis(n_in, n_out):
        if n_out == 1 or n_in == 1:
            f = np.zeros(n_out)
        else:
            f = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        return _axis_lookup(f, n_in, "bilinear")

    i0, i1, ti = axis(rows, out_rows)
    j0, j1, tj = axis(cols, out_cols)
    a = src[np.ix_(i0, j0)]
    b = src[np.ix_(i0, j1)]
    c = src[np.ix_(i1, j0)]
    d = src[np.ix_(i1, j1)]
    top = a + tj[None, :] * (b - a)
    bottom = c + tj[None, :] * (d - c)
    return top + ti[:, None] * (bottom - top)
