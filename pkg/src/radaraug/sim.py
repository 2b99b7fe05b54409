"""Point-scatterer scene simulator built on the monostatic radar equation.

Used as ground truth for the detector and attenuation tests.  The beam is a
boxcar of width ``azimuth_beamwidth``; returns add in linear power and are
converted to dB last.

The default noise floor (60 dB below a 1 m^2 target at 1 m) is an arbitrary
plumbing constant, not a property of any real sensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .geometry import SPEED_OF_LIGHT, PolarImage, SensorConfig

REFERENCE_NOISE_OFFSET_DB = -60.0


@dataclass(frozen=True)
class Scatterer:
    x: float
    y: float
    rcs: float = 1.0
    label: str | None = None
    obj: str | None = None

    def __post_init__(self):
        if not self.rcs > 0:
            raise DomainError("rcs must be > 0")

    @property
    def range(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def bearing(self) -> float:
        """Degrees clockwise from boresight."""
        return math.degrees(math.atan2(self.x, self.y))

    @property
    def group(self) -> str | None:
        return self.obj if self.obj is not None else self.label


@dataclass(frozen=True)
class SimConfig:
    transmit_power: float = 1.0                      # W
    antenna_gain: float = 10 ** 3.9                  # 39 dBi
    wavelength: float = SPEED_OF_LIGHT / 300e9       # m
    loss: float = 1.0
    noise_floor: float | None = None                 # dB; None -> reference - 60 dB
    noise_std: float = 1.0                           # dB

    def __post_init__(self):
        if not (self.transmit_power > 0 and self.antenna_gain > 0 and self.wavelength > 0):
            raise DomainError("transmit_power, antenna_gain and wavelength must be > 0")
        if not self.loss >= 1:
            raise DomainError("loss must be >= 1")
        if not self.noise_std >= 0:
            raise DomainError("noise_std must be >= 0")
        if self.noise_floor is None:
            ref = power_to_db(radar_equation(self.transmit_power, self.antenna_gain, 1.0,
                                             self.wavelength, 1.0, self.loss))
            object.__setattr__(self, "noise_floor", ref + REFERENCE_NOISE_OFFSET_DB)

    def to_dict(self) -> dict:
        return {"transmit_power_w": self.transmit_power, "antenna_gain": self.antenna_gain,
                "wavelength_m": self.wavelength, "loss": self.loss,
                "noise_floor_db": self.noise_floor, "noise_std_db": self.noise_std}

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        defaults = cls.__dataclass_fields__
        keys = {"transmit_power_w": "transmit_power", "antenna_gain": "antenna_gain",
                "wavelength_m": "wavelength", "loss": "loss",
                "noise_floor_db": "noise_floor", "noise_std_db": "noise_std"}
        unknown = set(d) - set(keys)
        if unknown:
            raise DomainError(f"unknown sim config keys: {sorted(unknown)}")
        return cls(**{keys[k]: v for k, v in d.items() if keys[k] in defaults})


def radar_equation(pt: float, gain: float, rcs: float, wavelength: float, range_m: float,
                   loss: float = 1.0) -> float:
    """``Pt G^2 sigma lambda^2 / ((4 pi)^3 R^4 L)``."""
    if not range_m > 0:
        raise DomainError(f"range must be > 0, got {range_m}")
    return pt * gain ** 2 * rcs * wavelength ** 2 / ((4 * math.pi) ** 3 * range_m ** 4 * loss)


def received_power(s: Scatterer, cfg: SimConfig, range_m: float | None = None) -> float:
    """Received power in W from one scatterer (at its own range unless given)."""
    r = s.range if range_m is None else range_m
    return radar_equation(cfg.transmit_power, cfg.antenna_gain, s.rcs, cfg.wavelength, r, cfg.loss)


def power_to_db(p):
    """``10 log10(p)``; ``p`` must be positive."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("power must be > 0 to convert to dB")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out


def render_scene(scatterers: Iterable[Scatterer], sensor: SensorConfig, cfg: SimConfig,
                 rng: np.random.Generator | None = None) -> PolarImage:
    """Polar dB image of point scatterers over a noise floor.

    Each scatterer lands in range bin ``floor(R / dr)`` of every azimuth bin
    within half a beamwidth of its bearing.  Noise is Gaussian in dB; with
    ``noise_std == 0`` no random numbers are drawn.
    """
    dr = sensor.range_resolution
    n_az, n_r = sensor.azimuth_bins, sensor.range_bins
    az = sensor.azimuth_start + np.arange(n_az) * sensor.azimuth_step
    signal = np.zeros((n_az, n_r))
    half = sensor.azimuth_beamwidth / 2.0
    for s in scatterers:
        r = s.range
        if not 0 < r < sensor.max_range:
            raise DomainError(f"scatterer at range {r:.3f} m outside (0, {sensor.max_range:.3f}) m")
        i = int(math.floor(r / dr))
        if i >= n_r:
            raise DomainError(f"scatterer at range {r:.3f} m beyond the last range bin")
        lit = np.abs(az - s.bearing) <= half
        signal[lit, i] += received_power(s, cfg, r)
    if cfg.noise_std > 0:
        if rng is None:
            raise DomainError("an RNG is required when noise_std > 0")
        noise_db = rng.normal(cfg.noise_floor, cfg.noise_std, size=(n_az, n_r))
    else:
        noise_db = np.full((n_az, n_r), float(cfg.noise_floor))
    out = noise_db.copy()
    hit = signal > 0
    out[hit] = power_to_db(np.power(10.0, noise_db[hit] / 10.0) + signal[hit])
    return PolarImage(out, dr, sensor.azimuth_start, sensor.azimuth_step)


def object_centers(scatterers: Sequence[Scatterer]) -> dict[str, tuple[str, float, float]]:
    """Mean position and label of every scatterer group (``obj``, else ``label``)."""
    groups: dict[str, list[Scatterer]] = {}
    for s in scatterers:
        if s.group is not None:
            groups.setdefault(s.group, []).append(s)
    out = {}
    for g, members in groups.items():
        label = members[0].label if members[0].label is not None else g
        out[g] = (label, float(np.mean([m.x for m in members])),
                  float(np.mean([m.y for m in members])))
    return out


def patch_scatterers(cx: float, cy: float, shape: str, label: str, rcs: float = 1.0,
                     spacing: float = 0.03, obj: str | None = None) -> list[Scatterer]:
    """Small extended targets made of point scatterers on an 11 x 11 lattice.

    ``shape`` is one of ``"bar"`` (three-cell-thick cross-range strip),
    ``"column"`` (same along range), ``"cross"``, ``"ring"`` or ``"disc"``.
    """
    k = np.arange(-5, 6)
    u, v = (a.ravel() for a in np.meshgrid(k, k))
    rho2 = u * u + v * v
    keep = {
        "bar": np.abs(v) <= 1,
        "column": np.abs(u) <= 1,
        "cross": (np.abs(u) <= 1) | (np.abs(v) <= 1),
        "ring": (rho2 <= 25) & (rho2 >= 12),
        "disc": rho2 <= 25,
    }.get(shape)
    if keep is None:
        raise DomainError(f"unknown target shape {shape!r}")
    return [Scatterer(cx + a * spacing, cy + b * spacing, rcs, label, obj)
            for a, b in zip(u[keep], v[keep])]
