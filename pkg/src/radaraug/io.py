"""On-disk formats: scan/image files, dataset manifests, model/detection/report
JSON, configuration files and 16-bit PNG export.

A scan is a pair of files sharing a stem: ``<stem>.bin`` holds little-endian
float32 samples in row order (azimuth-major for polar scans) and
``<stem>.json`` describes the grid.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .augment import AttenuationModel
from .detect import LabeledBox
from .errors import FormatError
from .geometry import AZIMUTH_CONVENTION, CartesianImage, PolarImage, SensorConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
_DTYPE = np.dtype("<f4")


def _pair(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".bin", ".json"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".bin"), p.with_name(p.name + ".json")


def _write_json(path: Path, obj: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2) + "\n")
    os.replace(tmp, path)


def read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise FormatError(f"missing file {path}") from None
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON at byte offset {e.pos}: {e.msg}") from None


def _write_payload(path: Path, data: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(data, dtype=_DTYPE).tobytes())


def _read_payload(path: Path, rows: int, cols: int) -> np.ndarray:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing payload {path}") from None
    expected = 4 * rows * cols
    if len(raw) != expected:
        kind = "truncated" if len(raw) < expected else "oversized"
        raise FormatError(
            f"{path}: {kind} payload, expected {expected} bytes ({rows}x{cols} float32) "
            f"but found {len(raw)}; data ends at byte offset {len(raw)}")
    return np.frombuffer(raw, dtype=_DTYPE).reshape(rows, cols).copy()


def _require(meta: Mapping, key: str, path: Path):
    if key not in meta:
        raise FormatError(f"{path}: sidecar lacks required field {key!r}")
    return meta[key]


def save_scan(img: PolarImage, path) -> Path:
    """Write a polar scan; returns the payload path."""
    payload, sidecar = _pair(path)
    _write_payload(payload, img.data)
    _write_json(sidecar, {
        "kind": "polar",
        "azimuth_bins": img.azimuth_bins,
        "range_bins": img.range_bins,
        "range_resolution_m": img.range_resolution,
        "azimuth_start_deg": img.azimuth_start,
        "azimuth_step_deg": img.azimuth_step,
        "azimuth_convention": AZIMUTH_CONVENTION,
        "unit": "dB",
        "dtype": "float32-le",
    })
    return payload


def save_image(img: CartesianImage, path) -> Path:
    """Write a Cartesian image in the same binary + sidecar layout."""
    payload, sidecar = _pair(path)
    _write_payload(payload, img.data)
    rows, cols = img.shape
    _write_json(sidecar, {
        "kind": "cartesian",
        "rows": rows,
        "cols": cols,
        "meters_per_pixel": img.meters_per_pixel,
        "origin_m": list(img.origin),
        "sensor_m": list(img.sensor),
        "unit": "dB",
        "dtype": "float32-le",
    })
    return payload


def load_any(path) -> PolarImage | CartesianImage:
    """Load a polar scan or Cartesian image, dispatching on the sidecar ``kind``."""
    payload, sidecar = _pair(path)
    meta = read_json(sidecar)
    if not isinstance(meta, dict):
        raise FormatError(f"{sidecar}: sidecar must be a JSON object")
    unit = _require(meta, "unit", sidecar)
    if unit != "dB":
        raise FormatError(f"{sidecar}: unsupported unit {unit!r} (only 'dB' is supported)")
    kind = meta.get("kind", "polar")
    try:
        if kind == "polar":
            n_az = int(_require(meta, "azimuth_bins", sidecar))
            n_r = int(_require(meta, "range_bins", sidecar))
            data = _read_payload(payload, n_az, n_r)
            return PolarImage(data, float(_require(meta, "range_resolution_m", sidecar)),
                              float(_require(meta, "azimuth_start_deg", sidecar)),
                              float(_require(meta, "azimuth_step_deg", sidecar)))
        if kind == "cartesian":
            rows = int(_require(meta, "rows", sidecar))
            cols = int(_require(meta, "cols", sidecar))
            data = _read_payload(payload, rows, cols)
            return CartesianImage(data, float(_require(meta, "meters_per_pixel", sidecar)),
                                  tuple(_require(meta, "origin_m", sidecar)),
                                  tuple(meta.get("sensor_m", (0.0, 0.0))))
    except (TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{sidecar}: {e}") from None
    raise FormatError(f"{sidecar}: unknown kind {kind!r}")


def load_scan(path) -> PolarImage:
    img = load_any(path)
    if not isinstance(img, PolarImage):
        raise FormatError(f"{path}: expected a polar scan, found a Cartesian image")
    return img


def load_image(path) -> CartesianImage:
    img = load_any(path)
    if not isinstance(img, CartesianImage):
        raise FormatError(f"{path}: expected a Cartesian image, found a polar scan")
    return img


# ---------------------------------------------------------------------------
# Dataset manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    scan: str
    label: str
    range_m: float
    rotation_deg: float = 0.0
    receiver: str | None = None
    boxes: list[LabeledBox] = field(default_factory=list)
    recipe: dict | None = None

    def to_dict(self) -> dict:
        d = {"scan": self.scan, "class": self.label, "range_m": self.range_m,
             "rotation_deg": self.rotation_deg, "receiver": self.receiver,
             "boxes": [b.to_dict() for b in self.boxes]}
        if self.recipe is not None:
            d["recipe"] = self.recipe
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifestRecord":
        return cls(str(d["scan"]), str(d["class"]), float(d["range_m"]),
                   float(d.get("rotation_deg", 0.0)),
                   None if d.get("receiver") is None else str(d["receiver"]),
                   [LabeledBox.from_dict(b) for b in d.get("boxes", [])],
                   d.get("recipe"))


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    sensor: SensorConfig | None = None
    root: Path = Path(".")
    schema_version: int = SCHEMA_VERSION

    def path_of(self, record: ManifestRecord) -> Path:
        return self.root / record.scan

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version,
                "sensor": None if self.sensor is None else self.sensor.to_dict(),
                "records": [r.to_dict() for r in self.records]}


def save_manifest(manifest: DatasetManifest, path) -> None:
    _write_json(Path(path), manifest.to_dict())


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest; scan paths resolve relative to its directory."""
    path = Path(path)
    d = read_json(path)
    try:
        version = d["schema_version"]
        if version != SCHEMA_VERSION:
            raise FormatError(f"{path}: unrecognised schema_version {version!r}")
        sensor = SensorConfig.from_dict(d["sensor"]) if d.get("sensor") else None
        records = [ManifestRecord.from_dict(r) for r in d["records"]]
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: malformed manifest ({type(e).__name__}: {e})") from None
    m = DatasetManifest(records, sensor, path.parent, version)
    if check_files:
        for r in records:
            payload, sidecar = _pair(m.path_of(r))
            for f in (payload, sidecar):
                if not f.exists():
                    raise FormatError(f"{path}: record {r.scan!r} references missing file {f}")
    return m


# ---------------------------------------------------------------------------
# Model, detections, reports
# ---------------------------------------------------------------------------

def save_model(model: AttenuationModel, path) -> None:
    _write_json(Path(path), model.to_dict())


def load_model(path) -> AttenuationModel:
    d = read_json(Path(path))
    try:
        return AttenuationModel.from_dict(d)
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed attenuation model ({e})") from None


def save_detections(dets: Mapping[str, Sequence[LabeledBox]], path) -> None:
    _write_json(Path(path), {k: [b.to_dict() for b in v] for k, v in dets.items()})


def load_detections(path) -> dict[str, list[LabeledBox]]:
    d = read_json(Path(path))
    try:
        return {k: [LabeledBox.from_dict(b) for b in v] for k, v in d.items()}
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed box list ({e})") from None


def save_report(report: dict, path, csv_path=None) -> None:
    _write_json(Path(path), report)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["class", "recall", "precision"])
            for cls, pts in report["pr_curves"].items():
                for r, p in pts:
                    w.writerow([cls, repr(r), repr(p)])


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

# every tunable default, keyed as in the config file
DEFAULTS: dict[str, Any] = {
    "meters_per_pixel": None,        # None -> range resolution
    "fill_db": -100.0,
    "crop_side": 400,
    "patch_side": 88,
    "threshold_db": None,            # None -> background mean + 3 std
    "cfar_train_cells": 500,
    "cfar_guard_cells": 30,
    "cfar_rate": 0.22,
    "cfar_mode": "scale",
    "dbscan_eps": 0.3,
    "dbscan_min_pts": 40,
    "box_side": 275,
    "iou_threshold": 0.5,
    "ap_variant": "all_points",
    "replication": 41,
    "target_range_min": 1.0,
    "target_range_max": 12.0,
    "sigma_sq_min": 0.01,
    "sigma_sq_max": 0.15,
    "speckle_spread": "variance",
    "shift_levels": [-6.0, -3.0, 3.0, 6.0],
    "max_translation": 8,
    "mirror": True,
    "range_stage": True,
    "speckle_stage": True,
    "shift_stage": True,
    "standard_stage": True,
    "include_originals": False,
}

_TYPES: dict[str, tuple[type, ...]] = {
    "meters_per_pixel": (float, int, type(None)), "fill_db": (float, int),
    "crop_side": (int,), "patch_side": (int,), "threshold_db": (float, int, type(None)),
    "cfar_train_cells": (int,), "cfar_guard_cells": (int,), "cfar_rate": (float, int),
    "cfar_mode": (str,), "dbscan_eps": (float, int), "dbscan_min_pts": (int,),
    "box_side": (int,), "iou_threshold": (float, int), "ap_variant": (str,),
    "replication": (int,), "target_range_min": (float, int), "target_range_max": (float, int),
    "sigma_sq_min": (float, int), "sigma_sq_max": (float, int), "speckle_spread": (str,),
    "shift_levels": (list,), "max_translation": (int,), "mirror": (bool,),
    "range_stage": (bool,), "speckle_stage": (bool,), "shift_stage": (bool,),
    "standard_stage": (bool,), "include_originals": (bool,),
}


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Defaults, then a flat TOML file, then explicit overrides (None values skipped)."""
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as f:
                raw = tomllib.load(f)
        except FileNotFoundError:
            raise FormatError(f"missing config file {path}") from None
        except tomllib.TOMLDecodeError as e:
            raise FormatError(f"{path}: {e}") from None
        for k, v in raw.items():
            if k not in DEFAULTS:
                raise FormatError(f"{path}: unknown config key {k!r}")
            if isinstance(v, bool) and bool not in _TYPES[k]:
                raise FormatError(f"{path}: {k} must be {_TYPES[k][0].__name__}, got bool")
            if not isinstance(v, _TYPES[k]):
                raise FormatError(f"{path}: {k} must be {_TYPES[k][0].__name__}, got {type(v).__name__}")
            cfg[k] = v
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


# ---------------------------------------------------------------------------
# Visual export
# ---------------------------------------------------------------------------

def export_png(img, path) -> dict:
    """16-bit grayscale PNG with min..max dB mapped linearly to 0..65535.

    The mapping is written next to the PNG as ``<name>.png.json``.
    """
    from PIL import Image

    data = np.asarray(img.data, dtype=np.float64)
    lo, hi = float(data.min()), float(data.max())
    span = hi - lo if hi > lo else 1.0
    u16 = np.round((data - lo) / span * 65535.0).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(u16).save(path)
    mapping = {"min_db": lo, "max_db": hi, "levels": 65535,
               "formula": "db = min_db + value / levels * (max_db - min_db)"}
    _write_json(path.with_name(path.name + ".json"), mapping)
    return mapping
