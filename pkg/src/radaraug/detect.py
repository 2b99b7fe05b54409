"""Two-stage detection: CA-CFAR along range, DBSCAN in meters, fixed boxes,
crop/resize and a pluggable patch classifier."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidBoxError, InvalidInputError, InvalidParamsError
from .geometry import (FILL_DB, CartesianImage, PolarImage, crop, polar_to_cartesian,
                       resize_bilinear)

NOISE = -1


@dataclass(frozen=True)
class CfarParams:
    """CA-CFAR settings.

    ``train_cells`` is the total number of training cells (split evenly either
    side of the cell under test), ``guard_cells`` the guard width per side.
    With ``mode="pfa"`` the rate is a false-alarm probability and the
    threshold factor follows from it; with ``mode="scale"`` the rate *is* the
    threshold factor.
    """

    train_cells: int = 500
    guard_cells: int = 30
    rate: float = 0.22
    mode: str = "scale"

    def __post_init__(self):
        if int(self.train_cells) < 2:
            raise InvalidParamsError("train_cells must be >= 2")
        if int(self.guard_cells) < 0:
            raise InvalidParamsError("guard_cells must be >= 0")
        if not self.rate > 0:
            raise InvalidParamsError("rate must be > 0")
        if self.mode not in ("pfa", "scale"):
            raise InvalidParamsError(f"unknown CFAR mode {self.mode!r}")
        if self.mode == "pfa" and not self.rate < 1:
            raise InvalidParamsError("a false-alarm probability must be < 1")

    @property
    def half_window(self) -> int:
        return int(self.train_cells) // 2

    def alpha(self, n_cells):
        """Threshold factor for a window of ``n_cells`` training cells."""
        if self.mode == "scale":
            return np.full_like(np.asarray(n_cells, dtype=float), self.rate)
        n = np.asarray(n_cells, dtype=float)
        return n * (self.rate ** (-1.0 / n) - 1.0)


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 0.3
    min_pts: int = 40


def ca_cfar_linear(power: np.ndarray, params: CfarParams) -> np.ndarray:
    """CA-CFAR on rows of linear power; returns a boolean detection mask.

    A cell is flagged when it exceeds ``alpha`` times the mean of its training
    cells.  Near the ends of a row only the side whose full training window
    fits is used, and ``alpha`` is computed for that smaller window.
    """
    p = np.atleast_2d(np.asarray(power, dtype=np.float64))
    n = p.shape[1]
    h, g = params.half_window, int(params.guard_cells)
    if n < 2 * (h + g) + 1:
        raise InvalidParamsError(
            f"CFAR window of {2 * (h + g) + 1} cells does not fit {n} range bins")
    cs = np.zeros((p.shape[0], n + 1))
    np.cumsum(p, axis=1, out=cs[:, 1:])
    i = np.arange(n)
    left_ok = i - g - h >= 0
    right_ok = i + g + h <= n - 1
    li = np.clip(i - g, 0, n)
    left = cs[:, li] - cs[:, np.clip(i - g - h, 0, n)]
    right = cs[:, np.clip(i + g + h + 1, 0, n)] - cs[:, np.clip(i + g + 1, 0, n)]
    total = np.where(left_ok, left, 0.0) + np.where(right_ok, right, 0.0)
    count = h * (left_ok.astype(int) + right_ok.astype(int))
    alpha = params.alpha(count)
    return p > alpha * (total / count)


def ca_cfar(polar: PolarImage, params: CfarParams) -> np.ndarray:
    """Per-azimuth CA-CFAR on a dB polar image (averaging done in linear power)."""
    return ca_cfar_linear(np.power(10.0, polar.data / 10.0), params)


def detection_points(polar: PolarImage, mask: np.ndarray) -> np.ndarray:
    """Metric (x, y) of flagged cells, in row-major (azimuth, range) order."""
    az, rg = np.nonzero(mask)
    x, y = polar.cell_position(az, rg)
    return np.column_stack([x, y])


def _as_points(points) -> np.ndarray:
    if len(points) and hasattr(points[0], "x") and not isinstance(points, np.ndarray):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return pts


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density-based clustering; returns a cluster id per point, ``-1`` for noise.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``.  Points are scanned in input order and clusters numbered
    as they are discovered; a border point joins the first cluster that
    reaches it.
    """
    if not eps > 0:
        raise InvalidParamsError("eps must be > 0")
    if int(min_pts) < 1:
        raise InvalidParamsError("min_pts must be >= 1")
    pts = _as_points(points)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=int)
    if n == 0:
        return labels
    neighbors = cKDTree(pts).query_ball_point(pts, r=eps)
    core = np.fromiter((len(nb) >= min_pts for nb in neighbors), dtype=bool, count=n)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                    if core[q]:
                        queue.append(q)
        cluster += 1
    return labels


@dataclass(frozen=True)
class Cluster:
    points: np.ndarray   # (n, 2) meters
    centroid: tuple[float, float]

    @property
    def size(self) -> int:
        return len(self.points)


def clusters_from_labels(points, labels: np.ndarray) -> list[Cluster]:
    pts = _as_points(points)
    out = []
    for k in range(int(labels.max(initial=NOISE)) + 1):
        members = pts[labels == k]
        c = members.mean(axis=0)
        out.append(Cluster(members, (float(c[0]), float(c[1]))))
    return out


@dataclass(frozen=True)
class LabeledBox:
    """Axis-aligned box in pixel units; ``(x, y)`` is the upper-left corner
    as (column, row)."""

    x: float
    y: float
    width: float
    height: float
    label: str = ""
    score: float = 1.0

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise InvalidInputError("box width and height must be > 0")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"score {self.score} outside [0, 1]")

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.width / 2, self.y + self.height / 2

    def to_dict(self) -> dict:
        return {"class": self.label, "score": self.score, "x": self.x, "y": self.y,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabeledBox":
        return cls(d["x"], d["y"], d["width"], d["height"], str(d.get("class", "")),
                   float(d.get("score", 1.0)))


def box_around(col: float, row: float, side: int, shape: tuple[int, int]) -> LabeledBox:
    """``side`` x ``side`` box centred on a pixel position, clamped inside ``shape``."""
    rows, cols = shape
    w, h = min(side, cols), min(side, rows)
    x0 = int(round(col)) - side // 2
    y0 = int(round(row)) - side // 2
    x0 = min(max(x0, 0), cols - w)
    y0 = min(max(y0, 0), rows - h)
    return LabeledBox(x0, y0, w, h)


def clusters_to_boxes(clusters: Sequence[Cluster], box_side: int,
                      image: CartesianImage) -> list[LabeledBox]:
    """One fixed-size box per cluster, centred on the cluster centroid."""
    if box_side <= 0:
        raise InvalidParamsError("box_side must be > 0")
    boxes = []
    for c in clusters:
        col, row = image.world_to_pixel(*c.centroid)
        boxes.append(box_around(float(col), float(row), box_side, image.shape))
    return boxes


def crop_resize(img: CartesianImage, box: LabeledBox, out_side: int = 88,
                fill: float = FILL_DB) -> np.ndarray:
    """Crop ``box`` (out-of-image pixels take ``fill``) and resize bilinearly."""
    x0, y0 = int(round(box.x)), int(round(box.y))
    w, h = int(round(box.width)), int(round(box.height))
    rows, cols = img.shape
    if x0 >= cols or y0 >= rows or x0 + w <= 0 or y0 + h <= 0:
        raise InvalidBoxError(f"box {box} lies outside the {rows}x{cols} image")
    patch = crop(img, x0, y0, w, h, fill).data
    if patch.shape == (out_side, out_side):
        return np.array(patch, dtype=np.float64)
    return resize_bilinear(patch, out_side)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

class ClassifierHook(Protocol):
    classes: Sequence[str]

    def __call__(self, patch: np.ndarray) -> dict[str, float]: ...


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass(frozen=True)
class NearestCentroidClassifier:
    """Scores are the softmax of negative Euclidean distances to class mean patches."""

    classes: tuple[str, ...]
    centroids: np.ndarray   # (n_classes, side, side)

    def __call__(self, patch) -> dict[str, float]:
        q = np.asarray(getattr(patch, "data", patch), dtype=np.float64)
        if q.shape != self.centroids.shape[1:]:
            raise InvalidInputError(
                f"patch shape {q.shape} does not match templates {self.centroids.shape[1:]}")
        d = np.sqrt(((self.centroids - q[None]) ** 2).reshape(len(self.classes), -1).sum(axis=1))
        return dict(zip(self.classes, (float(s) for s in _softmax(-d))))

    def save(self, path) -> None:
        np.savez(path, classes=np.array(self.classes), centroids=self.centroids)

    @classmethod
    def load(cls, path) -> "NearestCentroidClassifier":
        with np.load(path, allow_pickle=False) as f:
            return cls(tuple(str(c) for c in f["classes"]), f["centroids"].astype(np.float64))


def baseline_classifier(patches: Sequence[np.ndarray], labels: Sequence[str]) -> NearestCentroidClassifier:
    """Template matcher from labelled training patches (one mean patch per class)."""
    if len(patches) != len(labels):
        raise InvalidInputError("patches and labels differ in length")
    if not len(patches):
        raise InvalidInputError("no training patches")
    arr = np.stack([np.asarray(getattr(p, "data", p), dtype=np.float64) for p in patches])
    lab = np.asarray(labels)
    classes = tuple(sorted(set(map(str, labels))))
    centroids = np.stack([arr[lab == c].mean(axis=0) for c in classes])
    return NearestCentroidClassifier(classes, centroids)


def fixed_label_classifier(label: str = "object") -> Callable[[np.ndarray], dict[str, float]]:
    """Stand-in hook when no trained classifier is available."""
    def hook(patch):
        return {label: 1.0}
    return hook


def detect_pipeline(polar: PolarImage, cfar_params: CfarParams = CfarParams(),
                    dbscan_params: DbscanParams = DbscanParams(), box_side: int = 275,
                    classifier: Callable[[np.ndarray], Mapping[str, float]] | None = None,
                    patch_side: int = 88, meters_per_pixel: float | None = None,
                    cartesian: CartesianImage | None = None) -> list[LabeledBox]:
    """CFAR -> metric points -> DBSCAN -> fixed boxes -> crop/resize -> classify.

    Boxes live in the pixel frame of ``polar_to_cartesian(polar,
    meters_per_pixel)`` (pass ``cartesian`` to reuse an existing conversion).
    Every box carries its argmax class and that class's score; boxes are
    returned in descending score order, ties in cluster order.
    """
    if classifier is None:
        classifier = fixed_label_classifier()
    if cartesian is None:
        cartesian = polar_to_cartesian(polar, meters_per_pixel, "bilinear")
    mask = ca_cfar(polar, cfar_params)
    pts = detection_points(polar, mask)
    labels = dbscan(pts, dbscan_params.eps, dbscan_params.min_pts)
    clusters = clusters_from_labels(pts, labels)
    out = []
    for box in clusters_to_boxes(clusters, box_side, cartesian):
        scores = classifier(crop_resize(cartesian, box, patch_side))
        best = max(scores, key=scores.get)
        out.append(LabeledBox(box.x, box.y, box.width, box.height, best,
                              float(min(max(scores[best], 0.0), 1.0))))
    out.sort(key=lambda b: -b.score)
    return out
