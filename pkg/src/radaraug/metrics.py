"""Detection and classification metrics: IoU, greedy matching, PR curves,
VOC-style AP/mAP, confusion matrices and MSAD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .detect import LabeledBox
from .errors import InvalidInputError, UndefinedMetricError

Boxes = Sequence[LabeledBox]


def iou(a: LabeledBox, b: LabeledBox) -> float:
    """Intersection over union of two axis-aligned boxes (continuous areas)."""
    iw = min(a.x + a.width, b.x + b.width) - max(a.x, b.x)
    ih = min(a.y + a.height, b.y + b.height) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # (x + w) - x can exceed w by an ulp, so clamp
    return min(1.0, inter / (a.width * a.height + b.width * b.height - inter))


@dataclass
class MatchResult:
    det_tp: list[bool]          # per detection, in the input (score-sorted) order
    gt_matched: list[bool]
    det_iou: list[float] = field(default_factory=list)

    @property
    def tp(self) -> int:
        return sum(self.det_tp)

    @property
    def fp(self) -> int:
        return len(self.det_tp) - self.tp

    @property
    def fn(self) -> int:
        return len(self.gt_matched) - sum(self.gt_matched)


def _score_order(dets: Boxes) -> list[int]:
    # stable: equal scores keep input order
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(dets: Boxes, gts: Boxes, iou_thresh: float = 0.5) -> MatchResult:
    """Greedy matching of one image's detections to its ground truth.

    Detections are visited in descending score order (ties keep input
    order).  Each takes the highest-IoU still-unmatched ground truth of the
    same class; it is a true positive if that IoU reaches ``iou_thresh``.
    The returned per-detection flags follow the score order.
    """
    matched = [False] * len(gts)
    flags, ious = [], []
    for i in _score_order(dets):
        d = dets[i]
        best, best_j = -1.0, -1
        for j, g in enumerate(gts):
            if matched[j] or g.label != d.label:
                continue
            v = iou(d, g)
            if v > best:
                best, best_j = v, j
        hit = best_j >= 0 and best >= iou_thresh
        if hit:
            matched[best_j] = True
        flags.append(hit)
        ious.append(max(best, 0.0))
    return MatchResult(flags, matched, ious)


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    scores: np.ndarray
    n_gt: int
    tp: int
    fp: int

    @property
    def fn(self) -> int:
        return self.n_gt - self.tp

    def points(self) -> list[tuple[float, float]]:
        return [(float(r), float(p)) for r, p in zip(self.recall, self.precision)]


def _by_image(boxes) -> dict:
    if isinstance(boxes, Mapping):
        return {k: list(v) for k, v in boxes.items()}
    return {"": list(boxes)}


def pr_curve(dets, gts, iou_thresh: float = 0.5, label: str | None = None) -> PRCurve:
    """Precision/recall after each score-ranked detection.

    ``dets``/``gts`` are either flat box lists (one image) or mappings from
    image name to box lists.  ``label`` restricts to one class.
    """
    d_img, g_img = _by_image(dets), _by_image(gts)
    keep = (lambda b: b.label == label) if label is not None else (lambda b: True)
    n_gt = 0
    ranked = []   # (-score, global input position, is_tp)
    pos = 0
    for name in list(d_img) + [k for k in g_img if k not in d_img]:
        ds = [b for b in d_img.get(name, []) if keep(b)]
        gs = [b for b in g_img.get(name, []) if keep(b)]
        n_gt += len(gs)
        res = match_detections(ds, gs, iou_thresh)
        for i, hit in zip(_score_order(ds), res.det_tp):
            ranked.append((-ds[i].score, pos + i, hit))
        pos += len(ds)
    ranked.sort(key=lambda t: (t[0], t[1]))
    tp_flags = [hit for _, _, hit in ranked]
    tp_cum = np.cumsum(np.array(tp_flags, dtype=float))
    fp_cum = np.cumsum(1.0 - np.array(tp_flags, dtype=float))
    recall = tp_cum / n_gt if n_gt else np.zeros_like(tp_cum)
    precision = tp_cum / np.maximum(tp_cum + fp_cum, np.finfo(float).tiny)
    scores = np.array([-t[0] for t in ranked])
    tp = int(tp_cum[-1]) if len(tp_cum) else 0
    return PRCurve(recall, precision, scores, n_gt, tp, len(ranked) - tp)


def ap_from_curve(curve: PRCurve, variant: str = "all_points") -> float:
    if curve.n_gt == 0:
        raise UndefinedMetricError("average precision is undefined without ground truth")
    rec, prec = curve.recall, curve.precision
    if variant == "eleven_point":
        vals = []
        for t in np.linspace(0.0, 1.0, 11):
            sel = prec[rec >= t]
            vals.append(sel.max() if sel.size else 0.0)
        return float(np.mean(vals))
    if variant != "all_points":
        raise InvalidInputError(f"unknown AP variant {variant!r}")
    mrec = np.concatenate([[0.0], rec])
    mpre = np.concatenate([[0.0], prec])
    # precision envelope: max over all recall levels to the right
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    return float(np.sum((mrec[1:] - mrec[:-1]) * mpre[1:]))


def average_precision(dets, gts, iou_thresh: float = 0.5, variant: str = "all_points",
                      label: str | None = None) -> float:
    """Area under the precision-recall curve.

    ``all_points`` integrates the monotone precision envelope over recall;
    ``eleven_point`` averages interpolated precision at recall 0, 0.1, ..., 1.
    Raises :class:`UndefinedMetricError` when there is no ground truth.
    """
    return ap_from_curve(pr_curve(dets, gts, iou_thresh, label), variant)


def mean_ap(per_class_ap: Mapping[str, float | None],
            applicable_classes: Sequence[str] | None = None) -> float:
    """Unweighted mean over classes with a defined AP (None/NaN entries are N/A)."""
    keys = applicable_classes if applicable_classes is not None else list(per_class_ap)
    vals = [per_class_ap[k] for k in keys
            if per_class_ap.get(k) is not None and not math.isnan(per_class_ap[k])]
    if not vals:
        raise UndefinedMetricError("no class has ground truth; mAP is undefined")
    return float(np.mean(vals))


def accuracy_confusion(pred: Sequence[int], true: Sequence[int],
                       n_classes: int) -> tuple[np.ndarray, float]:
    """Confusion matrix ``C[true, pred]`` and overall accuracy ``trace / total``."""
    p = np.asarray(pred, dtype=int)
    t = np.asarray(true, dtype=int)
    if p.shape != t.shape:
        raise InvalidInputError("prediction and truth lists differ in length")
    for name, arr in (("pred", p), ("true", t)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InvalidInputError(f"{name} label outside [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (t, p), 1)
    total = cm.sum()
    if total == 0:
        raise UndefinedMetricError("accuracy of an empty label list")
    return cm, float(np.trace(cm) / total)


def msad(a, b, window: LabeledBox | tuple[int, int, int, int] | None = None) -> float:
    """Mean absolute per-pixel difference, optionally inside a pixel window
    ``(x, y, width, height)`` applied to both images."""
    da = np.asarray(getattr(a, "data", a), dtype=np.float64)
    db = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if window is not None:
        if isinstance(window, LabeledBox):
            window = (window.x, window.y, window.width, window.height)
        x, y, w, h = (int(round(v)) for v in window)
        da = da[max(y, 0):y + h, max(x, 0):x + w]
        db = db[max(y, 0):y + h, max(x, 0):x + w]
    if da.shape != db.shape:
        raise InvalidInputError(f"image shapes differ: {da.shape} vs {db.shape}")
    if da.size == 0:
        raise InvalidInputError("empty comparison window")
    return float(np.mean(np.abs(da - db)))


def evaluate(dets: Mapping[str, Boxes], gts: Mapping[str, Boxes], iou_thresh: float = 0.5,
             variant: str = "all_points") -> dict:
    """Per-class AP/TP/FP/FN, mAP over classes with ground truth, and PR curves."""
    classes = sorted({b.label for bs in gts.values() for b in bs}
                     | {b.label for bs in dets.values() for b in bs})
    per_class, curves, aps = {}, {}, {}
    for c in classes:
        curve = pr_curve(dets, gts, iou_thresh, label=c)
        ap = ap_from_curve(curve, variant) if curve.n_gt else None
        aps[c] = ap
        per_class[c] = {"ap": ap, "tp": curve.tp, "fp": curve.fp, "fn": curve.fn}
        curves[c] = [list(p) for p in curve.points()]
    try:
        m = mean_ap(aps)
    except UndefinedMetricError:
        m = None
    return {"per_class": per_class, "map": m, "pr_curves": curves,
            "iou_threshold": iou_thresh, "ap_variant": variant}
