import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from radaraug.detect import LabeledBox
from radaraug.errors import InvalidInputError, UndefinedMetricError
from radaraug.geometry import CartesianImage
from radaraug.metrics import (accuracy_confusion, average_precision, evaluate, iou,
                              match_detections, mean_ap, msad, pr_curve)


def B(x, y, w, h, label="a", score=1.0):
    return LabeledBox(x, y, w, h, label, score)


boxes = st.builds(B, st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 40),
                  st.floats(0.1, 40))


# --- IoU --------------------------------------------------------------------

def test_iou_examples():
    assert iou(B(0, 0, 2, 2), B(1, 1, 2, 2)) == 1 / 7
    assert iou(B(3, 4, 5, 6), B(3, 4, 5, 6)) == 1.0
    assert iou(B(0, 0, 1, 1), B(5, 5, 1, 1)) == 0.0
    assert iou(B(0, 0, 1, 1), B(1, 0, 1, 1)) == 0.0


@given(boxes, boxes, st.floats(0.1, 10))
def test_iou_symmetric_bounded_scale_invariant(a, b, k):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    sa = B(a.x * k, a.y * k, a.width * k, a.height * k)
    sb = B(b.x * k, b.y * k, b.width * k, b.height * k)
    assert iou(sa, sb) == pytest.approx(v, abs=1e-9)


# --- matching ---------------------------------------------------------------

def test_match_examples():
    gt = [B(0, 0, 10, 10)]
    r = match_detections([B(0, 0, 10, 10, score=0.9)], gt)
    assert (r.tp, r.fp, r.fn) == (1, 0, 0)
    r = match_detections([B(0, 0, 10, 10, score=0.9), B(1, 1, 10, 10, score=0.8)], gt)
    assert (r.tp, r.fp, r.fn) == (1, 1, 0)
    r = match_detections([], [B(0, 0, 1, 1), B(5, 5, 1, 1), B(9, 9, 1, 1)])
    assert (r.tp, r.fp, r.fn) == (0, 0, 3)


def test_match_respects_class_and_threshold():
    gt = [B(0, 0, 10, 10, "car")]
    assert match_detections([B(0, 0, 10, 10, "bike")], gt).tp == 0
    assert match_detections([B(6, 0, 10, 10, "car")], gt, 0.5).tp == 0
    assert match_detections([B(6, 0, 10, 10, "car")], gt, 0.2).tp == 1


def test_match_takes_highest_iou_unmatched_gt():
    gts = [B(0, 0, 10, 10), B(2, 0, 10, 10)]
    r = match_detections([B(2, 0, 10, 10, score=0.9), B(0, 0, 10, 10, score=0.8)], gts)
    assert r.gt_matched == [True, True] and r.tp == 2


@settings(max_examples=50)
@given(st.lists(boxes, max_size=8), st.lists(boxes, max_size=8))
def test_match_invariants(dets, gts):
    r = match_detections(dets, gts, 0.3)
    assert r.tp <= min(len(dets), len(gts))
    assert r.tp == sum(r.gt_matched)
    assert r.tp + r.fp == len(dets) and r.tp + r.fn == len(gts)


# --- AP ---------------------------------------------------------------------

def _tp_fp_tp():
    gts = [B(0, 0, 10, 10), B(100, 100, 10, 10)]
    dets = [B(0, 0, 10, 10, score=0.9), B(50, 50, 10, 10, score=0.8),
            B(100, 100, 10, 10, score=0.7)]
    return dets, gts


def test_ap_hand_computed_case():
    dets, gts = _tp_fp_tp()
    assert average_precision(dets, gts) == pytest.approx(0.5 * 1 + 0.5 * 2 / 3, abs=1e-12)
    # eleven points: recall <= 0.5 -> 1.0 (6 levels), above -> 2/3 (5 levels)
    assert average_precision(dets, gts, variant="eleven_point") == pytest.approx(
        (6 * 1.0 + 5 * 2 / 3) / 11, abs=1e-12)


def test_ap_trivial_cases():
    gt = [B(0, 0, 10, 10)]
    for v in ("all_points", "eleven_point"):
        assert average_precision([B(0, 0, 10, 10)], gt, variant=v) == 1.0
        assert average_precision([B(50, 50, 10, 10)], gt, variant=v) == 0.0
    with pytest.raises(UndefinedMetricError):
        average_precision([B(0, 0, 1, 1)], [])
    with pytest.raises(InvalidInputError):
        average_precision([B(0, 0, 10, 10)], gt, variant="coco")


def test_pr_curve_pools_images_by_score():
    dets = {"a": [B(0, 0, 10, 10, score=0.9)], "b": [B(0, 0, 10, 10, score=0.95),
                                                   B(50, 0, 10, 10, score=0.1)]}
    gts = {"a": [B(0, 0, 10, 10)], "b": [B(0, 0, 10, 10)], "c": [B(0, 0, 5, 5)]}
    c = pr_curve(dets, gts)
    assert c.n_gt == 3 and c.tp == 2 and c.fp == 1 and c.fn == 1
    np.testing.assert_allclose(c.scores, [0.95, 0.9, 0.1])
    np.testing.assert_allclose(c.recall, [1 / 3, 2 / 3, 2 / 3])
    np.testing.assert_allclose(c.precision, [1, 1, 2 / 3])


def _random_case(seed):
    rng = np.random.default_rng(seed)
    gts = [B(float(x), float(y), 10, 10) for x, y in rng.uniform(0, 500, (6, 2))]
    dets = []
    for g in gts:
        if rng.random() < 0.7:
            dets.append(B(g.x + rng.normal(0, 2), g.y + rng.normal(0, 2), 10, 10,
                          score=float(rng.random())))
    for x, y in rng.uniform(0, 500, (rng.integers(0, 5), 2)):
        dets.append(B(float(x), float(y), 10, 10, score=float(rng.random())))
    return dets, gts


@settings(max_examples=50)
@given(st.integers(0, 2 ** 31))
def test_ap_properties(seed):
    dets, gts = _random_case(seed)
    ap = average_precision(dets, gts)
    assert 0.0 <= ap <= 1.0
    # strictly monotone score transform
    warped = [B(d.x, d.y, d.width, d.height, score=d.score ** 3 / 2) for d in dets]
    assert average_precision(warped, gts) == pytest.approx(ap, abs=1e-12)
    # an extra lowest-score false positive never raises AP
    extra = dets + [B(9000, 9000, 10, 10, score=0.0)]
    assert average_precision(extra, gts) <= ap + 1e-12
    curve = pr_curve(dets, gts)
    assert np.all(np.diff(curve.recall) >= 0)
    assert np.all((curve.precision >= 0) & (curve.precision <= 1))


def test_ap_against_sklearn_style_oracle():
    # independent computation: sum over TP ranks of precision-envelope * (1 / n_gt)
    for seed in range(30):
        dets, gts = _random_case(seed)
        curve = pr_curve(dets, gts)
        flags = np.diff(np.concatenate([[0.0], curve.recall * curve.n_gt])) > 0.5
        env = [curve.precision[i:].max() for i in range(len(flags))]
        ref = sum(e for e, f in zip(env, flags) if f) / curve.n_gt
        assert average_precision(dets, gts) == pytest.approx(ref, abs=1e-12)


# --- mAP and accuracy -------------------------------------------------------

def test_mean_ap_examples():
    assert mean_ap({"a": 0.5, "b": 1.0}) == 0.75
    assert mean_ap({"a": 0.8, "b": None, "c": 0.4}) == pytest.approx(0.6)
    assert mean_ap({"a": 0.8, "b": math.nan, "c": 0.4}) == pytest.approx(0.6)
    assert mean_ap({"x": 0.3}) == 0.3
    assert mean_ap({"a": 0.8, "b": 0.2}, ["a"]) == 0.8
    with pytest.raises(UndefinedMetricError):
        mean_ap({"a": None})


def test_accuracy_confusion_examples():
    cm, acc = accuracy_confusion([0, 1, 2], [0, 1, 2], 3)
    assert acc == 1.0 and np.array_equal(cm, np.eye(3, dtype=int))
    cm, acc = accuracy_confusion([1, 0], [0, 1], 2)
    assert acc == 0.0
    cm, acc = accuracy_confusion([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert acc == 0.75 and cm.tolist() == [[1, 1], [0, 2]]
    with pytest.raises(InvalidInputError):
        accuracy_confusion([0, 3], [0, 1], 2)
    with pytest.raises(InvalidInputError):
        accuracy_confusion([0], [0, 1], 2)


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_accuracy_is_frequency_weighted_recall(pairs):
    pred = [p for p, _ in pairs]
    true = [t for _, t in pairs]
    cm, acc = accuracy_confusion(pred, true, 4)
    support = cm.sum(axis=1)
    recall = np.divide(np.diag(cm), support, out=np.zeros(4), where=support > 0)
    assert acc == pytest.approx(float((recall * support).sum() / support.sum()))


# --- MSAD -------------------------------------------------------------------

def test_msad_examples():
    a = CartesianImage(np.random.default_rng(0).normal(size=(10, 12)), 0.01)
    assert msad(a, a) == 0.0
    assert msad(a, a.with_data(a.data - 2.5)) == pytest.approx(2.5)
    b = a.with_data(a.data + np.random.default_rng(1).normal(size=(10, 12)))
    assert msad(a, b) == msad(b, a)
    win = msad(a, b, (2, 3, 4, 5))
    assert win == pytest.approx(np.abs(a.data[3:8, 2:6] - b.data[3:8, 2:6]).mean())
    assert msad(a, b, LabeledBox(2, 3, 4, 5)) == win
    with pytest.raises(InvalidInputError):
        msad(a, np.zeros((3, 3)))


@given(st.integers(0, 2 ** 31))
def test_msad_is_a_pseudometric(seed):
    rng = np.random.default_rng(seed)
    x, y, z = rng.normal(size=(3, 6, 7))
    assert msad(x, y) >= 0
    assert msad(x, z) <= msad(x, y) + msad(y, z) + 1e-12


# --- report -----------------------------------------------------------------

def test_evaluate_report_shape_and_na_classes():
    gts = {"s1": [B(0, 0, 10, 10, "car"), B(50, 50, 10, 10, "bike")]}
    dets = {"s1": [B(0, 0, 10, 10, "car", 0.9), B(200, 200, 10, 10, "dog", 0.4)]}
    rep = evaluate(dets, gts)
    assert rep["per_class"]["car"] == {"ap": 1.0, "tp": 1, "fp": 0, "fn": 0}
    assert rep["per_class"]["bike"]["ap"] == 0.0
    assert rep["per_class"]["dog"]["ap"] is None
    assert rep["map"] == 0.5
    assert set(rep) == {"per_class", "map", "pr_curves", "iou_threshold", "ap_variant"}
