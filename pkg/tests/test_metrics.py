import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orfseg.metrics import (accuracy, confusion, evaluate, image_metrics, iou, precision,
                            recall, report_from_dict)


def square(shape, r0, r1, c0, c1):
    m = np.zeros(shape, np.uint8)
    m[r0:r1, c0:c1] = 1
    return m


def test_identical_masks():
    t = square((8, 8), 1, 5, 2, 7)
    m = image_metrics("a", t, t)
    assert (m.precision, m.recall, m.accuracy, m.iou) == (1.0, 1.0, 1.0, 1.0)
    assert m.vacuous == []


def test_hand_case_4x4():
    truth = square((4, 4), 0, 2, 0, 4)
    pred = truth.copy()
    pred[0, 0] = pred[1, 3] = 0
    pred[2, 0] = pred[3, 3] = 1
    c = confusion(pred, truth)
    assert (c.tp, c.fp, c.fn, c.tn) == (6, 2, 2, 6)
    assert precision(c) == 0.75 and recall(c) == 0.75 and accuracy(c) == 0.75
    assert iou(pred, truth) == pytest.approx(0.6)


def test_empty_prediction():
    truth = square((6, 6), 0, 3, 0, 3)
    m = image_metrics("a", np.zeros((6, 6), np.uint8), truth)
    assert m.precision == 1.0 and "precision" in m.vacuous
    assert m.recall == 0.0 and m.iou == 0.0


def test_pure_negative_inversion():
    truth = np.zeros((4, 4), np.uint8)
    assert iou(np.zeros((4, 4), np.uint8), truth) == 1.0
    pred = np.zeros((4, 4), np.uint8)
    pred[0, :2] = 1
    assert iou(pred, truth) == pytest.approx(14 / 16)
    m = image_metrics("n", pred, truth)
    assert m.recall == 1.0 and "recall" in m.vacuous
    assert m.precision == 0.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        confusion(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8))


def test_macro_means_and_json(tmp_path):
    t1 = square((4, 4), 0, 2, 0, 4)
    p1 = t1.copy()
    t2 = square((4, 4), 0, 4, 0, 2)
    p2 = square((4, 4), 0, 4, 0, 1)
    rep = evaluate(["x", "y"], {"x": t1, "y": t2}, {"x": p1, "y": p2})
    assert rep.mean_recall == pytest.approx((1.0 + 0.5) / 2)
    assert rep.mean_iou == pytest.approx(np.mean([m.iou for m in rep.per_image]))
    rep.to_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert report_from_dict(data) == rep
    assert "mean" in rep.table()
    with pytest.raises(KeyError):
        evaluate(["x", "z"], {"x": t1, "z": t2}, {"x": p1})


def test_bounds_random_pairs():
    rng = np.random.default_rng(3)
    for _ in range(200):
        shape = tuple(rng.integers(1, 12, size=2))
        p = (rng.random(shape) < rng.random()).astype(np.uint8)
        t = (rng.random(shape) < rng.random()).astype(np.uint8)
        m = image_metrics("r", p, t)
        for v in (m.precision, m.recall, m.accuracy, m.iou):
            assert 0.0 <= v <= 1.0
        c = confusion(p, t)
        assert c.total == p.size


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_iou_symmetric_and_self(h, w, seed):
    rng = np.random.default_rng(seed)
    p = (rng.random((h, w)) < 0.5).astype(np.uint8)
    t = (rng.random((h, w)) < 0.5).astype(np.uint8)
    assert iou(t, t) == 1.0
    if p.any() and t.any():
        assert iou(p, t) == iou(t, p)
