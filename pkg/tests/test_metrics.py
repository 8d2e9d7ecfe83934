import numpy as np
import pytest

from simseg.labels import DONT_CARE
from simseg.metrics import ConfusionMatrix, score

from oracles import confusion_iou


def test_perfect_prediction(rng):
    labels = [rng.integers(0, 6, (8, 8)).astype(np.uint8) for _ in range(3)]
    assert score(labels, labels, 6).miou() == 1.0


def test_constant_prediction(rng):
    gt = rng.integers(0, 4, (10, 10)).astype(np.uint8)
    cm = score([np.full_like(gt, 2)], [gt], 4)
    iou = cm.iou()
    assert iou[2] == pytest.approx((gt == 2).mean())
    assert iou[0] == iou[1] == iou[3] == 0.0


def test_random_matches_oracle(rng):
    gts = [rng.integers(0, 6, (6, 6)).astype(np.uint8) for _ in range(4)]
    preds = [rng.integers(0, 6, (6, 6)).astype(np.uint8) for _ in range(4)]
    gts[0][0, :3] = DONT_CARE
    ref = confusion_iou(np.stack(gts), np.stack(preds), 6)
    cm = score(preds, gts, 6)
    assert np.allclose(cm.iou(), ref, rtol=1e-14)
    assert cm.miou() == pytest.approx(np.nanmean(ref), rel=1e-14)


def test_absent_classes_excluded():
    gt = np.array([[0, 0], [1, 1]], dtype=np.uint8)
    cm = score([gt], [gt], 4)
    assert np.isnan(cm.iou()[2:]).all() and cm.miou() == 1.0


def test_order_independent(rng):
    gts = [rng.integers(0, 3, (4, 4)) for _ in range(5)]
    preds = [rng.integers(0, 3, (4, 4)) for _ in range(5)]
    a = score(preds, gts, 3).mat
    b = score(preds[::-1], gts[::-1], 3).mat
    assert np.array_equal(a, b)


def test_empty_matrix_raises():
    with pytest.raises(ValueError):
        ConfusionMatrix(3).miou()
