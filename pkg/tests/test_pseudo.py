import numpy as np
import pytest

from simseg.labels import DONT_CARE
from simseg.numerics import argmax_channel
from simseg.pseudo import (confidence_pass, load_thresholds, pseudo_labels, save_thresholds,
                           select_thresholds)


def test_confidence_uniform_two_classes():
    conf = confidence_pass([np.zeros((2, 3, 3))])
    assert len(conf[0]) == 9 and np.allclose(conf[0], 0.5) and len(conf[1]) == 0


def test_confidence_peaked():
    z = np.zeros((3, 2, 2))
    z[1] = 40.0
    conf = confidence_pass([z])
    assert len(conf[1]) == 4 and np.all(conf[1] > 1 - 1e-12)


def test_confidence_groups_match_pixel_oracle(rng):
    logits = [rng.normal(0, 2, (3, 4, 5)) for _ in range(3)]
    expected = {0: [], 1: [], 2: []}
    for z in logits:
        for y in range(4):
            for x in range(5):
                col = z[:, y, x]
                e = np.exp(col - col.max())
                p = e / e.sum()
                expected[int(np.argmax(col))].append(p.max())
    conf = confidence_pass(logits)
    for k in range(3):
        assert np.allclose(conf[k], sorted(expected[k]), rtol=1e-14)


def test_confidence_empty_set():
    with pytest.raises(ValueError):
        confidence_pass([])


def test_select_thresholds_examples():
    t = select_thresholds([np.array([0.6, 0.2, 0.4]), np.array([0.95, 0.97, 0.93]), np.empty(0)])
    assert t.tolist() == [0.4, 0.9, 0.9]
    # even count takes the lower middle
    assert select_thresholds([np.array([0.1, 0.2, 0.3, 0.4])]).tolist() == [0.2]


def test_pseudo_extremes(rng):
    z = rng.normal(size=(3, 4, 4))
    assert np.array_equal(pseudo_labels(z, np.zeros(3)), argmax_channel(z))
    assert np.all(pseudo_labels(z, np.ones(3)) == DONT_CARE)


def test_pseudo_rule_on_grid():
    p = np.array([[0.95, 0.55, 0.3], [0.7, 0.51, 0.2], [0.6, 0.85, 0.49]])
    logits = np.log(np.stack([p, 1 - p]))
    thresholds = np.array([0.6, 0.7])
    out = pseudo_labels(logits, thresholds)
    for y in range(3):
        for x in range(3):
            k = 0 if p[y, x] >= 0.5 else 1
            conf = max(p[y, x], 1 - p[y, x])
            assert out[y, x] == (k if conf > thresholds[k] else DONT_CARE)


def test_pseudo_agrees_with_argmax_and_is_monotone(rng):
    for _ in range(100):
        z = rng.normal(0, 2, (4, 5, 5))
        t = rng.uniform(0.2, 0.9, 4)
        out = pseudo_labels(z, t)
        keep = out != DONT_CARE
        assert np.array_equal(out[keep], argmax_channel(z)[keep])
        k = int(rng.integers(0, 4))
        t2 = t.copy()
        t2[k] += rng.uniform(0, 0.3)
        assert (pseudo_labels(z, t2) == k).sum() <= (out == k).sum()


def test_median_threshold_keeps_half_on_odd_counts(rng):
    for _ in range(20):
        z = rng.normal(0, 3, (3, 7, 7))
        conf = confidence_pass([z])
        t = select_thresholds(conf, cap=1.0)
        out = pseudo_labels(z, t)
        for k in range(3):
            n = len(conf[k])
            if n and len(np.unique(conf[k])) == n:
                assert (out == k).sum() == n - (n + 1) // 2


def test_threshold_csv_round_trip(tmp_path):
    t = np.array([0.1234567890123, 0.9, 0.5])
    save_thresholds(tmp_path / "t.csv", t)
    assert np.array_equal(load_thresholds(tmp_path / "t.csv"), t)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "class_id,threshold"
