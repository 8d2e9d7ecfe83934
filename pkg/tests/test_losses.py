import math

import numpy as np
import pytest

from simseg.banks import InstanceBank, StuffBank
from simseg.labels import DONT_CARE
from simseg.losses import (LossResult, LossWeights, adv_loss, disc_loss, instance_loss,
                           seg_loss, step1_total, step2_total, stuff_loss)


def central_diff(fn, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = fn()
        x[idx] = old - h
        down = fn()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def test_seg_peaked_and_uniform():
    y = np.array([[0, 1], [2, 1]], dtype=np.uint8)
    z = np.zeros((3, 2, 2))
    assert seg_loss(z, y).value == pytest.approx(math.log(3), rel=1e-14)
    for (r, c), k in np.ndenumerate(y):
        z[k, r, c] = 20.0
    assert seg_loss(z, y).value < 1e-3


def test_seg_gradient(rng):
    z = rng.normal(size=(3, 4, 4))
    y = rng.integers(0, 3, (4, 4)).astype(np.uint8)
    res = seg_loss(z, y)
    assert rel(res.grad, central_diff(lambda: seg_loss(z, y).value, z)) <= 1e-6


def test_seg_ignores_dont_care(rng):
    z = rng.normal(size=(3, 4, 4))
    y = rng.integers(0, 3, (4, 4)).astype(np.uint8)
    y[:2] = DONT_CARE
    res = seg_loss(z, y)
    assert np.all(res.grad[:, :2] == 0)
    assert res.value == pytest.approx(seg_loss(z[:, 2:], y[2:]).value, rel=1e-14)
    empty = seg_loss(z, np.full((4, 4), DONT_CARE, dtype=np.uint8))
    assert empty.empty and empty.value == 0.0 and not empty.grad.any()


def test_adv_loss(rng):
    assert adv_loss(np.full((1, 3, 3), 0.5)).value == pytest.approx(math.log(2), rel=1e-14)
    assert adv_loss(np.full((1, 2, 2), 1e-12)).value < 1e-11
    d = rng.uniform(0.05, 0.95, (1, 4, 4))
    assert rel(adv_loss(d).grad, central_diff(lambda: adv_loss(d).value, d)) <= 1e-6
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            adv_loss(np.full((1, 2, 2), bad))


def test_disc_loss(rng):
    half = np.full((1, 3, 3), 0.5)
    assert disc_loss(half, half).value == pytest.approx(2 * math.log(2), rel=1e-14)
    assert disc_loss(np.full((1, 2, 2), 1e-12), np.full((1, 2, 2), 1 - 1e-12)).value < 1e-10
    s = rng.uniform(0.05, 0.95, (1, 4, 4))
    t = rng.uniform(0.05, 0.95, (1, 4, 4))
    res = disc_loss(s, t)
    assert rel(res.grad["src"], central_diff(lambda: disc_loss(s, t).value, s)) <= 1e-6
    assert rel(res.grad["tgt"], central_diff(lambda: disc_loss(s, t).value, t)) <= 1e-6
    with pytest.raises(ValueError):
        disc_loss(np.zeros((1, 2, 2)), half[:, :2, :2])


def _brute_stuff(labels, f, bank, classes):
    total = 0.0
    for b in classes:
        pix = [(y, x) for y in range(labels.shape[0]) for x in range(labels.shape[1])
               if labels[y, x] == b]
        if not pix or bank.valid_count(b) == 0:
            continue
        vec = [sum(f[c, y, x] for y, x in pix) / len(pix) for c in range(f.shape[0])]
        total += min(sum(abs(v - s) for v, s in zip(vec, slot)) for slot in bank.valid(b))
    return total


def test_stuff_exact_sample_gives_zero(rng):
    f = rng.normal(size=(3, 4, 4))
    labels = np.zeros((4, 4), dtype=np.uint8)
    bank = StuffBank((0, 1), 3, 3)
    bank.insert(0, rng.normal(size=3))
    bank.insert(0, f.mean(axis=(1, 2)))
    res = stuff_loss(labels, f, bank)
    assert res.value == pytest.approx(0.0, abs=1e-14)
    assert stuff_loss(np.full((4, 4), 4, dtype=np.uint8), f, bank).value == 0.0


def test_stuff_brute_force_and_gradient(rng):
    f = rng.normal(size=(4, 5, 5))
    labels = rng.integers(0, 3, (5, 5)).astype(np.uint8)
    bank = StuffBank((0, 1), 3, 4)
    for b in (0, 1):
        for _ in range(3):
            bank.insert(b, rng.normal(0, 0.5, 4))
    res = stuff_loss(labels, f, bank)
    assert res.value == pytest.approx(_brute_stuff(labels, f, bank, (0, 1)), rel=1e-12)
    assert rel(res.grad, central_diff(lambda: stuff_loss(labels, f, bank).value, f)) <= 1e-6
    # class 2 is not a stuff class here, so its pixels get no gradient
    assert not res.grad[:, labels == 2].any()


def test_instance_zero_when_regions_stored(rng):
    f = rng.normal(size=(3, 6, 6))
    labels = np.zeros((6, 6), dtype=np.uint8)
    labels[0, 0:2] = 3
    labels[3:5, 3:5] = 3
    bank = InstanceBank((3,), 2, 3, z=2)
    bank.harvest(labels, f)
    assert instance_loss(labels, f, bank).value == pytest.approx(0.0, abs=1e-14)
    assert instance_loss(np.zeros((6, 6), dtype=np.uint8), f, bank).value == 0.0


def test_instance_brute_force_and_gradient(rng):
    f = rng.normal(size=(3, 6, 6))
    labels = np.zeros((6, 6), dtype=np.uint8)
    labels[0, 0:3] = 4
    labels[3:6, 2:4] = 4
    bank = InstanceBank((4,), 2, 3, z=2)
    slots = rng.normal(0, 0.5, (4, 3))
    for s in slots:
        bank._write(4, s)
    regions = [[(0, 0), (0, 1), (0, 2)], [(y, x) for y in range(3, 6) for x in (2, 3)]]
    dists = []
    for pix in regions:
        vec = np.array([sum(f[c, y, x] for y, x in pix) / len(pix) for c in range(3)])
        dists.append(min(np.abs(vec - s).sum() for s in slots))
    res = instance_loss(labels, f, bank)
    assert res.value == pytest.approx(sum(dists) / 2, rel=1e-12)
    assert rel(res.grad, central_diff(lambda: instance_loss(labels, f, bank).value, f)) <= 1e-6


def test_instance_cap_normalizes_over_kept(rng):
    f = rng.normal(size=(2, 8, 8))
    labels = np.zeros((8, 8), dtype=np.uint8)
    for x in range(0, 8, 2):
        labels[0, x] = 3  # four single-pixel regions
    bank = InstanceBank((3,), 1, 2, z=1)
    bank._write(3, np.zeros(2))
    capped = instance_loss(labels, f, bank, cap=2)
    expected = (np.abs(f[:, 0, 0]).sum() + np.abs(f[:, 0, 2]).sum()) / 2
    assert capped.value == pytest.approx(expected, rel=1e-12)


def test_step_totals(rng):
    parts = {"seg_s": 0.7, "seg_t": 0.4, "adv": 0.6, "stf": 2.0, "ins": 3.0, "d": 1.3}
    w = LossWeights()
    assert step1_total(parts, w).value == pytest.approx(0.7 + 0.001 * 0.6 + 0.01 * 5.0)
    assert step1_total(parts, w).detail["d"] == 1.3
    assert step2_total(parts, w).value == pytest.approx(1.1 + 0.001 * 0.6 + 0.01 * 5.0)
    zero = LossWeights(0, 0, 0, 0)
    assert step1_total(parts, zero).value == 0.0 and step2_total(parts, zero).value == 0.0
    aa_only = step1_total(parts, LossWeights(ci=0.0)).value
    assert aa_only == pytest.approx(0.7 + 0.001 * 0.6)
    # linear in each weight
    for name in ("seg", "adv", "ci"):
        vals = [step1_total(parts, LossWeights(**{name: lam})).value for lam in (0.0, 1.0, 2.0)]
        assert vals[2] - vals[1] == pytest.approx(vals[1] - vals[0], rel=1e-12)


def test_step_total_scales_gradients():
    g = np.ones((2, 2))
    parts = {"seg_s": LossResult(1.0, g), "stf": LossResult(2.0, 2 * g)}
    res = step1_total(parts, LossWeights(seg=0.5, ci=0.1))
    assert np.allclose(res.grad["seg_s"], 0.5) and np.allclose(res.grad["stf"], 0.2)


def test_nonnegative_on_random_inputs(rng):
    for _ in range(50):
        z = rng.normal(size=(4, 3, 3))
        y = rng.integers(0, 4, (3, 3)).astype(np.uint8)
        d = rng.uniform(0.01, 0.99, (1, 2, 2))
        assert seg_loss(z, y).value >= 0
        assert adv_loss(d).value >= 0
        assert disc_loss(d, d[:, ::-1]).value >= 0
