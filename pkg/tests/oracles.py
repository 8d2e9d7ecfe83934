"""Independent reference implementations used only by the tests."""

from collections import deque

import numpy as np


def flood_fill_regions(labels, k):
    """Brute-force 4-connected components of class k as sets of (row, col)."""
    h, w = labels.shape
    seen = np.zeros((h, w), dtype=bool)
    regions = []
    for y in range(h):
        for x in range(w):
            if labels[y, x] != k or seen[y, x]:
                continue
            comp = set()
            queue = deque([(y, x)])
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                comp.add((cy, cx))
                for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                    if 0 <= ny < h and 0 <= nx < w and not seen[ny, nx] and labels[ny, nx] == k:
                        seen[ny, nx] = True
                        queue.append((ny, nx))
            regions.append(comp)
    return regions


def mask_to_set(mask):
    return {(int(y), int(x)) for y, x in zip(*np.nonzero(mask))}


def regions_match(masks, oracle):
    return sorted(map(sorted, (mask_to_set(m.mask) for m in masks))) == sorted(map(sorted, oracle))


class RingOracle:
    """Keeps every insert; the bank must hold the last ``capacity`` of them."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.items = []

    def push(self, v):
        self.items.append(np.array(v))

    def expected_slots(self):
        n = len(self.items)
        slots = [None] * min(n, self.capacity)
        for i, v in enumerate(self.items):
            slots[i % self.capacity] = v
        return slots

    def tail(self):
        return self.items[-self.capacity:]


def confusion_iou(gt, pred, n):
    """Per-class IoU by explicit pixel loops."""
    tp = np.zeros(n)
    fp = np.zeros(n)
    fn = np.zeros(n)
    for g, p in zip(np.ravel(gt), np.ravel(pred)):
        if g == 255:
            continue
        if g == p:
            tp[g] += 1
        else:
            fn[g] += 1
            fp[p] += 1
    out = np.full(n, np.nan)
    for k in range(n):
        if tp[k] + fp[k] + fn[k] > 0:
            out[k] = tp[k] / (tp[k] + fp[k] + fn[k])
    return out


def conv2d_naive(x, w, b, stride=1, pad=0):
    c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                acc = b[oc]
                for ic in range(c):
                    for di in range(k):
                        for dj in range(k):
                            acc += w[oc, ic, di, dj] * xp[ic, i * stride + di, j * stride + dj]
                out[oc, i, j] = acc
    return out
