"""Per-class confidence thresholds and pseudo-label maps."""

import csv

import numpy as np

from .labels import DONT_CARE
from .numerics import max_prob_channel

CAP = 0.9


def confidence_pass(logits_set, num_classes=None):
    """Group max-softmax confidences by predicted class over a whole set.

    Returns a list indexed by class id of sorted float64 arrays.
    """
    logits_set = list(logits_set)
    if not logits_set:
        raise ValueError("confidence pass needs at least one image")
    n = num_classes or np.asarray(logits_set[0]).shape[0]
    groups = [[] for _ in range(n)]
    for logits in logits_set:
        labels, conf = max_prob_channel(logits)
        for k in range(n):
            sel = conf[labels == k]
            if sel.size:
                groups[k].append(sel)
    return [np.sort(np.concatenate(g)) if g else np.empty(0) for g in groups]


def lower_median(sorted_values):
    """Middle element; for even counts, the lower of the two middles."""
    return float(sorted_values[(len(sorted_values) - 1) // 2])


def select_thresholds(conf, cap=CAP):
    """min(median confidence, cap) per class; absent classes get ``cap``."""
    out = np.full(len(conf), cap, dtype=np.float64)
    for k, values in enumerate(conf):
        if len(values):
            out[k] = min(lower_median(np.sort(values)), cap)
    return out


def pseudo_labels(logits, thresholds):
    """Argmax label where its softmax probability strictly exceeds the
    class threshold, DONT_CARE elsewhere."""
    labels, conf = max_prob_channel(logits)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    keep = conf > thresholds[labels]
    return np.where(keep, labels, DONT_CARE).astype(np.uint8)


def save_thresholds(path, thresholds):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "threshold"])
        for k, t in enumerate(thresholds):
            w.writerow([k, repr(float(t))])


def load_thresholds(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = np.empty(len(rows))
    for i, row in enumerate(rows):
        if int(row["class_id"]) != i:
            raise ValueError(f"{path}: class ids must be 0..N-1 in order")
        out[i] = float(row["threshold"])
    return out
