"""Dense tensor primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects of dtype float64, laid out
channels-first (C, H, W).
"""

import numpy as np


def as_tensor(x, ndim=None):
    """Coerce to a finite float64 array, optionally checking rank."""
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected rank {ndim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def softmax_channel(logits):
    """Softmax over axis 0 of a (n, H, W) tensor, max-subtracted."""
    z = as_tensor(logits, 3)
    if z.shape[0] < 2:
        raise ValueError("softmax needs at least two channels")
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def argmax_channel(logits):
    """Per-pixel argmax over channels; ties resolve to the lowest index."""
    z = np.asarray(logits)
    if z.ndim != 3 or z.shape[0] < 1:
        raise ValueError(f"expected (n, H, W) with n >= 1, got {z.shape}")
    # np.argmax returns the first occurrence of the maximum
    return np.argmax(z, axis=0).astype(np.uint8)


def max_prob_channel(logits):
    """Return (argmax labels, max softmax probability) per pixel."""
    p = softmax_channel(logits)
    return argmax_channel(logits), p.max(axis=0)


def l1_distance(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def l1_to_rows(query, rows):
    """L1 distance from ``query`` to every row of ``rows``."""
    return np.abs(rows - query[None, :]).sum(axis=1)
