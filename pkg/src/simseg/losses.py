"""Training objectives with analytic gradients.

Every loss returns a :class:`LossResult` whose ``grad`` has the shape of the
differentiable input (or a dict of such arrays when there are several).
"""

from dataclasses import dataclass, field

import numpy as np

from .labels import DONT_CARE, as_label_map, connected_regions
from .numerics import softmax_channel
from .pooling import masked_mean


@dataclass
class LossResult:
    value: float
    grad: object
    empty: bool = False
    detail: dict = field(default_factory=dict)


@dataclass
class LossWeights:
    seg: float = 1.0
    adv: float = 0.001
    ci: float = 0.01
    d: float = 1.0

    def __post_init__(self):
        for name in ("seg", "adv", "ci", "d"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def seg_loss(logits, labels):
    """Pixel-mean cross entropy; DONT_CARE pixels are ignored."""
    labels = as_label_map(labels)
    prob = softmax_channel(logits)
    n = prob.shape[0]
    if labels.shape != prob.shape[1:]:
        raise ValueError(f"labels {labels.shape} vs logits {prob.shape}")
    valid = labels != DONT_CARE
    count = int(valid.sum())
    grad = np.zeros_like(prob)
    if count == 0:
        return LossResult(0.0, grad, empty=True)
    if labels[valid].max() >= n:
        raise ValueError("label id out of range for logits")
    rows, cols = np.nonzero(valid)
    cls = labels[rows, cols].astype(np.intp)
    # log-softmax directly from logits keeps peaked cases accurate
    z = np.asarray(logits, dtype=np.float64)
    zmax = z.max(axis=0)
    logsum = zmax + np.log(np.exp(z - zmax).sum(axis=0))
    value = float((logsum[rows, cols] - z[cls, rows, cols]).sum() / count)
    grad[:, valid] = prob[:, valid]
    grad[cls, rows, cols] -= 1.0
    grad /= count
    return LossResult(value, grad)


def _check_open_unit(*arrays):
    for a in arrays:
        if not (np.all(a > 0.0) and np.all(a < 1.0)):
            raise ValueError("discriminator outputs must lie strictly in (0, 1)")


def adv_loss(d_out):
    """Mean of -log(1 - D) over target pixels."""
    d = np.asarray(d_out, dtype=np.float64)
    _check_open_unit(d)
    value = float(-np.log1p(-d).mean())
    grad = 1.0 / (1.0 - d) / d.size
    return LossResult(value, grad)


def disc_loss(d_src, d_tgt):
    """-mean log D(target) - mean log(1 - D(source)).

    The discriminator is trained to answer 1 on target maps.
    """
    s = np.asarray(d_src, dtype=np.float64)
    t = np.asarray(d_tgt, dtype=np.float64)
    _check_open_unit(s, t)
    src_part = float(-np.log1p(-s).mean())
    tgt_part = float(-np.log(t).mean())
    grad = {"src": 1.0 / (1.0 - s) / s.size, "tgt": -1.0 / t / t.size}
    return LossResult(src_part + tgt_part, grad, detail={"src": src_part, "tgt": tgt_part})


def _match(mask, features, bank, k, grad, scale):
    """Distance from the pooled vector over ``mask`` to its nearest slot.

    Adds ``scale * d(distance)/d(features)`` into ``grad``; pooling weights
    are constants. Returns the distance, or None if the bank is empty.
    """
    vec, count = masked_mean(mask, features)
    hit = bank.nearest(k, vec)
    if hit is None:
        return None
    j, dist = hit
    direction = np.sign(vec - bank.valid(k)[j])
    grad[:, mask] += (scale / count) * direction[:, None]
    return dist, j


def stuff_loss(pred_labels, features, bank):
    """Sum over present stuff classes of the L1 distance to the nearest slot."""
    labels = as_label_map(pred_labels)
    f = np.asarray(features, dtype=np.float64)
    if f.shape[1:] != labels.shape:
        raise ValueError(f"features {f.shape} vs labels {labels.shape}")
    grad = np.zeros_like(f)
    value = 0.0
    matched = {}
    for b in bank.class_ids:
        mask = labels == b
        if not mask.any():
            continue
        hit = _match(mask, f, bank, b, grad, 1.0)
        if hit is None:
            continue
        value += hit[0]
        matched[b] = hit
    return LossResult(value, grad, empty=not matched, detail=matched)


def instance_loss(pred_labels, features, bank, cap=10):
    """Per thing class, mean distance of the ``cap`` largest regions to their
    nearest slot; summed over classes."""
    labels = as_label_map(pred_labels)
    f = np.asarray(features, dtype=np.float64)
    if f.shape[1:] != labels.shape:
        raise ValueError(f"features {f.shape} vs labels {labels.shape}")
    grad = np.zeros_like(f)
    value = 0.0
    matched = {}
    for k in bank.class_ids:
        if bank.valid_count(k) == 0:
            continue
        kept = connected_regions(labels, k)[:cap]
        if not kept:
            continue
        scale = 1.0 / len(kept)
        hits = [_match(r.mask, f, bank, k, grad, scale) for r in kept]
        value += scale * sum(h[0] for h in hits)
        matched[k] = hits
    return LossResult(value, grad, empty=not matched, detail=matched)


def _value(part):
    return part.value if isinstance(part, LossResult) else float(part)


def _weighted(parts, coeffs):
    value = 0.0
    grads = {}
    for name, w in coeffs:
        part = parts.get(name)
        if part is None:
            continue
        value += w * _value(part)
        if isinstance(part, LossResult):
            grads[name] = _scale(part.grad, w)
    return value, grads


def _scale(g, w):
    if isinstance(g, dict):
        return {k: w * v for k, v in g.items()}
    return w * g


def step1_total(parts, weights):
    """Generator objective of the first training step.

    ``parts`` maps component names (seg_s, adv, stf, ins, d) to LossResult
    or plain floats. The discriminator term is reported in ``detail['d']``
    and is not part of ``value``.
    """
    coeffs = [("seg_s", weights.seg), ("adv", weights.adv),
              ("stf", weights.ci), ("ins", weights.ci)]
    value, grads = _weighted(parts, coeffs)
    d = weights.d * _value(parts["d"]) if "d" in parts else 0.0
    return LossResult(value, grads, detail={"d": d})


def step2_total(parts, weights):
    """Like :func:`step1_total` plus the target pseudo-label term seg_t."""
    coeffs = [("seg_s", weights.seg), ("seg_t", weights.seg), ("adv", weights.adv),
              ("stf", weights.ci), ("ins", weights.ci)]
    value, grads = _weighted(parts, coeffs)
    d = weights.d * _value(parts["d"]) if "d" in parts else 0.0
    return LossResult(value, grads, detail={"d": d})
