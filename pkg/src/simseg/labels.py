"""Label-map manipulation: correct-label intersection, region extraction,
pseudo-label augmentation."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DONT_CARE = 255

# 4-connectivity: diagonal neighbours do not join regions
_FOUR = ndimage.generate_binary_structure(2, 1)


def as_label_map(x):
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("label values must fit in u8")
        arr = arr.astype(np.uint8)
    return arr


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class RegionMask:
    mask: np.ndarray  # bool (H, W)
    area: int

    def __post_init__(self):
        if self.area < 1:
            raise ValueError("region must contain at least one pixel")


def correct_label_map(gt, pred):
    """Keep ground-truth labels only where the prediction agrees."""
    gt, pred = as_label_map(gt), as_label_map(pred)
    _same_shape(gt, pred)
    return np.where(gt == pred, gt, DONT_CARE).astype(np.uint8)


def connected_regions(labels, k):
    """4-connected components of class ``k``.

    Ordered by area (largest first); equal areas keep row-major order of
    their first pixel.
    """
    labels = as_label_map(labels)
    comp, count = ndimage.label(labels == k, structure=_FOUR)
    if count == 0:
        return []
    flat = comp.ravel()
    areas = np.bincount(flat, minlength=count + 1)[1:]
    # scipy numbers components in raster-scan order of their first pixel,
    # so a stable sort on -area gives the row-major tiebreak
    order = np.argsort(-areas, kind="stable")
    return [RegionMask(comp == (i + 1), int(areas[i])) for i in order]


def augment_label_map(pred, pseudo):
    """Overwrite predictions with pseudo labels wherever they disagree.

    DONT_CARE pseudo pixels leave the prediction untouched.
    """
    pred, pseudo = as_label_map(pred), as_label_map(pseudo)
    _same_shape(pred, pseudo)
    take = (pseudo != DONT_CARE) & (pred != pseudo)
    return np.where(take, pseudo, pred).astype(np.uint8)


def save_pgm(path, labels, num_classes=6):
    """Binary PGM for eyeballing; classes spread over the grey range, DONT_CARE white."""
    labels = as_label_map(labels)
    step = 254 // max(1, num_classes - 1)
    grey = np.where(labels == DONT_CARE, 255, np.minimum(labels.astype(np.int32) * step, 254))
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(grey.astype(np.uint8).tobytes())
