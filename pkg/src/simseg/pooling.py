"""Pool per-pixel features into class-level (stuff) and region-level
(instance) vectors."""

from dataclasses import dataclass

import numpy as np

from .labels import as_label_map

EPS = 1e-5


@dataclass(frozen=True)
class PooledFeature:
    class_id: int
    vector: np.ndarray
    kind: str  # "stuff" or "instance"
    area: int


def _check_spatial(mask_shape, features):
    if features.ndim != 3 or features.shape[1:] != mask_shape:
        raise ValueError(
            f"features {features.shape} do not match spatial extent {mask_shape}"
        )


def masked_mean(mask, features):
    """Mean feature column over ``mask``; denominator clamped to EPS."""
    count = int(mask.sum())
    vec = features[:, mask].sum(axis=1) / max(EPS, count)
    return vec, count


def stuff_repr(labels, features, b):
    """Average features over pixels labelled ``b``; None when ``b`` is absent."""
    labels = as_label_map(labels)
    features = np.asarray(features, dtype=np.float64)
    _check_spatial(labels.shape, features)
    mask = labels == b
    vec, count = masked_mean(mask, features)
    if count == 0:
        return None
    return PooledFeature(int(b), vec, "stuff", count)


def instance_repr(region, features, class_id=-1):
    features = np.asarray(features, dtype=np.float64)
    _check_spatial(region.mask.shape, features)
    vec, count = masked_mean(region.mask, features)
    if count == 0:
        raise ValueError("empty region")
    return PooledFeature(int(class_id), vec, "instance", count)
