"""Deterministic synthetic source/target segmentation domains.

Scenes are three horizontal stuff bands (sky, ground, road) with circles,
squares and triangles pasted on top. The target domain applies a colour
shift (hue rotation about the grey axis, brightness offset) and extra
pixel noise to the same label geometry distribution.
"""

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .container import load_tensor, save_tensor

SOURCE, TARGET = "source", "target"
_DOMAIN_ID = {SOURCE: 0, TARGET: 1}

STUFF_NAMES = {0: "sky", 1: "ground", 2: "road"}
THING_NAMES = {3: "circle", 4: "square", 5: "triangle"}

DEFAULT_COLORS = (
    (0.55, 0.75, 0.95),  # sky
    (0.35, 0.65, 0.25),  # ground
    (0.45, 0.45, 0.45),  # road
    (0.90, 0.25, 0.20),  # circle
    (0.95, 0.85, 0.20),  # square
    (0.30, 0.30, 0.85),  # triangle
)


@dataclass(frozen=True)
class SceneSpec:
    size: int = 32
    stuff_classes: tuple = (0, 1, 2)
    thing_classes: tuple = (3, 4, 5)
    colors: tuple = DEFAULT_COLORS
    stuff_jitter: float = 0.04
    instance_jitter: float = 0.12
    noise: float = 0.06
    instances: tuple = (1, 3)
    radius: tuple = (2, 4)
    hue: float = 0.6
    brightness: float = 0.25
    target_noise: float = 0.04

    @property
    def num_classes(self):
        return len(self.stuff_classes) + len(self.thing_classes)

    def with_shift(self, hue=None, brightness=None, target_noise=None):
        kw = dict(self.__dict__)
        if hue is not None:
            kw["hue"] = hue
        if brightness is not None:
            kw["brightness"] = brightness
        if target_noise is not None:
            kw["target_noise"] = target_noise
        return SceneSpec(**kw)


@dataclass
class Dataset:
    images: list
    labels: list = None
    domain: str = SOURCE
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.images)


def _hue_matrix(theta):
    """Rotation by ``theta`` about the (1, 1, 1) axis."""
    u = np.ones(3) / np.sqrt(3.0)
    ux = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.cos(theta) * np.eye(3) + np.sin(theta) * ux + (1 - np.cos(theta)) * np.outer(u, u)


def _shape_mask(kind, cy, cx, r, size):
    yy, xx = np.mgrid[:size, :size]
    dy, dx = yy - cy, xx - cx
    if kind == 3:
        return dy * dy + dx * dx <= r * r + r
    if kind == 4:
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    # upward-pointing triangle: apex at cy - r, base at cy + r
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) // 2 + 0)


def _layout(spec, rng):
    """Label map plus the list of (class, mask) thing instances."""
    n = spec.size
    if len(spec.stuff_classes) != 3:
        raise ValueError("scene layout expects exactly three stuff classes")
    sky, ground, road = spec.stuff_classes
    labels = np.empty((n, n), dtype=np.uint8)
    a = int(rng.integers(n // 4, n // 4 + n // 6 + 1))
    b = int(rng.integers(n // 2 + n // 16, 3 * n // 4 + 1))
    labels[:a] = sky
    labels[a:b] = ground
    labels[b:] = road
    occupied = np.zeros((n, n), dtype=bool)
    instances = []
    lo, hi = spec.instances
    for k in spec.thing_classes:
        for _ in range(int(rng.integers(lo, hi + 1))):
            for _attempt in range(30):
                r = int(rng.integers(spec.radius[0], spec.radius[1] + 1))
                cy = int(rng.integers(r, n - r))
                cx = int(rng.integers(r, n - r))
                mask = _shape_mask(k, cy, cx, r, n)
                # keep a one-pixel moat so instances never touch
                grown = mask.copy()
                grown[1:] |= mask[:-1]
                grown[:-1] |= mask[1:]
                grown[:, 1:] |= mask[:, :-1]
                grown[:, :-1] |= mask[:, 1:]
                if not (grown & occupied).any():
                    occupied |= mask
                    labels[mask] = k
                    instances.append((k, mask))
                    break
    return labels, instances


def render(spec, domain, rng):
    labels, instances = _layout(spec, rng)
    n = spec.size
    colors = np.asarray(spec.colors, dtype=np.float64)
    image = np.empty((3, n, n))
    for k in spec.stuff_classes:
        c = colors[k] + rng.normal(0.0, spec.stuff_jitter, 3)
        image[:, labels == k] = c[:, None]
    for k, mask in instances:
        c = colors[k] + rng.normal(0.0, spec.instance_jitter, 3)
        image[:, mask] = c[:, None]
    image += rng.normal(0.0, spec.noise, image.shape)
    if domain == TARGET:
        image = np.tensordot(_hue_matrix(spec.hue), image, axes=1) + spec.brightness
        image += rng.normal(0.0, spec.target_noise, image.shape)
    return image, labels, len(instances)


def generate_domain(spec, domain, seed, count, first_index=0):
    """``count`` (image, label) pairs; image ``i`` uses stream (seed, domain, i)."""
    if domain not in _DOMAIN_ID:
        raise ValueError(f"unknown domain {domain!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if not spec.thing_classes:
        raise ValueError("scene spec needs at least one thing class")
    images, labels, counts = [], [], []
    for i in range(first_index, first_index + count):
        rng = np.random.default_rng([seed, _DOMAIN_ID[domain], i])
        img, lab, m = render(spec, domain, rng)
        images.append(img)
        labels.append(lab)
        counts.append(m)
    return Dataset(images, labels, domain, {"seed": seed, "instances": counts})


# on-disk layout: <dir>/manifest.csv, <dir>/images/*.simt, <dir>/labels/*.simt


def _sha(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_dataset(path, data, with_labels=True):
    os.makedirs(os.path.join(path, "images"), exist_ok=True)
    rows = []
    for i, img in enumerate(data.images):
        rel_img = os.path.join("images", f"{i:05d}.simt")
        save_tensor(os.path.join(path, rel_img), img)
        rel_lab, lab_sha = "", ""
        if with_labels and data.labels is not None:
            os.makedirs(os.path.join(path, "labels"), exist_ok=True)
            rel_lab = os.path.join("labels", f"{i:05d}.simt")
            save_tensor(os.path.join(path, rel_lab), data.labels[i])
            lab_sha = _sha(os.path.join(path, rel_lab))
        rows.append([i, rel_img, _sha(os.path.join(path, rel_img)), rel_lab, lab_sha])
    with open(os.path.join(path, "manifest.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["index", "image", "image_sha256", "label", "label_sha256"])
        w.writerows(rows)
    with open(os.path.join(path, "domain.txt"), "w") as f:
        f.write(data.domain + "\n")


def read_manifest(path):
    manifest = os.path.join(path, "manifest.csv")
    if not os.path.exists(manifest):
        raise FileNotFoundError(f"no dataset manifest at {manifest}")
    with open(manifest, newline="") as f:
        return list(csv.DictReader(f))


def _domain(path):
    p = os.path.join(path, "domain.txt")
    if os.path.exists(p):
        with open(p) as f:
            return f.read().strip()
    return SOURCE


def load_images(path):
    """Images only; never touches label files."""
    rows = read_manifest(path)
    images = []
    for row in rows:
        img = load_tensor(os.path.join(path, row["image"]))
        if img.ndim != 3 or img.shape[0] != 3:
            raise ValueError(f"{row['image']}: bad image shape {img.shape}")
        images.append(img)
    return Dataset(images, None, _domain(path))


def load_dataset(path):
    data = load_images(path)
    labels = []
    for row, img in zip(read_manifest(path), data.images):
        if not row["label"]:
            raise ValueError(f"{path}: dataset has no labels")
        lab = load_tensor(os.path.join(path, row["label"]))
        if lab.dtype != np.uint8 or lab.shape != img.shape[1:]:
            raise ValueError(f"{row['label']}: label map does not match image")
        labels.append(lab)
    data.labels = labels
    return data


def verify_manifest(path):
    """Re-hash every listed file; returns the list of mismatching paths."""
    bad = []
    for row in read_manifest(path):
        for key in ("image", "label"):
            if row[key] and _sha(os.path.join(path, row[key])) != row[key + "_sha256"]:
                bad.append(row[key])
    return bad
