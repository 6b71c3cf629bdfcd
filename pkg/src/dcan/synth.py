"""Synthetic gland scenes with ground-truth instance masks.

Benign glands are perturbed ellipses drawn as a bright lumen inside a dark
epithelial ring on a mid-tone stroma.  Malignant mode draws elongated,
irregular blobs with a mottled fill and no clear lumen.  A target fraction
of glands is placed in abutting pairs whose labels share a wall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from dcan.augment import Sample
from dcan.morphology import FOUR_CONNECTED, connected_components, dilate
from dcan.tensor import make_rng

STROMA_TINT = np.array([0.95, 0.72, 0.85])
RING_TINT = np.array([0.75, 0.55, 1.0])
LUMEN_TINT = np.array([1.0, 0.97, 1.0])


@dataclass
class GlandSceneSpec:
    height: int = 128
    width: int = 128
    gland_count_min: int = 3
    gland_count_max: int = 5
    radius_min: float = 13.0
    radius_max: float = 18.0
    ring_thickness_min: int = 3
    ring_thickness_max: int = 5
    lumen_intensity: float = 0.92
    ring_intensity: float = 0.30
    stroma_intensity: float = 0.62
    noise_sigma: float = 0.04
    touching_fraction: float = 0.5
    malignant_mode: bool = False
    gap: int = 3
    max_retries: int = 200

    def validate(self) -> "GlandSceneSpec":
        for name in ("lumen_intensity", "ring_intensity", "stroma_intensity", "touching_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.gland_count_min < 0 or self.gland_count_max < self.gland_count_min:
            raise ValueError("need 0 <= gland_count_min <= gland_count_max")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError("need 0 < radius_min <= radius_max")
        if self.ring_thickness_min < 1 or self.ring_thickness_max < self.ring_thickness_min:
            raise ValueError("need 1 <= ring_thickness_min <= ring_thickness_max")
        if self.noise_sigma < 0 or self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive and noise_sigma >= 0")
        return self


def _shape_mask(spec: GlandSceneSpec, centre, rng, shape) -> np.ndarray:
    """Boolean mask of one perturbed ellipse centred at ``centre`` (may leave the grid)."""
    h, w = shape
    a = rng.uniform(spec.radius_min, spec.radius_max)
    if spec.malignant_mode:
        b = a / rng.uniform(1.3, 2.2)
        amps = rng.uniform(-0.18, 0.18, size=4)
    else:
        b = a / rng.uniform(1.0, 1.35)
        amps = rng.uniform(-0.06, 0.06, size=4)
    phases = rng.uniform(0, 2 * math.pi, size=4)
    tilt = rng.uniform(0, math.pi)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - centre[0], xx - centre[1]
    theta = np.arctan2(dy, dx)
    phi = theta - tilt
    radius = a * b / np.sqrt((b * np.cos(phi)) ** 2 + (a * np.sin(phi)) ** 2)
    wobble = 1.0 + sum(amps[k] * np.cos((k + 2) * theta + phases[k]) for k in range(4))
    return np.hypot(dy, dx) <= radius * wobble


def _largest_component(mask: np.ndarray) -> np.ndarray:
    lab = connected_components(mask)
    if lab.max() == 0:
        return mask
    sizes = np.bincount(lab.ravel())
    sizes[0] = 0
    return lab == sizes.argmax()


def _fits(candidate: np.ndarray, occupied: np.ndarray, gap: int) -> bool:
    if candidate.sum() < 0.8 * math.pi * 4:
        return False
    return not (candidate & dilate(occupied, gap)).any()


def _interior(shape, spec, rng):
    r = spec.radius_max
    return (rng.uniform(r * 0.7, shape[0] - r * 0.7), rng.uniform(r * 0.7, shape[1] - r * 0.7))


def _touching_pair(spec, rng, shape):
    """Two abutting glands: overlapping shapes split along a radius-weighted bisector."""
    c1 = _interior(shape, spec, rng)
    m1 = _shape_mask(spec, c1, rng, shape)
    ang = rng.uniform(0, 2 * math.pi)
    reach = 0.85 * (spec.radius_min + spec.radius_max)
    c2 = (c1[0] + reach * math.sin(ang), c1[1] + reach * math.cos(ang))
    m2 = _shape_mask(spec, c2, rng, shape)
    both = m1 & m2
    if not both.any():
        return None
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    r1 = math.sqrt(max(m1.sum(), 1) / math.pi)
    r2 = math.sqrt(max(m2.sum(), 1) / math.pi)
    d1 = np.hypot(yy - c1[0], xx - c1[1]) / r1
    d2 = np.hypot(yy - c2[0], xx - c2[1]) / r2
    a = (m1 & ~m2) | (both & (d1 <= d2))
    b = (m2 & ~m1) | (both & (d1 > d2))
    a, b = _largest_component(a), _largest_component(b)
    if not (dilate(a, 1) & b).any():
        return None
    return a, b


def _render(spec: GlandSceneSpec, labels: np.ndarray, rng) -> np.ndarray:
    h, w = labels.shape
    plane = np.full((h, w), spec.stroma_intensity)
    tint = np.broadcast_to(STROMA_TINT[:, None, None], (3, h, w)).copy()
    for k in range(1, int(labels.max()) + 1):
        obj = labels == k
        if not obj.any():
            continue
        # distance to the nearest pixel outside this gland (edges of the grid count as outside)
        depth = ndimage.distance_transform_edt(np.pad(obj, 1))[1:-1, 1:-1]
        thick = int(rng.integers(spec.ring_thickness_min, spec.ring_thickness_max + 1))
        ring = obj & (depth <= thick)
        core = obj & ~ring
        if spec.malignant_mode:
            mottled = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.5)
            mottled *= 0.08 / max(mottled.std(), 1e-12)
            plane[obj] = 0.5 * (spec.ring_intensity + spec.stroma_intensity) + mottled[obj]
            plane[ring] = spec.ring_intensity
            tint[:, obj] = RING_TINT[:, None]
        else:
            plane[ring] = spec.ring_intensity
            plane[core] = spec.lumen_intensity
            tint[:, ring] = RING_TINT[:, None]
            tint[:, core] = LUMEN_TINT[:, None]
    image = tint * plane[None]
    if spec.noise_sigma:
        image = image + rng.normal(0.0, spec.noise_sigma, size=image.shape)
    # quantise to 8 bits so writing and re-reading a PPM is lossless
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def generate_scene(spec: GlandSceneSpec, rng: np.random.Generator) -> Sample:
    """Draw one scene; placement failures yield fewer glands, never overlaps."""
    spec.validate()
    shape = (spec.height, spec.width)
    labels = np.zeros(shape, dtype=np.int64)
    n = int(rng.integers(spec.gland_count_min, spec.gland_count_max + 1))
    expected_pairs = spec.touching_fraction * n / 2.0
    pairs = int(math.floor(expected_pairs))
    if rng.random() < expected_pairs - pairs:
        pairs += 1
    pairs = min(pairs, n // 2)
    singles = n - 2 * pairs
    next_id = 1
    for _ in range(pairs):
        for _attempt in range(spec.max_retries):
            pair = _touching_pair(spec, rng, shape)
            if pair is None:
                continue
            a, b = pair
            if _fits(a | b, labels > 0, spec.gap) and a.sum() and b.sum():
                labels[a], labels[b] = next_id, next_id + 1
                next_id += 2
                break
    for _ in range(singles):
        for _attempt in range(spec.max_retries):
            m = _largest_component(_shape_mask(spec, _interior(shape, spec, rng), rng, shape))
            if _fits(m, labels > 0, spec.gap):
                labels[m] = next_id
                next_id += 1
                break
    return Sample(_render(spec, labels, rng), labels)


def generate_dataset(spec: GlandSceneSpec, n: int, rng: np.random.Generator):
    """``n`` independent scenes plus a manifest of ``(scene_id, seed)``.

    Scene ``i`` is exactly ``generate_scene(spec, make_rng(seed_i))``.
    """
    if n < 1:
        raise ValueError("need at least one scene")
    seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=n)]
    manifest = [(f"scene_{i:04d}", s) for i, s in enumerate(seeds)]
    return [generate_scene(spec, make_rng(s)) for s in seeds], manifest


def touching_glands(labels: np.ndarray) -> set[int]:
    """Labels that are 4-adjacent to a different label."""
    lab = np.asarray(labels)
    found = set()
    for a, b in ((lab[:, :-1], lab[:, 1:]), (lab[:-1, :], lab[1:, :])):
        sel = (a > 0) & (b > 0) & (a != b)
        found.update(np.unique(a[sel]).tolist())
        found.update(np.unique(b[sel]).tolist())
    return found


def is_four_connected(labels: np.ndarray) -> bool:
    lab = np.asarray(labels)
    for k in np.unique(lab[lab > 0]):
        _, n = ndimage.label(lab == k, structure=FOUR_CONNECTED)
        if n != 1:
            return False
    return True
