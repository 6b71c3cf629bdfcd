"""Training-sample preparation and overlap-tile plans.

Images are channel-first float arrays ``(C, H, W)`` with values in [0, 1];
instance masks are ``(H, W)`` integer planes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class Sample:
    image: np.ndarray
    instances: np.ndarray

    def __post_init__(self):
        if self.image.shape[1:] != self.instances.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.instances.shape} sizes differ")


@dataclass
class AugmentSpec:
    """Random geometric augmentation parameters.

    Rotation angles are drawn uniformly from ``[rotation_min, rotation_max)``
    degrees, or from ``rotation_choices`` when that is non-empty.  The
    elastic term is a Gaussian-smoothed random displacement grid with node
    spacing ``elastic_spacing`` and RMS amplitude ``elastic_sigma`` pixels,
    plus a radial term ``r' = r * (1 + k * r**2)`` with ``k`` drawn from
    ``radial_k`` (k > 0 barrel, k < 0 pincushion).
    """

    max_translation: int = 8
    rotation_min: float = 0.0
    rotation_max: float = 360.0
    rotation_choices: tuple = ()
    elastic_spacing: int = 16
    elastic_sigma: float = 2.0
    radial_k: tuple = (-1e-6, 0.0, 1e-6)

    def __post_init__(self):
        vals = [self.max_translation, self.rotation_min, self.rotation_max, self.elastic_sigma,
                *self.rotation_choices, *self.radial_k]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("augmentation parameters must be finite")
        if self.max_translation < 0 or self.elastic_sigma < 0 or self.elastic_spacing < 1:
            raise ValueError("translation and elastic amplitude must be >= 0, spacing >= 1")

    @classmethod
    def identity(cls) -> "AugmentSpec":
        return cls(max_translation=0, rotation_choices=(0.0,), elastic_sigma=0.0, radial_k=(0.0,))


def reflect_pad(arr: np.ndarray, size: int) -> np.ndarray:
    """Reflect-pad the trailing two axes up to at least ``size`` each."""
    h, w = arr.shape[-2:]
    ph, pw = max(0, size - h), max(0, size - w)
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, 0)] * (arr.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    mode = "reflect" if min(h, w) > 1 else "symmetric"
    return np.pad(arr, pad, mode=mode)


def random_crop(sample: Sample, size: int, rng: np.random.Generator) -> Sample:
    """Uniformly placed ``size`` x ``size`` crop; labels are kept as they are."""
    image, inst = reflect_pad(sample.image, size), reflect_pad(sample.instances, size)
    h, w = inst.shape
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return Sample(image[:, y : y + size, x : x + size].copy(), inst[y : y + size, x : x + size].copy())


def _displacement(shape, spacing: int, sigma: float, rng) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    gh, gw = h // spacing + 2, w // spacing + 2
    fields = []
    for _ in range(2):
        grid = ndimage.gaussian_filter(rng.standard_normal((gh, gw)), sigma=1.0, mode="wrap")
        std = grid.std()
        grid = grid * (sigma / std) if std > 0 else grid * 0.0
        ys = np.arange(h) / spacing
        xs = np.arange(w) / spacing
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        fields.append(ndimage.map_coordinates(grid, [yy, xx], order=1, mode="nearest"))
    return fields[0], fields[1]


def sampling_grid(shape, shift, angle_deg: float, disp=None, k: float = 0.0):
    """Source coordinates for every output pixel.

    The output is the input translated by ``shift``, rotated by ``angle_deg``
    (counter-clockwise as displayed) about the image centre, then elastically
    warped.  The warp is defined directly in sampling (backward) form, so it
    need not be invertible.
    """
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    qy, qx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    if k:
        r2 = (qy - cy) ** 2 + (qx - cx) ** 2
        qy, qx = cy + (qy - cy) * (1 + k * r2), cx + (qx - cx) * (1 + k * r2)
    if disp is not None:
        qy, qx = qy + disp[0], qx + disp[1]
    if angle_deg % 360:
        t = math.radians(angle_deg)
        if angle_deg % 90 == 0:
            c, s = round(math.cos(t)), round(math.sin(t))
        else:
            c, s = math.cos(t), math.sin(t)
        dy, dx = qy - cy, qx - cx
        qy, qx = cy + s * dx + c * dy, cx + c * dx - s * dy
    return qy - shift[0], qx - shift[1]


def warp(sample: Sample, coords) -> Sample:
    """Bilinear resampling of the image, nearest-neighbour for the mask, mirrored borders."""
    ys, xs = coords
    image = np.stack([ndimage.map_coordinates(ch, [ys, xs], order=1, mode="mirror") for ch in sample.image])
    inst = ndimage.map_coordinates(sample.instances, [ys, xs], order=0, mode="mirror")
    return Sample(image, inst.astype(sample.instances.dtype))


def augment(sample: Sample, spec: AugmentSpec, rng: np.random.Generator) -> Sample:
    """Random translation, rotation and elastic distortion of one sample."""
    shape = sample.instances.shape
    m = spec.max_translation
    shift = (int(rng.integers(-m, m + 1)), int(rng.integers(-m, m + 1))) if m else (0, 0)
    if spec.rotation_choices:
        angle = float(spec.rotation_choices[int(rng.integers(len(spec.rotation_choices)))])
    else:
        angle = float(rng.uniform(spec.rotation_min, spec.rotation_max))
    disp = _displacement(shape, spec.elastic_spacing, spec.elastic_sigma, rng) if spec.elastic_sigma else None
    k = float(spec.radial_k[int(rng.integers(len(spec.radial_k)))]) if spec.radial_k else 0.0
    if shift == (0, 0) and angle % 360 == 0 and disp is None and k == 0:
        return Sample(sample.image.copy(), sample.instances.copy())
    return warp(sample, sampling_grid(shape, shift, angle, disp, k))


def _axis_offsets(length: int, tile: int, stride: int) -> list[int]:
    offsets = list(range(0, length - tile + 1, stride))
    if offsets[-1] != length - tile:
        offsets.append(length - tile)
    return offsets


def plan_tiles(image_size, tile: int, stride: int) -> list[tuple[int, int]]:
    """Sorted ``(y, x)`` tile offsets covering an image of ``image_size``.

    ``image_size`` is an int (square) or ``(height, width)``.  Offsets step
    by ``stride``; the last row/column is clamped to stay inside the image.
    """
    h, w = (image_size, image_size) if isinstance(image_size, int) else image_size
    if not 1 <= stride <= tile:
        raise ValueError(f"stride must be in [1, tile], got {stride} for tile {tile}")
    if tile > h or tile > w:
        raise ValueError(f"tile {tile} exceeds image size {h}x{w}")
    return [(y, x) for y in _axis_offsets(h, tile, stride) for x in _axis_offsets(w, tile, stride)]


def stitch(shape, offsets, tiles) -> np.ndarray:
    """Average per-tile maps ``tiles[k]`` (shape ``(..., t, t)``) placed at ``offsets[k]``."""
    order = sorted(range(len(offsets)), key=lambda k: offsets[k])
    first = np.asarray(tiles[order[0]])
    t = first.shape[-1]
    acc = np.zeros(first.shape[:-2] + tuple(shape))
    count = np.zeros(tuple(shape))
    for k in order:
        y, x = offsets[k]
        acc[..., y : y + t, x : x + t] += tiles[k]
        count[y : y + t, x : x + t] += 1
    return acc / count
