"""Binary and instance-mask morphology.

Connectivity is 4-neighbour everywhere (components and hole filling).  The
digital disk of radius ``r`` is every offset with ``dy**2 + dx**2 <= r**2``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import ndimage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@lru_cache(maxsize=None)
def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    if r < 0:
        raise ValueError(f"disk radius must be >= 0, got {radius}")
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    fp = dy * dy + dx * dx <= r * r
    fp.setflags(write=False)
    return fp


def disk(radius: int) -> np.ndarray:
    """Boolean footprint of shape (2r+1, 2r+1) for the digital disk."""
    return _disk(int(radius))


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    """All ``(dy, dx)`` offsets of the digital disk, in raster order."""
    r = int(radius)
    ys, xs = np.nonzero(disk(r))
    return [(int(y) - r, int(x) - r) for y, x in zip(ys, xs)]


def connected_components(mask: np.ndarray) -> np.ndarray:
    """Label 4-connected foreground components 1..n in raster order of first pixel."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return labels.astype(np.int64)
    # renumber so label k is the k-th component met in a raster scan
    flat = labels.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    order = np.argsort(first[keep], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[ids[keep][order]] = np.arange(1, n + 1)
    return remap[labels]


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Minkowski sum with the digital disk; pixels outside the grid are dropped."""
    mask = np.asarray(mask, dtype=bool)
    if radius == 0 or not mask.any():
        return mask.copy()
    return ndimage.binary_dilation(mask, structure=disk(radius), border_value=0)


def instance_boundary(instances: np.ndarray) -> np.ndarray:
    """Object pixels with at least one 4-neighbour outside their own label.

    The image border counts as outside.
    """
    lab = np.asarray(instances)
    padded = np.pad(lab, 1, constant_values=0)
    centre = padded[1:-1, 1:-1]
    edge = np.zeros(lab.shape, dtype=bool)
    for sl in ((slice(None, -2), slice(1, -1)), (slice(2, None), slice(1, -1)),
               (slice(1, -1), slice(None, -2)), (slice(1, -1), slice(2, None))):
        edge |= padded[sl] != centre
    return edge & (lab > 0)


def extract_contour_labels(instances: np.ndarray, radius: int = 3) -> np.ndarray:
    """Contour training label: instance boundaries dilated by a disk of ``radius``."""
    return dilate(instance_boundary(instances), radius)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set background components that do not touch the image border to foreground."""
    mask = np.asarray(mask, dtype=bool)
    bg = connected_components(~mask)
    border = np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]]))
    enclosed = (bg > 0) & ~np.isin(bg, border)
    return mask | enclosed


def remove_small(mask: np.ndarray, min_area: int) -> np.ndarray:
    """Drop 4-connected components with fewer than ``min_area`` pixels."""
    if min_area < 0:
        raise ValueError(f"min_area must be >= 0, got {min_area}")
    mask = np.asarray(mask, dtype=bool)
    if min_area <= 1:
        return mask.copy()
    lab = connected_components(mask)
    sizes = np.bincount(lab.ravel())
    keep = sizes >= min_area
    keep[0] = False
    return keep[lab]


def smooth_disk(mask: np.ndarray, radius: int = 3) -> np.ndarray:
    """Mean filter over the disk (border-clipped) followed by a >= 0.5 threshold.

    Counts are kept as integers so the threshold test ``2 * hits >= support``
    is exact.
    """
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    fp = disk(radius).astype(np.int64)
    hits = ndimage.correlate(mask.astype(np.int64), fp, mode="constant", cval=0)
    support = ndimage.correlate(np.ones(mask.shape, dtype=np.int64), fp, mode="constant", cval=0)
    return 2 * hits >= support


def relabel_sequential(instances: np.ndarray) -> np.ndarray:
    """Map positive labels onto 1..n preserving their order."""
    lab = np.asarray(instances)
    ids = np.unique(lab)
    ids = ids[ids > 0]
    lut = np.zeros(int(lab.max(initial=0)) + 1, dtype=np.int64)
    lut[ids] = np.arange(1, len(ids) + 1)
    return lut[lab]
