"""Object/contour map fusion and the post-processing chain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dcan import morphology
from dcan.tensor import ShapeError


@dataclass
class FusionParams:
    t_o: float = 0.5
    t_c: float = 0.5
    smooth_radius: int = 3
    min_area: int = 64

    def __post_init__(self):
        for name in ("t_o", "t_c"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.smooth_radius < 0 or self.min_area < 0:
            raise ValueError("smooth_radius and min_area must be non-negative")


def fuse(p_o: np.ndarray, p_c: np.ndarray, params: FusionParams | None = None) -> np.ndarray:
    """Foreground where ``p_o >= t_o`` and ``p_c < t_c``."""
    params = params or FusionParams()
    p_o, p_c = np.asarray(p_o, dtype=np.float64), np.asarray(p_c, dtype=np.float64)
    if p_o.shape != p_c.shape:
        raise ShapeError(f"object map {p_o.shape} and contour map {p_c.shape} differ in shape")
    return (p_o >= params.t_o) & (p_c < params.t_c)


def postprocess(mask: np.ndarray, params: FusionParams | None = None) -> np.ndarray:
    """Smooth, fill holes, drop small areas, then label components."""
    params = params or FusionParams()
    m = morphology.smooth_disk(mask, params.smooth_radius)
    m = morphology.fill_holes(m)
    m = morphology.remove_small(m, params.min_area)
    return morphology.connected_components(m)


def segment(p_o, p_c, params: FusionParams | None = None) -> np.ndarray:
    """Contour-aware instances: ``postprocess(fuse(p_o, p_c))``."""
    return postprocess(fuse(p_o, p_c, params), params)


def segment_objects_only(p_o, params: FusionParams | None = None) -> np.ndarray:
    """Baseline that ignores the contour map entirely."""
    params = params or FusionParams()
    return postprocess(np.asarray(p_o) >= params.t_o, params)
