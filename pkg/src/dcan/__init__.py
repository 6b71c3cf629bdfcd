"""Deep contour-aware networks for gland instance segmentation, in plain numpy."""

from dcan.fusion import FusionParams, fuse, segment, segment_objects_only
from dcan.net import DcanConfig, DcanModel, TrainSchedule, build_model, forward, predict_tiled, train
from dcan.tensor import make_rng

__version__ = "0.1.0"

__all__ = [
    "DcanConfig", "DcanModel", "FusionParams", "TrainSchedule", "build_model", "forward", "fuse",
    "make_rng", "predict_tiled", "segment", "segment_objects_only", "train",
]
