"""Segment-level fusion of per-point semantic predictions on 3D point clouds."""
from .scene_io import IGNORE_ID, PointCloud, SceneSynthConfig, load_scene, save_scene, synthesize_scene
from .segmentation import GsParams, SegmentGraph, SegmentMap
from .fusion import FusionConfig, FusionModel

__all__ = ["IGNORE_ID", "PointCloud", "SceneSynthConfig", "load_scene", "save_scene",
           "synthesize_scene", "GsParams", "SegmentGraph", "SegmentMap", "FusionConfig", "FusionModel"]
__version__ = "0.1.0"
