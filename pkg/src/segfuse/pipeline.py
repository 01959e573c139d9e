"""End-to-end helpers composing the stages for a single scene."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ccl import FusionDecisions, label_components, threshold_decisions
from .fusion import FusionModel, fused_features
from .geometry import DEFAULT_K, EdgeGraph, build_graph, ensure_normals
from .scene_io import PointCloud
from .segmentation import (GsParams, SegmentGraph, SegmentMap, extract_segment_graph,
                           majority_vote_labels, segment_graph)


@dataclass
class PreparedScene:
    cloud: PointCloud
    graph: EdgeGraph


def prepare(cloud: PointCloud, normals: str = "auto", graph: str = "auto", k: int = DEFAULT_K) -> PreparedScene:
    cloud = ensure_normals(cloud, normals, k)
    return PreparedScene(cloud, build_graph(cloud, graph, k))


def segment(scene: PreparedScene, params: GsParams) -> tuple[SegmentMap, SegmentGraph]:
    seg, _ = segment_graph(scene.cloud, scene.graph, params)
    return seg, extract_segment_graph(scene.cloud, scene.graph, seg)


def base_labels(cloud: PointCloud) -> np.ndarray:
    return cloud.semantic_probs.argmax(axis=1)


def voted_labels(scene: PreparedScene, seg: SegmentMap) -> np.ndarray:
    return majority_vote_labels(scene.cloud, seg)


def fuse(model: FusionModel, sg: SegmentGraph, seg: SegmentMap, weighted: bool = False) -> FusionDecisions:
    f_bar = fused_features(model, sg)
    b = threshold_decisions(f_bar, sg, model.cfg.delta_v, model.cfg.dist_norm)
    return label_components(b, sg, seg, weighted=weighted)
