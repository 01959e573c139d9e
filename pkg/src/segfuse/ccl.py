"""Fusion decisions from fused segment features and component-level labelling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .segmentation import DisjointSet, SegmentGraph, SegmentMap


@dataclass
class FusionDecisions:
    b_edges: np.ndarray
    component_of: np.ndarray
    num_components: int
    final_point_labels: np.ndarray
    component_labels: np.ndarray


def threshold_decisions(f_bar, seg_graph: SegmentGraph, delta_v: float = 0.10, dist_norm: str = "l1") -> np.ndarray:
    """Segment edges whose fused-feature distance is strictly below ``delta_v``."""
    f = np.asarray(getattr(f_bar, "data", f_bar), dtype=np.float64)
    if f.shape[0] != seg_graph.num_segments:
        raise ValueError(f"{f.shape[0]} feature rows for {seg_graph.num_segments} segments")
    e = seg_graph.seg_edges
    if len(e) == 0:
        return e.reshape(0, 2)
    diff = f[e[:, 0]] - f[e[:, 1]]
    d = np.abs(diff).sum(axis=1) if dist_norm == "l1" else np.sqrt((diff * diff).sum(axis=1))
    return e[d < delta_v]


def label_components(b_edges, seg_graph: SegmentGraph, seg: SegmentMap, weighted: bool = False) -> FusionDecisions:
    """Union segments joined by ``b_edges`` and give each component its consensus class.

    The consensus is the argmax of the mean segment probability vector; with
    ``weighted`` the mean is weighted by segment size (a point-level mean).
    """
    b_edges = np.asarray(b_edges, dtype=np.int64).reshape(-1, 2)
    k = seg_graph.num_segments
    ds = DisjointSet(k)
    for a, b in b_edges.tolist():
        ds.join(a, b)
    comp = ds.labels()
    n_comp = int(comp.max(initial=-1)) + 1
    w = seg.segment_sizes.astype(np.float64) if weighted else np.ones(k)
    acc = np.zeros((n_comp, seg_graph.seg_semantic.shape[1]))
    np.add.at(acc, comp, seg_graph.seg_semantic * w[:, None])
    tot = np.bincount(comp, weights=w, minlength=n_comp)
    labels = (acc / tot[:, None]).argmax(axis=1)
    return FusionDecisions(b_edges, comp, n_comp, labels[comp][seg.point_to_segment], labels)
