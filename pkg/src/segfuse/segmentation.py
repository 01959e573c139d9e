"""Joint graph segmentation over normals and auxiliary features.

Edges are visited in ascending order of one dissimilarity (normal or feature
space).  Two segments merge when the edge is strictly below both segments'
thresholds in *both* spaces; each merged segment then gets thresholds of
``largest internal weight + growth_k * initial / size``, so the threshold of a
big segment approaches its largest internal edge weight.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .geometry import EdgeGraph
from .scene_io import IGNORE_ID, PointCloud, SceneError


class DisjointSet:
    """Union-find with union by rank and path compression."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.size = [1] * n

    def __len__(self):
        return len(self.parent)

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def join(self, a: int, b: int) -> int:
        """Merge the sets holding ``a`` and ``b``; returns the new root."""
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        self.size[a] += self.size[b]
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1
        return a

    def labels(self) -> np.ndarray:
        """Contiguous set ids numbered in order of first appearance."""
        roots = [self.find(i) for i in range(len(self.parent))]
        ids: dict[int, int] = {}
        return np.array([ids.setdefault(r, len(ids)) for r in roots], dtype=np.int64)


@dataclass(frozen=True)
class GsParams:
    n_th: float = 0.01
    f_th: float = 0.5
    sort_space: str = "norm"
    feature_norm: str = "l2"
    growth_k: float = 1.0
    adaptive: bool = True

    def __post_init__(self):
        if self.n_th < 0 or self.f_th < 0:
            raise ValueError("thresholds must be non-negative")
        if self.sort_space not in ("norm", "feats"):
            raise ValueError(f"sort_space must be 'norm' or 'feats', got {self.sort_space!r}")
        if self.feature_norm not in ("l1", "l2"):
            raise ValueError(f"feature_norm must be 'l1' or 'l2', got {self.feature_norm!r}")
        if self.growth_k < 0:
            raise ValueError("growth_k must be >= 0")

    def as_dict(self) -> dict:
        return {"n_th": self.n_th, "f_th": self.f_th, "sort_space": self.sort_space,
                "feature_norm": self.feature_norm, "growth_k": self.growth_k,
                "adaptive": self.adaptive}


@dataclass
class SegmentMap:
    point_to_segment: np.ndarray
    num_segments: int
    segment_sizes: np.ndarray

    @classmethod
    def from_labels(cls, labels) -> "SegmentMap":
        labels = np.asarray(labels, dtype=np.int64)
        _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
        # renumber by first appearance
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        seg = rank[inv.reshape(-1)]
        return cls(seg, len(first), np.bincount(seg, minlength=len(first)))

    def save(self, path):
        np.savetxt(path, self.point_to_segment, fmt="%d")

    @classmethod
    def load(cls, path) -> "SegmentMap":
        return cls.from_labels(np.loadtxt(path, dtype=np.int64, ndmin=1))


@dataclass
class SegmentGraph:
    seg_edges: np.ndarray
    adjacency: sparse.csr_matrix
    seg_semantic: np.ndarray
    seg_instance: np.ndarray
    seg_gt_instance: np.ndarray
    seg_gt_semantic: np.ndarray

    @property
    def num_segments(self) -> int:
        return self.seg_semantic.shape[0]

    def dense_mask(self) -> np.ndarray:
        """Adjacency with self-loops as a dense float matrix."""
        return self.adjacency.toarray().astype(np.float64) + np.eye(self.num_segments)

    def save(self, path):
        np.savez(path, seg_edges=self.seg_edges, seg_semantic=self.seg_semantic,
                 seg_instance=self.seg_instance, seg_gt_instance=self.seg_gt_instance,
                 seg_gt_semantic=self.seg_gt_semantic)

    @classmethod
    def load(cls, path) -> "SegmentGraph":
        with np.load(path) as z:
            edges = z["seg_edges"].reshape(-1, 2)
            k = z["seg_semantic"].shape[0]
            return cls(edges, _adjacency(edges, k), z["seg_semantic"], z["seg_instance"],
                       z["seg_gt_instance"], z["seg_gt_semantic"])


def point_features(cloud: PointCloud) -> np.ndarray:
    return cloud.colors if cloud.colors is not None else np.zeros((cloud.n, 1))


def compute_edge_weights(cloud: PointCloud, graph: EdgeGraph, feature_norm: str = "l2"):
    """Normal dissimilarity ``1 - n_i.n_j`` and feature distance per edge."""
    if cloud.normals is None:
        raise SceneError("compute_edge_weights: cloud has no normals")
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    n = cloud.normals
    w_n = 1.0 - np.einsum("ij,ij->i", n[i], n[j])
    f = point_features(cloud)
    diff = f[i] - f[j]
    if feature_norm == "l1":
        w_f = np.abs(diff).sum(axis=1)
    elif feature_norm == "l2":
        w_f = np.sqrt((diff * diff).sum(axis=1))
    else:
        raise ValueError(f"feature_norm must be 'l1' or 'l2', got {feature_norm!r}")
    return w_n, w_f


def segment_graph(cloud: PointCloud, graph: EdgeGraph, params: GsParams, weights=None):
    """Segment the point graph; returns ``(SegmentMap, DisjointSet)``.

    ``weights`` may pass precomputed ``(w_n, w_f)`` to skip recomputation.
    With ``params.adaptive`` false the thresholds stay at their initial values.
    """
    w_n, w_f = weights if weights is not None else compute_edge_weights(cloud, graph, params.feature_norm)
    e = graph.edges
    if params.sort_space == "norm":
        order = np.lexsort((e[:, 1], e[:, 0], w_f, w_n))
    else:
        order = np.lexsort((e[:, 1], e[:, 0], w_n, w_f))

    n = cloud.n
    ds = DisjointSet(n)
    th_n = [params.n_th] * n
    th_f = [params.f_th] * n
    max_n = [0.0] * n
    max_f = [0.0] * n
    find, size = ds.find, ds.size
    gk, n0, f0 = params.growth_k, params.n_th, params.f_th
    adaptive = params.adaptive

    for a, b, wn, wf in zip(e[order, 0].tolist(), e[order, 1].tolist(),
                            w_n[order].tolist(), w_f[order].tolist()):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if wn < th_n[ra] and wn < th_n[rb] and wf < th_f[ra] and wf < th_f[rb]:
            root = ds.join(ra, rb)
            if adaptive:
                mn = max(max_n[ra], max_n[rb], wn)
                mf = max(max_f[ra], max_f[rb], wf)
                max_n[root], max_f[root] = mn, mf
                th_n[root] = mn + gk * n0 / size[root]
                th_f[root] = mf + gk * f0 / size[root]

    labels = ds.labels()
    return SegmentMap(labels, int(labels.max(initial=-1)) + 1, np.bincount(labels)), ds


def _adjacency(seg_edges: np.ndarray, k: int) -> sparse.csr_matrix:
    if len(seg_edges) == 0:
        return sparse.csr_matrix((k, k), dtype=bool)
    r = np.concatenate([seg_edges[:, 0], seg_edges[:, 1]])
    c = np.concatenate([seg_edges[:, 1], seg_edges[:, 0]])
    return sparse.csr_matrix((np.ones(len(r), dtype=bool), (r, c)), shape=(k, k))


def pool(values: np.ndarray, seg: SegmentMap) -> np.ndarray:
    """Mean of member rows per segment."""
    values = np.asarray(values, dtype=np.float64)
    flat = values.reshape(len(values), -1)
    out = np.zeros((seg.num_segments, flat.shape[1]))
    np.add.at(out, seg.point_to_segment, flat)
    out /= seg.segment_sizes[:, None]
    return out.reshape((seg.num_segments,) + values.shape[1:])


def majority(labels: np.ndarray, groups: np.ndarray, num_groups: int, ignore: int | None = IGNORE_ID) -> np.ndarray:
    """Most frequent label per group (lowest id on ties); ``ignore`` entries don't vote.

    Groups without any voting member get ``ignore`` (or -1).
    """
    labels = np.asarray(labels, dtype=np.int64)
    keep = labels != ignore if ignore is not None else np.ones(len(labels), dtype=bool)
    out = np.full(num_groups, IGNORE_ID if ignore is None else ignore, dtype=np.int64)
    if not keep.any():
        return out
    vals, inv = np.unique(labels[keep], return_inverse=True)
    counts = np.zeros((num_groups, len(vals)), dtype=np.int64)
    np.add.at(counts, (groups[keep], inv.reshape(-1)), 1)
    has = counts.sum(axis=1) > 0
    out[has] = vals[counts[has].argmax(axis=1)]
    return out


def extract_segment_graph(cloud: PointCloud, graph: EdgeGraph, seg: SegmentMap) -> SegmentGraph:
    if cloud.semantic_probs is None or cloud.instance_embed is None:
        raise SceneError("extract_segment_graph: cloud lacks semantic_probs or instance_embed")
    s = seg.point_to_segment
    a, b = s[graph.edges[:, 0]], s[graph.edges[:, 1]]
    cross = a != b
    pairs = np.column_stack([np.minimum(a[cross], b[cross]), np.maximum(a[cross], b[cross])])
    seg_edges = np.unique(pairs, axis=0).reshape(-1, 2)
    k = seg.num_segments
    sem_gt = cloud.semantic_gt if cloud.semantic_gt is not None else np.full(cloud.n, IGNORE_ID)
    ins_gt = cloud.instance_gt if cloud.instance_gt is not None else np.full(cloud.n, IGNORE_ID)
    return SegmentGraph(
        seg_edges=seg_edges,
        adjacency=_adjacency(seg_edges, k),
        seg_semantic=pool(cloud.semantic_probs, seg),
        seg_instance=pool(cloud.instance_embed, seg),
        seg_gt_instance=majority(ins_gt, s, k),
        seg_gt_semantic=majority(sem_gt, s, k),
    )


def majority_vote_labels(cloud: PointCloud, seg: SegmentMap) -> np.ndarray:
    """Broadcast each segment's modal argmax class to its points."""
    if cloud.semantic_probs is None:
        raise SceneError("majority_vote_labels: cloud has no semantic_probs")
    pred = cloud.semantic_probs.argmax(axis=1)
    return majority(pred, seg.point_to_segment, seg.num_segments, ignore=None)[seg.point_to_segment]
