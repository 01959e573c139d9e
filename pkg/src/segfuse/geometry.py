"""Point adjacency graphs and per-point normals.

Normals come either from triangle faces (area-weighted) or from a local
plane fit on the k nearest neighbours.  The kNN graph uses an exact kd-tree
search with ties in distance broken by the lower point index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .scene_io import PointCloud, SceneError

log = logging.getLogger(__name__)

DEFAULT_K = 10
_UP = np.array([0.0, 0.0, 1.0])


@dataclass
class EdgeGraph:
    """Undirected point graph; ``edges`` is an (E, 2) array with i < j, unique rows."""

    edges: np.ndarray
    num_points: int
    scratch: dict = field(default_factory=dict)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)

    def __len__(self):
        return len(self.edges)

    def as_set(self) -> set:
        return set(map(tuple, self.edges.tolist()))


def _canonical(pairs: np.ndarray, n: int) -> EdgeGraph:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    e = np.unique(np.column_stack([lo[keep], hi[keep]]), axis=0)
    return EdgeGraph(e.reshape(-1, 2), n)


def edges_from_mesh(cloud: PointCloud) -> EdgeGraph:
    if cloud.faces is None:
        raise SceneError("edges_from_mesh: cloud has no faces")
    f = cloud.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]])
    return _canonical(pairs, cloud.n)


def knn_indices(points: np.ndarray, k: int, tree: cKDTree | None = None) -> np.ndarray:
    """(N, k) neighbour indices excluding self, ordered by (distance, index)."""
    n = len(points)
    if k < 1 or n <= k:
        raise SceneError(f"kNN needs 1 <= k < N (got k={k}, N={n})")
    tree = tree or cKDTree(points)
    out = np.empty((n, k), dtype=np.int64)
    q = min(n, k + 2)
    pending = np.arange(n)
    while len(pending):
        dist, idx = tree.query(points[pending], k=q)
        dist = dist.reshape(len(pending), q)
        idx = idx.reshape(len(pending), q)
        far = dist[:, -1].copy()
        # self sorts last; duplicates of i at distance 0 stay candidates
        dist = np.where(idx == pending[:, None], np.inf, dist)
        order = np.lexsort((idx, dist), axis=-1)
        d = np.take_along_axis(dist, order, axis=-1)
        j = np.take_along_axis(idx, order, axis=-1)
        # the k-th distance must be strictly below the farthest returned one,
        # otherwise an unseen point may tie with it
        retry = (d[:, k - 1] >= far) if q < n else np.zeros(len(pending), dtype=bool)
        out[pending[~retry]] = j[~retry, :k]
        pending = pending[retry]
        q = min(n, 2 * q)
    return out


def knn_adjacency(points: np.ndarray, k: int) -> list[list[int]]:
    """Symmetrised kNN adjacency lists (sorted) for BFS-style traversals."""
    nb = knn_indices(points, k)
    adj = [set() for _ in range(len(points))]
    for i, row in enumerate(nb.tolist()):
        for j in row:
            adj[i].add(j)
            adj[j].add(i)
    return [sorted(a) for a in adj]


def edges_from_knn(cloud: PointCloud, k: int = DEFAULT_K) -> EdgeGraph:
    nb = knn_indices(cloud.positions, k)
    src = np.repeat(np.arange(cloud.n), k)
    return _canonical(np.column_stack([src, nb.reshape(-1)]), cloud.n)


def normals_from_mesh(cloud: PointCloud) -> np.ndarray:
    """Area-weighted vertex normals; vertices without faces get +z."""
    if cloud.faces is None:
        raise SceneError("normals_from_mesh: cloud has no faces")
    p, f = cloud.positions, cloud.faces
    # cross product length is twice the triangle area, so summing raw crosses area-weights them
    fn = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
    acc = np.zeros_like(p)
    for c in range(3):
        np.add.at(acc, f[:, c], fn)
    length = np.linalg.norm(acc, axis=1)
    out = np.tile(_UP, (cloud.n, 1))
    ok = length > 0
    out[ok] = acc[ok] / length[ok, None]
    return out


def orient_normals(n: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Flip normals into the +z hemisphere; exact ties fall back to +y, then +x."""
    n = np.array(n, dtype=np.float64)
    key = n[:, 2].copy()
    for axis in (1, 0):
        tie = np.abs(key) <= tol
        key[tie] = n[tie, axis]
    n[key < 0] *= -1
    return n


def normals_from_pca(cloud: PointCloud, k: int = DEFAULT_K, return_degenerate: bool = False):
    """Smallest-eigenvalue eigenvector of each point's k-neighbourhood covariance.

    The neighbourhood includes the point itself.  Fully coincident
    neighbourhoods fall back to +z and are counted; a warning is logged.
    """
    if not 3 <= k < cloud.n:
        raise SceneError(f"normals_from_pca needs 3 <= k < N (got k={k}, N={cloud.n})")
    p = cloud.positions
    nb = knn_indices(p, k)
    hood = np.concatenate([p[:, None, :], p[nb]], axis=1)
    centred = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / hood.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0]
    scale = np.abs(centred).max(axis=(1, 2))
    degen = scale <= 1e-12 * max(1.0, float(np.abs(p).max(initial=0.0)))
    normals[degen] = _UP
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals = orient_normals(normals)
    count = int(degen.sum())
    if count:
        log.warning("normals_from_pca: %d degenerate neighbourhoods set to +z", count)
    return (normals, count) if return_degenerate else normals


def ensure_normals(cloud: PointCloud, method: str = "auto", k: int = DEFAULT_K) -> PointCloud:
    """Return ``cloud`` with normals filled in by the requested method."""
    if method == "auto":
        method = "given" if cloud.normals is not None else ("mesh" if cloud.faces is not None else "pca")
    if method == "given":
        if cloud.normals is None:
            raise SceneError("cloud has no normals")
        return cloud
    if method == "mesh":
        return cloud.replace(normals=normals_from_mesh(cloud))
    if method == "pca":
        return cloud.replace(normals=normals_from_pca(cloud, k))
    raise ValueError(f"unknown normal method {method!r}")


def build_graph(cloud: PointCloud, method: str = "auto", k: int = DEFAULT_K) -> EdgeGraph:
    if method == "auto":
        method = "mesh" if cloud.faces is not None else "knn"
    if method == "mesh":
        return edges_from_mesh(cloud)
    if method == "knn":
        return edges_from_knn(cloud, k)
    raise ValueError(f"unknown graph method {method!r}")
