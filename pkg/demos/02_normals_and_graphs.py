"""Point graphs and normals: kNN vs mesh edges, PCA vs analytic normals."""
import numpy as np

from segfuse import SceneSynthConfig, synthesize_scene
from segfuse.geometry import edges_from_knn, edges_from_mesh, normals_from_mesh, normals_from_pca
from segfuse.scene_io import PointCloud

cloud = synthesize_scene(SceneSynthConfig(num_instances=2, points_per_instance=400, seed=3))
g = edges_from_knn(cloud, k=10)
print("kNN edges:", len(g), "(about", round(2 * len(g) / cloud.n, 1), "per point)")

# PCA normals lose the inside/outside sign, so compare up to sign
est = normals_from_pca(cloud, k=10)
cos = np.abs((est * cloud.normals).sum(1))
print("median angle to analytic normal (deg):", np.degrees(np.arccos(np.clip(np.median(cos), -1, 1))).round(2))

# two triangles folded along the shared edge (0, 1)
pts = np.array([[0, 0, 0], [1, 0, 0], [0.5, 0.5, 0.5], [0.5, -0.5, 0.5]], dtype=float)
fold = PointCloud(positions=pts, faces=[[0, 1, 2], [0, 3, 1]])
print("mesh edges:", sorted(edges_from_mesh(fold).as_set()))
print("vertex normals:\n", normals_from_mesh(fold).round(3))
