"""Base argmax vs segment voting vs segment fusion on held-out scenes."""
import numpy as np

from segfuse import FusionConfig, SceneSynthConfig, synthesize_scene
from segfuse.fusion import train
from segfuse.pipeline import base_labels, fuse, prepare, segment, voted_labels
from segfuse.voting import default_grid, jgsv_select, miou

train_set = [prepare(synthesize_scene(SceneSynthConfig(seed=s))) for s in range(20)]
test_set = [prepare(synthesize_scene(SceneSynthConfig(seed=100 + s))) for s in range(8)]

sweep = jgsv_select([(s.cloud, s.graph) for s in train_set], default_grid())
params = sweep.candidates[sweep.chosen]
print("segmentation params:", params.as_dict())

model, _ = train([segment(s, params)[1] for s in train_set], FusionConfig(epochs=60))

gt, base, voted, sf = [], [], [], []
for scene in test_set:
    seg, sg = segment(scene, params)
    gt.append(scene.cloud.semantic_gt)
    base.append(base_labels(scene.cloud))
    voted.append(voted_labels(scene, seg))
    sf.append(fuse(model, sg, seg).final_point_labels)

gt = np.concatenate(gt)
for name, pred in (("base", base), ("voted", voted), ("fused", sf)):
    print(f"{name:6s} mIoU {miou(np.concatenate(pred), gt, 3):.4f}")
