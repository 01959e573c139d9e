"""Over-segment a scene, vote labels within segments, and sweep thresholds."""
import numpy as np

from segfuse import GsParams, SceneSynthConfig, synthesize_scene
from segfuse.pipeline import prepare
from segfuse.segmentation import majority_vote_labels, segment_graph
from segfuse.voting import default_grid, jgsv_select, miou

scenes = [prepare(synthesize_scene(SceneSynthConfig(seed=s))) for s in range(4)]
scene = scenes[0]

for f_th in (0.1, 0.5, 2.0):
    seg, _ = segment_graph(scene.cloud, scene.graph, GsParams(n_th=0.01, f_th=f_th))
    voted = majority_vote_labels(scene.cloud, seg)
    print(f"f_th={f_th}: {seg.num_segments} segments, voted mIoU {miou(voted, scene.cloud.semantic_gt, 3):.3f}")

base = scene.cloud.semantic_probs.argmax(1)
print("base argmax mIoU:", round(miou(base, scene.cloud.semantic_gt, 3), 3))

# pick thresholds on all four scenes at once
res = jgsv_select([(s.cloud, s.graph) for s in scenes], default_grid())
for cand, score in zip(res.candidates, res.scores):
    print(f"  {cand.sort_space:5s} f_th={cand.f_th:<4} mIoU={score:.3f}")
print("chosen:", res.candidates[res.chosen].as_dict(), "lowest-scoring index:", res.worst)
