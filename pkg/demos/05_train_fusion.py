"""Train the segment fusion network on a few scenes and watch the losses."""
from segfuse import FusionConfig, GsParams, SceneSynthConfig, synthesize_scene
from segfuse.fusion import train
from segfuse.pipeline import prepare, segment

params = GsParams(n_th=0.01, f_th=2.0, sort_space="feats")
graphs = [segment(prepare(synthesize_scene(SceneSynthConfig(seed=s))), params)[1] for s in range(5)]
print("segments per scene:", [g.num_segments for g in graphs])
print("segment edges per scene:", [len(g.seg_edges) for g in graphs])

cfg = FusionConfig(epochs=60)
model, curve = train(graphs, cfg)
for row in curve[::10]:
    print(f"epoch {row['epoch']:3d}  L_SF {row['total']:.4f}  attract {row['attract']:.4f}  "
          f"repel {row['repel']:.4f}  fuse {row['fuse']:.4f}  sep {row['sep']:.4f}")
