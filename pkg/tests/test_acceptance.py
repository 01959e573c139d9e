"""Acceptance criteria 1-10; each test records one PASS/FAIL line in the terminal summary."""
import time
from collections import deque

import numpy as np
import pytest

from conftest import build_split, make_graph, random_segment_graph
from segfuse import autodiff as ad
from segfuse.autodiff import Tape, Tensor
from segfuse.ccl import label_components
from segfuse.fusion import (FusionConfig, FusionModel, forward, forward_features, instance_loss, segment_loss,
                            total_loss, train)
from segfuse.geometry import edges_from_knn
from segfuse.pipeline import base_labels, fuse, segment, voted_labels
from segfuse.scene_io import PointCloud
from segfuse.segmentation import GsParams, SegmentMap, compute_edge_weights, segment_graph
from segfuse.voting import default_grid, jgsv_select, miou, overfusion_report


def bfs_partition(n, edges):
    adj = [[] for _ in range(n)]
    for a, b in np.asarray(edges).reshape(-1, 2).tolist():
        adj[a].append(b)
        adj[b].append(a)
    comp = [-1] * n
    c = 0
    for s in range(n):
        if comp[s] < 0:
            comp[s] = c
            q = deque([s])
            while q:
                i = q.popleft()
                for j in adj[i]:
                    if comp[j] < 0:
                        comp[j] = c
                        q.append(j)
            c += 1
    return SegmentMap.from_labels(comp).point_to_segment


def test_c1_segmentation_matches_flood_fill(criterion):
    t0 = time.perf_counter()
    mismatches = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(10, 201))
        nrm = rng.normal(size=(n, 3)) * [0.3, 0.3, 1.0]
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        cloud = PointCloud(positions=rng.random((n, 3)), normals=nrm, colors=rng.random((n, 3)))
        g = edges_from_knn(cloud, 6)
        params = GsParams(n_th=float(rng.uniform(0, 0.2)), f_th=float(rng.uniform(0, 0.8)),
                          sort_space=("norm", "feats")[seed % 2], growth_k=0.0, adaptive=False)
        w_n, w_f = compute_edge_weights(cloud, g)
        seg, _ = segment_graph(cloud, g, params)
        keep = (w_n < params.n_th) & (w_f < params.f_th)
        mismatches += not np.array_equal(seg.point_to_segment, bfs_partition(n, g.edges[keep]))
    dt = time.perf_counter() - t0
    criterion(1, mismatches == 0 and dt < 10, f"{mismatches} mismatches / 100 clouds in {dt:.2f}s")


def test_c2_components_match_bfs(criterion):
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(500):
        k = int(rng.integers(1, 101))
        g = random_segment_graph(rng, k, p_edge=float(rng.uniform(0.0, 6.0 / max(k, 2))))
        e = g.seg_edges
        b = e[rng.random(len(e)) < 0.6]
        seg = SegmentMap.from_labels(np.arange(k))
        dec = label_components(b, g, seg)
        again = label_components(dec.b_edges, g, seg)
        bad += not np.array_equal(dec.component_of, bfs_partition(k, b))
        bad += not np.array_equal(again.final_point_labels, dec.final_point_labels)
    criterion(2, bad == 0, f"{bad} failures over 500 random segment graphs")


def test_c3_loss_values(criterion):
    cfg = FusionConfig()
    col = lambda *v: Tensor(np.array(v, dtype=float).reshape(-1, 1))
    got = []
    _, p, _ = instance_loss(col(0, 1), [0, 0], cfg)
    got += [(p["attract"].item(), 0.16), (p["reg"].item(), 0.5)]
    _, p, _ = instance_loss(col(0, 0.5), [0, 1], cfg)
    got += [(p["repel"].item(), 0.25)]
    _, p = segment_loss(col(0, 0.05), make_graph([[0, 1]], [0, 0]), cfg)
    got += [(p["fuse"].item(), 0.0)]
    _, p = segment_loss(col(0, 0.05), make_graph([[0, 1]], [0, 1]), cfg)
    got += [(p["sep"].item(), 0.05)]
    t, _ = segment_loss(col(0, 0.3, 0.32), make_graph([[0, 1], [1, 2]], [0, 0, 1]), cfg)
    got += [(t.item(), 0.2008)]
    consts = (cfg.delta_v, cfg.delta_d, cfg.w_fuse, cfg.w_sep) == (0.10, 1.0, 1.0, 0.01)
    err = max(abs(a - b) for a, b in got)
    criterion(3, consts and err <= 1e-9, f"max abs error {err:.2e} over {len(got)} worked values")


def test_c4_gradients(criterion):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        cfg = FusionConfig(model_dim=8, num_heads=2, ff_dim=16, out_dim=4, num_blocks=2, seed=seed)
        g = random_segment_graph(rng, int(rng.integers(2, 9)), c=3, d=4)
        m = FusionModel.init(cfg, 7)
        err = ad.grad_check_params(lambda: total_loss(forward(m, g, cfg), g, cfg)[0], m.tensors(),
                                   fd_dtype=np.longdouble)
        worst = max(worst, err)
    criterion(4, worst < 1e-4, f"max relative error {worst:.2e} over 20 seeds")


def test_c5_identity_mask_jacobian(criterion):
    nonzero = 0
    checked = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        k = 1 + seed % 4
        cfg = FusionConfig(model_dim=8, num_heads=2, ff_dim=16, out_dim=4, seed=seed)
        m = FusionModel.init(cfg, 5)
        x0 = rng.normal(size=(k, 5))
        for i in range(k):
            for c in range(cfg.out_dim):
                x = Tensor(x0, requires_grad=True)
                with Tape() as tape:
                    out = forward_features(m, x, np.eye(k), cfg)
                    sel = np.zeros((k, cfg.out_dim))
                    sel[i, c] = 1.0
                    y = ad.sum(ad.mul(out, sel))
                tape.backward(y)
                others = [j for j in range(k) if j != i]
                nonzero += int(np.count_nonzero(x.grad[others]))
                checked += x.grad[others].size
                for p in m.tensors():
                    p.zero_grad()
    criterion(5, nonzero == 0, f"{nonzero} non-zero off-diagonal Jacobian entries of {checked}")


def test_c6_miou_oracle(criterion):
    rng = np.random.default_rng(6)
    worst = 0.0
    done = 0
    while done < 1000:
        c = int(rng.integers(1, 8))
        n = int(rng.integers(1, 200))
        gt, pred = rng.integers(-1, c, n), rng.integers(-1, c, n)
        keep = (gt >= 0) & (pred >= 0)
        if not keep.any():
            continue
        cm = np.zeros((c, c), dtype=int)
        for g, p in zip(gt[keep], pred[keep]):
            cm[g, p] += 1
        ious = [cm[k, k] / (cm[k].sum() + cm[:, k].sum() - cm[k, k]) for k in range(c)
                if cm[k].sum() + cm[:, k].sum() > 0]
        worst = max(worst, abs(miou(pred, gt, c) - sum(ious) / len(ious)))
        done += 1
    exact = miou([0, 1, 1, 1], [0, 0, 1, 1], 2) == 7 / 12
    criterion(6, worst <= 1e-12 and exact, f"max deviation {worst:.1e}; 7/12 example exact: {exact}")


# ---------------------------------------------------------------- synthetic benchmark (7-9)

@pytest.fixture(scope="module")
def benchmark():
    t0 = time.perf_counter()
    train_scenes = build_split(range(1000, 1050))
    test_scenes = build_split(range(2000, 2020))
    sweep = jgsv_select([(s.cloud, s.graph) for s in train_scenes], default_grid())
    params = sweep.candidates[sweep.chosen]
    train_graphs = [segment(s, params)[1] for s in train_scenes]
    test_segs = [segment(s, params) for s in test_scenes]
    return dict(train=train_scenes, test=test_scenes, params=params, sweep=sweep, train_graphs=train_graphs,
                test_segs=test_segs, t0=t0)


def _sf_miou(bench, cfg):
    model, _ = train(bench["train_graphs"], cfg)
    preds, gts, base, voted = [], [], [], []
    for scene, (seg, sg) in zip(bench["test"], bench["test_segs"]):
        preds.append(fuse(model, sg, seg).final_point_labels)
        gts.append(scene.cloud.semantic_gt)
        base.append(base_labels(scene.cloud))
        voted.append(voted_labels(scene, seg))
    c = bench["test"][0].cloud.num_classes
    gt = np.concatenate(gts)
    return (miou(np.concatenate(preds), gt, c), miou(np.concatenate(voted), gt, c),
            miou(np.concatenate(base), gt, c))


@pytest.fixture(scope="module")
def full_result(benchmark):
    return _sf_miou(benchmark, FusionConfig())


def test_c7_voting_benefit(criterion, benchmark):
    stats = overfusion_report([(s.cloud, s.graph) for s in benchmark["train"]], benchmark["params"])
    deg = float(np.mean([d for d, _ in stats]))
    imp = float(np.mean([i for _, i in stats]))
    criterion(7, imp > deg, f"mean frac_improved {imp:.4f} vs frac_degraded {deg:.4f} "
                            f"(params {benchmark['params'].as_dict()})")


def test_c8_end_to_end_ordering(criterion, benchmark, full_result):
    sf, voted, base = full_result
    dt = time.perf_counter() - benchmark["t0"]
    ok = sf > voted > base and sf - base >= 0.03 and dt < 15 * 60
    criterion(8, ok, f"SF {sf:.4f} > voted {voted:.4f} > base {base:.4f}; elapsed {dt:.0f}s")


def test_c9_instance_only_ablation(criterion, benchmark, full_result):
    sf_inst, _, _ = _sf_miou(benchmark, FusionConfig(loss_mode="instance"))
    criterion(9, sf_inst < full_result[0], f"instance-only SF {sf_inst:.4f} < full SF {full_result[0]:.4f}")


def test_c10_cli_determinism(criterion, tmp_path):
    from test_cli import run_pipeline, tree_bytes

    run_pipeline(tmp_path / "a", seed=7)
    run_pipeline(tmp_path / "b", seed=7)
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    diff = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    criterion(10, not diff, f"{len(a)} output files compared, {len(diff)} differ {diff[:3]}")
