"""``segfuse`` command line: one subcommand per pipeline stage, files in between.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .ccl import label_components, threshold_decisions
from .fusion import FusionConfig, FusionModel, TrainingDiverged, fused_features, train, write_curve
from .geometry import DEFAULT_K
from .pipeline import prepare
from .scene_io import IGNORE_ID, SHAPES, SceneError, SceneSynthConfig, load_scene, save_scene, synthesize_scene
from .segmentation import GsParams, SegmentGraph, SegmentMap, extract_segment_graph, majority_vote_labels, segment_graph
from .voting import EvaluationError, default_grid, jgsv_select, miou, overfusion_stats, per_class_iou

log = logging.getLogger("segfuse")

SCENE_EXT = ".sfpc"
SEG_EXT = ".seg"
GRAPH_EXT = ".npz"
LABEL_EXT = ".labels"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers

def _jobs(args) -> int:
    if args.jobs is not None:
        return max(1, args.jobs)
    env = os.environ.get("SEGFUSE_JOBS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"SEGFUSE_JOBS must be an integer, got {env!r}") from None


def _map(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _scene_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"scene directory {d} not found (produced by `segfuse synth`)")
    files = sorted(p for p in d.iterdir() if p.suffix in (SCENE_EXT, ".ply"))
    if not files:
        raise DataError(f"no scenes in {d} (produced by `segfuse synth`)")
    return files


def _stage_file(directory, stem, ext, producer) -> Path:
    p = Path(directory) / f"{stem}{ext}"
    if not p.exists():
        raise DataError(f"missing {p} (produced by `segfuse {producer}`)")
    return p


def _read_kv(path) -> dict:
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise UsageError(f"{path}: bad config line {raw!r}")
        out[key.strip()] = val.strip()
    return out


def _params_from(args) -> GsParams:
    kw = {}
    if args.params:
        if not Path(args.params).exists():
            raise DataError(f"missing {args.params} (produced by `segfuse vote`)")
        conv = {"n_th": float, "f_th": float, "growth_k": float, "sort_space": str,
                "feature_norm": str, "adaptive": lambda v: v.lower() in ("1", "true", "yes")}
        for k, v in _read_kv(args.params).items():
            if k not in conv:
                raise UsageError(f"{args.params}: unknown key {k!r}")
            kw[k] = conv[k](v)
    for k in ("n_th", "f_th", "sort_space", "feature_norm", "growth_k"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    try:
        return GsParams(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_params(params: GsParams, path):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in params.as_dict().items()))


def _fusion_cfg(args) -> FusionConfig:
    text = ""
    if getattr(args, "config", None):
        if not Path(args.config).exists():
            raise DataError(f"missing config {args.config}")
        text = Path(args.config).read_text()
    over = {k: getattr(args, k, None) for k in ("epochs", "lr", "seed", "loss_mode", "mask_mode")}
    try:
        return FusionConfig.from_text(text, **over)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _load_prepared(path, normals, graph, k):
    try:
        return prepare(load_scene(path), normals, graph, k)
    except (SceneError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _dump_json(doc, path):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands

def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.num_scenes):
        cfg = SceneSynthConfig(num_instances=args.num_instances, points_per_instance=args.points,
                               shape_set=tuple(args.shapes), noise_sigma=args.noise,
                               part_corruption_rate=args.corruption, embed_noise_sigma=args.embed_noise,
                               embed_dim=args.embed_dim, seed=args.seed * 100003 + i)
        try:
            cloud = synthesize_scene(cfg)
        except SceneError as exc:
            raise UsageError(str(exc)) from None
        fmt = "sfpc-text" if args.text else "sfpc-binary"
        save_scene(cloud, out / f"scene_{i:04d}{SCENE_EXT}", fmt)
    return 0


def _segment_one(job):
    path, params, normals, graph, k, out = job
    scene = _load_prepared(path, normals, graph, k)
    seg, _ = segment_graph(scene.cloud, scene.graph, params)
    seg.save(Path(out) / f"{path.stem}{SEG_EXT}")
    return seg.num_segments


def cmd_segment(args):
    params = _params_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _scene_files(args.scenes)
    _map(_segment_one, [(f, params, args.normals, args.graph, args.k, out) for f in files], _jobs(args))
    return 0


def cmd_vote(args):
    files = _scene_files(args.scenes)
    scenes = _map(_prepare_job, [(f, args.normals, args.graph, args.k) for f in files], _jobs(args))
    for f, s in zip(files, scenes):
        if s.cloud.semantic_probs is None or s.cloud.semantic_gt is None:
            raise DataError(f"{f}: scene lacks semantic_probs or semantic_gt")
    grid = default_grid(n_th=args.n_th, f_ths=tuple(args.f_ths), sort_spaces=tuple(args.sort_spaces),
                        feature_norm=args.feature_norm, growth_k=args.growth_k)
    res = jgsv_select([(s.cloud, s.graph) for s in scenes], grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(res.to_json() + "\n")
    res.write_csv(out / "sweep.csv")
    _write_params(res.candidates[res.chosen], out / "best_params.txt")
    return 0


def _prepare_job(job):
    path, normals, graph, k = job
    return _load_prepared(path, normals, graph, k)


def _pool_one(job):
    path, segdir, normals, graph, k, out = job
    scene = _load_prepared(path, normals, graph, k)
    seg = SegmentMap.load(_stage_file(segdir, path.stem, SEG_EXT, "segment"))
    if len(seg.point_to_segment) != scene.cloud.n:
        raise DataError(f"{path}: segment map has {len(seg.point_to_segment)} entries for {scene.cloud.n} points")
    try:
        sg = extract_segment_graph(scene.cloud, scene.graph, seg)
    except SceneError as exc:
        raise DataError(f"{path}: {exc}") from exc
    sg.save(Path(out) / f"{path.stem}{GRAPH_EXT}")
    return sg.num_segments


def cmd_pool(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _scene_files(args.scenes)
    _map(_pool_one, [(f, args.segments, args.normals, args.graph, args.k, out) for f in files], _jobs(args))
    return 0


def _graph_files(directory):
    d = Path(directory)
    files = sorted(d.glob(f"*{GRAPH_EXT}")) if d.is_dir() else []
    if not files:
        raise DataError(f"no segment graphs in {d} (produced by `segfuse pool`)")
    return files


def cmd_train(args):
    cfg = _fusion_cfg(args)
    graphs = [SegmentGraph.load(f) for f in _graph_files(args.graphs)]
    try:
        model, curve = train(graphs, cfg)
    except TrainingDiverged as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.sfck")
    (out / "model.cfg").write_text(cfg.to_text())
    write_curve(curve, out / "loss.csv")
    return 0


def cmd_infer(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"missing checkpoint {ckpt} (produced by `segfuse train`)")
    if not args.config:
        args.config = str(ckpt.with_suffix(".cfg"))
    cfg = _fusion_cfg(args)
    try:
        model = FusionModel.load(ckpt, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for gpath in _graph_files(args.graphs):
        sg = SegmentGraph.load(gpath)
        seg = SegmentMap.load(_stage_file(args.segments, gpath.stem, SEG_EXT, "segment"))
        if seg.num_segments != sg.num_segments:
            raise DataError(f"{gpath}: segment count disagrees with segment map")
        if sg.seg_semantic.shape[1] + sg.seg_instance.shape[1] != model.in_dim:
            raise DataError(f"{gpath}: feature width does not match the checkpoint")
        f_bar = fused_features(model, sg)
        b = threshold_decisions(f_bar, sg, cfg.delta_v, cfg.dist_norm)
        dec = label_components(b, sg, seg, weighted=args.weighted)
        np.save(out / f"{gpath.stem}.fbar.npy", f_bar)
        np.savetxt(out / f"{gpath.stem}{LABEL_EXT}", dec.final_point_labels, fmt="%d")
    return 0


def cmd_eval(args):
    files = _scene_files(args.scenes)
    base, voted, sf, gt = [], [], [], []
    overfusion = []
    c = 0
    for f in files:
        try:
            cloud = load_scene(f)
        except (SceneError, OSError) as exc:
            raise DataError(f"{f}: {exc}") from exc
        if cloud.semantic_gt is None or cloud.semantic_probs is None:
            raise DataError(f"{f}: scene lacks semantic_probs or semantic_gt")
        c = max(c, cloud.num_classes)
        b = cloud.semantic_probs.argmax(axis=1)
        base.append(b)
        gt.append(cloud.semantic_gt)
        if args.segments:
            seg = SegmentMap.load(_stage_file(args.segments, f.stem, SEG_EXT, "segment"))
            v = majority_vote_labels(cloud, seg)
            voted.append(v)
            deg, imp = overfusion_stats(b, v, cloud.semantic_gt)
            overfusion.append({"scene": f.stem, "frac_degraded": deg, "frac_improved": imp})
        if args.labels:
            lab = np.loadtxt(_stage_file(args.labels, f.stem, LABEL_EXT, "infer"), dtype=np.int64, ndmin=1)
            if lab.shape != cloud.semantic_gt.shape:
                raise DataError(f"{f}: label file length mismatch")
            sf.append(lab)
    gt = np.concatenate(gt)
    report = {"num_scenes": len(files), "num_classes": c, "ignore_id": IGNORE_ID}
    try:
        for name, preds in (("base", base), ("voted", voted), ("sf", sf)):
            if not preds:
                continue
            p = np.concatenate(preds)
            report[f"{name}_miou"] = miou(p, gt, c)
            ious = per_class_iou(p, gt, c)
            report[f"{name}_class_iou"] = {str(k): (None if np.isnan(v) else float(v)) for k, v in enumerate(ious)}
    except EvaluationError as exc:
        raise DataError(str(exc)) from exc
    if overfusion:
        report["overfusion"] = {
            "per_scene": overfusion,
            "mean_frac_degraded": float(np.mean([o["frac_degraded"] for o in overfusion])),
            "mean_frac_improved": float(np.mean([o["frac_improved"] for o in overfusion])),
        }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _dump_json(report, out)
    return 0


# ---------------------------------------------------------------- parser

def _scene_opts(p):
    p.add_argument("--normals", choices=("auto", "given", "mesh", "pca"), default="auto",
                   help="normal source (auto: given, else mesh, else PCA)")
    p.add_argument("--graph", choices=("auto", "mesh", "knn"), default="auto",
                   help="point graph (auto: mesh edges when faces exist, else kNN)")
    p.add_argument("-k", type=int, default=DEFAULT_K, help="neighbours for kNN graph and PCA normals")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default $SEGFUSE_JOBS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="segfuse", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write synthetic labelled scenes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-scenes", type=int, default=5)
    p.add_argument("--num-instances", type=int, default=6)
    p.add_argument("--points", type=int, default=300, help="points per instance")
    p.add_argument("--shapes", nargs="+", choices=SHAPES, default=list(SHAPES))
    p.add_argument("--noise", type=float, default=0.004, help="position noise sigma (m)")
    p.add_argument("--corruption", type=float, default=0.15, help="part corruption rate")
    p.add_argument("--embed-noise", type=float, default=0.05)
    p.add_argument("--embed-dim", type=int, default=4)
    p.add_argument("--text", action="store_true", help="write sfpc-text instead of sfpc-binary")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="graph-segment every scene into a segment map")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="key=value file with segmentation parameters (e.g. best_params.txt)")
    p.add_argument("--n-th", dest="n_th", type=float)
    p.add_argument("--f-th", dest="f_th", type=float)
    p.add_argument("--sort-space", dest="sort_space", choices=("norm", "feats"))
    p.add_argument("--feature-norm", dest="feature_norm", choices=("l1", "l2"))
    p.add_argument("--growth-k", dest="growth_k", type=float)
    _scene_opts(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("vote", help="sweep segmentation parameters by majority-voted mIoU")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-th", dest="n_th", type=float, default=0.01)
    p.add_argument("--f-ths", nargs="+", type=float, default=[0.1, 0.5, 1.0, 2.0, 5.0])
    p.add_argument("--sort-spaces", nargs="+", choices=("norm", "feats"), default=["norm", "feats"])
    p.add_argument("--feature-norm", choices=("l1", "l2"), default="l2")
    p.add_argument("--growth-k", type=float, default=1.0)
    _scene_opts(p)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("pool", help="pool point features into segment graphs")
    p.add_argument("--scenes", required=True)
    p.add_argument("--segments", required=True, help="directory written by `segment`")
    p.add_argument("--out", required=True)
    _scene_opts(p)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("train", help="train the fusion network on pooled segment graphs")
    p.add_argument("--graphs", required=True, help="directory written by `pool`")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value fusion config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-mode", dest="loss_mode", choices=("full", "instance", "segment"))
    p.add_argument("--mask-mode", dest="mask_mode", choices=("post", "pre"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="fuse segments and write final per-point labels")
    p.add_argument("--graphs", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="fusion config (default: checkpoint path with .cfg suffix)")
    p.add_argument("--out", required=True)
    p.add_argument("--weighted", action="store_true", help="size-weighted component consensus")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="write a JSON mIoU report")
    p.add_argument("--scenes", required=True)
    p.add_argument("--segments", help="segment maps for the majority-voted labels")
    p.add_argument("--labels", help="final labels written by `infer`")
    p.add_argument("--out", required=True, help="report path")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SceneError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
