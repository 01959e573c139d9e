"""Segment-fusion network: adjacency-masked attention encoder, losses and training.

The network maps pooled segment features (class probabilities concatenated
with instance embeddings) to a fused embedding per segment.  Attention is
restricted to spatially adjacent segments (plus self), so information only
flows along the segment graph.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .segmentation import SegmentGraph
from .scene_io import IGNORE_ID

log = logging.getLogger(__name__)

LOSS_TERMS = ("attract", "repel", "reg", "fuse", "sep")


@dataclass(frozen=True)
class FusionConfig:
    num_blocks: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    out_dim: int = 8
    delta_v: float = 0.10
    delta_d: float = 1.0
    w_fuse: float = 1.0
    w_sep: float = 0.01
    dist_norm: str = "l1"
    lr: float = 1e-3
    epochs: int = 200
    seed: int = 0
    mask_mode: str = "post"
    loss_mode: str = "full"
    accumulate: int = 1

    def __post_init__(self):
        if self.model_dim % self.num_heads:
            raise ValueError("model_dim must be divisible by num_heads")
        if not self.delta_v < self.delta_d:
            raise ValueError("delta_v must be smaller than delta_d")
        if self.dist_norm not in ("l1", "l2"):
            raise ValueError(f"dist_norm must be 'l1' or 'l2', got {self.dist_norm!r}")
        if self.mask_mode not in ("post", "pre"):
            raise ValueError(f"mask_mode must be 'post' or 'pre', got {self.mask_mode!r}")
        if self.loss_mode not in ("full", "instance", "segment"):
            raise ValueError(f"loss_mode must be full, instance or segment, got {self.loss_mode!r}")
        if self.accumulate < 1:
            raise ValueError("accumulate must be >= 1")

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str, **overrides) -> "FusionConfig":
        kw = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ValueError(f"bad config line {raw!r}")
            kw[key] = _parse_value(types[key], val.strip())
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def _parse_value(typ, val: str):
    if typ in ("int", int):
        return int(val)
    if typ in ("float", float):
        return float(val)
    return val


class FusionModel:
    """Named float64 parameters of the encoder stack."""

    def __init__(self, params: dict, cfg: FusionConfig, in_dim: int):
        self.params = params
        self.cfg = cfg
        self.in_dim = in_dim

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def tensors(self) -> list:
        return list(self.params.values())

    def state(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    @classmethod
    def init(cls, cfg: FusionConfig, in_dim: int, seed: int | None = None) -> "FusionModel":
        """Glorot-uniform weights, zero biases, unit layer-norm gains."""
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        p = {}

        def weight(name, fan_in, fan_out):
            a = math.sqrt(6.0 / (fan_in + fan_out))
            p[name] = Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True)

        def vec(name, n, value=0.0):
            p[name] = Tensor(np.full((n,), value), requires_grad=True)

        d, f = cfg.model_dim, cfg.ff_dim
        weight("in.w", in_dim, d)
        vec("in.b", d)
        for b in range(cfg.num_blocks):
            for proj in ("q", "k", "v", "o"):
                weight(f"b{b}.{proj}.w", d, d)
                # a key bias only shifts each score row by a constant, which softmax ignores
                if proj != "k":
                    vec(f"b{b}.{proj}.b", d)
            vec(f"b{b}.ln1.g", d, 1.0)
            vec(f"b{b}.ln1.b", d)
            weight(f"b{b}.ff1.w", d, f)
            vec(f"b{b}.ff1.b", f)
            weight(f"b{b}.ff2.w", f, d)
            vec(f"b{b}.ff2.b", d)
            vec(f"b{b}.ln2.g", d, 1.0)
            vec(f"b{b}.ln2.b", d)
        weight("out.w", d, cfg.out_dim)
        vec("out.b", cfg.out_dim)
        return cls(p, cfg, in_dim)

    @classmethod
    def from_state(cls, state: dict, cfg: FusionConfig) -> "FusionModel":
        model = cls.init(cfg, state["in.w"].shape[0])
        for k, t in model.params.items():
            if k not in state or state[k].shape != t.shape:
                raise ValueError(f"checkpoint parameter {k!r} missing or mis-shaped")
            t.data = np.array(state[k], dtype=np.float64)
        return model

    def save(self, path):
        ad.save_checkpoint(path, self.params)

    @classmethod
    def load(cls, path, cfg: FusionConfig) -> "FusionModel":
        return cls.from_state(ad.load_checkpoint(path), cfg)


def segment_inputs(graph: SegmentGraph) -> np.ndarray:
    return np.concatenate([graph.seg_semantic, graph.seg_instance], axis=1)


def _linear(x, model, name):
    y = ad.matmul(x, model[name + ".w"])
    bias = model.params.get(name + ".b")
    return y if bias is None else y + bias


def masked_attention(x: Tensor, model: FusionModel, block: int, mask: np.ndarray, cfg: FusionConfig) -> Tensor:
    q = _linear(x, model, f"b{block}.q")
    k = _linear(x, model, f"b{block}.k")
    v = _linear(x, model, f"b{block}.v")
    dh = cfg.model_dim // cfg.num_heads
    heads = []
    for h in range(cfg.num_heads):
        qs, ks, vs = (ad.slice_cols(t, h * dh, (h + 1) * dh) for t in (q, k, v))
        scores = ad.scalar_mul(ad.matmul(qs, ad.transpose(ks)), 1.0 / math.sqrt(dh))
        if cfg.mask_mode == "post":
            attn = ad.masked_row_softmax(scores, mask)
        else:
            attn = ad.row_softmax(scores + np.where(mask > 0, 0.0, -1e9))
        heads.append(ad.matmul(attn, vs))
    return _linear(ad.concat_cols(heads), model, f"b{block}.o")


def forward_features(model: FusionModel, x, mask: np.ndarray, cfg: FusionConfig | None = None) -> Tensor:
    """Encoder stack on raw segment inputs ``x`` (K x in_dim) with mask ``mask`` (K x K)."""
    cfg = cfg or model.cfg
    x = ad.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != model.in_dim:
        raise ValueError(f"input has shape {x.shape}, model expects (K, {model.in_dim})")
    if mask.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"mask shape {mask.shape} does not match {x.shape[0]} segments")
    h = _linear(x, model, "in")
    for b in range(cfg.num_blocks):
        h = ad.layer_norm(h + masked_attention(h, model, b, mask, cfg),
                          model[f"b{b}.ln1.g"], model[f"b{b}.ln1.b"])
        ff = _linear(ad.relu(_linear(h, model, f"b{b}.ff1")), model, f"b{b}.ff2")
        h = ad.layer_norm(h + ff, model[f"b{b}.ln2.g"], model[f"b{b}.ln2.b"])
    return _linear(h, model, "out")


def forward(model: FusionModel, graph: SegmentGraph, cfg: FusionConfig | None = None) -> Tensor:
    cfg = cfg or model.cfg
    return forward_features(model, segment_inputs(graph), graph.dense_mask(), cfg)


def fused_features(model: FusionModel, graph: SegmentGraph) -> np.ndarray:
    return forward(model, graph).data.copy()


def distance(diff: Tensor, norm: str) -> Tensor:
    return ad.abs_l1(diff, axis=1) if norm == "l1" else ad.row_l2(diff)


def instance_loss(f_bar: Tensor, seg_gt_instance, cfg: FusionConfig):
    """Attraction to instance centroids, centroid repulsion and centroid regulariser.

    Returns ``(total, parts, centroids)``; segments with the ignore id are skipped.
    """
    gt = np.asarray(seg_gt_instance)
    valid = np.flatnonzero(gt != IGNORE_ID)
    if len(valid) == 0:
        raise ValueError("instance_loss: no ground-truth instances among segments")
    ids, member = np.unique(gt[valid], return_inverse=True)
    member = member.reshape(-1)
    k = len(ids)
    counts = np.bincount(member, minlength=k)
    avg = np.zeros((k, len(valid)))
    avg[member, np.arange(len(valid))] = 1.0 / counts[member]

    f = ad.gather_rows(f_bar, valid)
    mu = ad.matmul(Tensor(avg), f)
    d = distance(f - ad.gather_rows(mu, member), cfg.dist_norm)
    w = 1.0 / (k * counts[member])
    attract = ad.sum(ad.square(ad.hinge(d - cfg.delta_v)) * w)
    if k > 1:
        ii, jj = np.nonzero(~np.eye(k, dtype=bool))
        dmu = distance(ad.gather_rows(mu, ii) - ad.gather_rows(mu, jj), cfg.dist_norm)
        repel = ad.scalar_mul(ad.sum(ad.square(ad.hinge(cfg.delta_d - dmu))), 1.0 / (k * (k - 1)))
    else:
        repel = Tensor(0.0)
    reg = ad.scalar_mul(ad.abs_l1(mu), 1.0 / k)
    parts = {"attract": attract, "repel": repel, "reg": reg}
    return attract + repel + reg, parts, mu


def edge_sets(graph: SegmentGraph):
    """Split segment edges into (fusable, separable) by ground-truth instance."""
    e = graph.seg_edges
    gt = graph.seg_gt_instance
    if len(e) == 0:
        return e, e
    a, b = gt[e[:, 0]], gt[e[:, 1]]
    known = (a != IGNORE_ID) & (b != IGNORE_ID)
    return e[known & (a == b)], e[known & (a != b)]


def segment_loss(f_bar: Tensor, graph: SegmentGraph, cfg: FusionConfig):
    """Hinged pull on fusable edges and push on separable edges; returns ``(total, parts)``."""
    fuse_e, sep_e = edge_sets(graph)

    def edge_dist(e):
        return distance(ad.gather_rows(f_bar, e[:, 0]) - ad.gather_rows(f_bar, e[:, 1]), cfg.dist_norm)

    fuse = ad.mean(ad.hinge(edge_dist(fuse_e) - cfg.delta_v)) if len(fuse_e) else Tensor(0.0)
    sep = ad.mean(ad.hinge(cfg.delta_v - edge_dist(sep_e))) if len(sep_e) else Tensor(0.0)
    total = ad.scalar_mul(fuse, cfg.w_fuse) + ad.scalar_mul(sep, cfg.w_sep)
    return total, {"fuse": fuse, "sep": sep}


def total_loss(f_bar: Tensor, graph: SegmentGraph, cfg: FusionConfig):
    """Instance plus segment loss (either alone under ``cfg.loss_mode``); returns ``(total, parts)``."""
    parts = {}
    terms = []
    if cfg.loss_mode in ("full", "instance"):
        li, pi, _ = instance_loss(f_bar, graph.seg_gt_instance, cfg)
        parts.update(pi)
        terms.append(li)
    if cfg.loss_mode in ("full", "segment"):
        ls, ps = segment_loss(f_bar, graph, cfg)
        parts.update(ps)
        terms.append(ls)
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total, parts


class TrainingDiverged(FloatingPointError):
    pass


def evaluate_losses(model: FusionModel, graphs, cfg: FusionConfig | None = None) -> dict:
    """Mean of each loss term over ``graphs`` for the current parameters."""
    cfg = cfg or model.cfg
    acc = {k: 0.0 for k in LOSS_TERMS + ("total",)}
    for g in graphs:
        total, parts = total_loss(forward(model, g, cfg), g, cfg)
        acc["total"] += total.item()
        for k, v in parts.items():
            acc[k] += v.item()
    return {k: v / len(graphs) for k, v in acc.items()}


def train(graphs, cfg: FusionConfig, model: FusionModel | None = None, in_dim: int | None = None):
    """Adam on one scene per step; returns ``(model, curve)``.

    ``curve`` holds one dict per epoch (epoch 0 is the untrained model) with
    the mean of every loss term over the scenes seen in that epoch.
    """
    graphs = list(graphs)
    if not graphs:
        raise ValueError("train needs at least one scene")
    if model is None:
        model = FusionModel.init(cfg, in_dim or segment_inputs(graphs[0]).shape[1])
    rng = np.random.default_rng(cfg.seed)
    params = model.tensors()
    state = ad.AdamState()
    curve = [dict(epoch=0, **evaluate_losses(model, graphs, cfg))]
    pending = 0
    for epoch in range(1, cfg.epochs + 1):
        acc = {k: 0.0 for k in LOSS_TERMS + ("total",)}
        for idx in rng.permutation(len(graphs)):
            g = graphs[idx]
            with Tape() as tape:
                total, parts = total_loss(forward(model, g, cfg), g, cfg)
            if not np.isfinite(total.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            tape.backward(total)
            acc["total"] += total.item()
            for k, v in parts.items():
                acc[k] += v.item()
            pending += 1
            if pending == cfg.accumulate:
                grads = [None if p.grad is None else p.grad / pending for p in params]
                ad.adam_step(params, grads, state, lr=cfg.lr)
                for p in params:
                    p.zero_grad()
                pending = 0
        row = {k: v / len(graphs) for k, v in acc.items()}
        if not np.isfinite(row["total"]):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        curve.append(dict(epoch=epoch, **row))
        log.debug("epoch %d loss %.6f", epoch, row["total"])
    return model, curve


def write_curve(curve, path):
    cols = ("epoch", "L_attract", "L_repel", "L_reg", "L_fuse", "L_sep", "L_SF")
    keys = ("epoch",) + LOSS_TERMS + ("total",)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in curve:
            fh.write(",".join(str(row["epoch"]) if k == "epoch" else repr(float(row[k])) for k in keys) + "\n")
