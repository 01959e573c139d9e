"""Segmentation-parameter selection by majority-voted mIoU, plus related metrics."""
from __future__ import annotations

import csv
import itertools
import json
from fractions import Fraction
from dataclasses import dataclass

import numpy as np

from .scene_io import IGNORE_ID
from .segmentation import GsParams, majority_vote_labels, segment_graph


class EvaluationError(ValueError):
    pass


def confusion_matrix(pred, gt, num_classes: int, ignore: int = IGNORE_ID) -> np.ndarray:
    """Rows are ground truth, columns predictions; points with ignored gt or pred are dropped."""
    pred = np.asarray(pred, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred and gt lengths differ: {pred.shape} vs {gt.shape}")
    keep = (gt != ignore) & (pred != ignore)
    for name, arr in (("pred", pred[keep]), ("gt", gt[keep])):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} label outside 0..{num_classes - 1}")
    idx = gt[keep] * num_classes + pred[keep]
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def per_class_iou(pred, gt, num_classes: int, ignore: int = IGNORE_ID) -> np.ndarray:
    """IoU per class; NaN for classes absent from both gt and pred."""
    cm = confusion_matrix(pred, gt, num_classes, ignore)
    if cm.sum() == 0:
        raise EvaluationError("no evaluable points")
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, tp / np.where(union > 0, union, 1), np.nan)


def miou(pred, gt, num_classes: int, ignore: int = IGNORE_ID) -> float:
    """Mean IoU over classes that appear in gt or pred.

    Accumulated as an exact rational from the integer counts so the result is
    the correctly rounded mean.
    """
    cm = confusion_matrix(pred, gt, num_classes, ignore)
    if cm.sum() == 0:
        raise EvaluationError("no evaluable points")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    terms = [Fraction(int(t), int(u)) for t, u in zip(tp, union) if u > 0]
    return float(sum(terms) / len(terms))


@dataclass
class SweepResult:
    candidates: list
    scores: np.ndarray
    chosen: int
    per_scene_scores: np.ndarray
    worst: int = 0
    base_score: float = float("nan")

    def to_json(self) -> str:
        doc = {
            "candidates": [c.as_dict() for c in self.candidates],
            "scores": [float(s) for s in self.scores],
            "chosen": int(self.chosen),
            "chosen_params": self.candidates[self.chosen].as_dict(),
            "argmin": int(self.worst),
            "base_miou": float(self.base_score),
            "per_scene_scores": [[float(v) for v in row] for row in self.per_scene_scores],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "sort_space", "n_th", "f_th", "feature_norm", "growth_k", "miou"])
            for i, (c, s) in enumerate(zip(self.candidates, self.scores)):
                w.writerow([i, c.sort_space, repr(c.n_th), repr(c.f_th), c.feature_norm,
                            repr(c.growth_k), repr(float(s))])


def default_grid(n_th: float = 0.01, f_ths=(0.1, 0.5, 1.0, 2.0, 5.0),
                 sort_spaces=("norm", "feats"), **kw) -> list:
    return [GsParams(n_th=n_th, f_th=f, sort_space=s, **kw) for s, f in itertools.product(sort_spaces, f_ths)]


def _voted(scene, params: GsParams) -> np.ndarray:
    cloud, graph = scene
    seg, _ = segment_graph(cloud, graph, params)
    return majority_vote_labels(cloud, seg)


def jgsv_select(scenes, candidates) -> SweepResult:
    """Score every candidate by the mIoU of segment-majority labels over all scenes.

    ``scenes`` is a sequence of ``(PointCloud, EdgeGraph)`` pairs.  The score
    is the mIoU of the concatenated predictions; the highest score wins, ties
    going to the earliest candidate.
    """
    if not candidates:
        raise ValueError("jgsv_select needs at least one candidate")
    scenes = list(scenes)
    if not scenes:
        raise ValueError("jgsv_select needs at least one scene")
    c = max(cloud.num_classes for cloud, _ in scenes)
    gt = np.concatenate([cloud.semantic_gt for cloud, _ in scenes])
    base = np.concatenate([cloud.semantic_probs.argmax(axis=1) for cloud, _ in scenes])
    scores = np.zeros(len(candidates))
    per_scene = np.full((len(candidates), len(scenes)), np.nan)
    for j, params in enumerate(candidates):
        preds = []
        for s, (cloud, graph) in enumerate(scenes):
            voted = _voted((cloud, graph), params)
            preds.append(voted)
            try:
                per_scene[j, s] = miou(voted, cloud.semantic_gt, c)
            except EvaluationError:
                pass
        scores[j] = miou(np.concatenate(preds), gt, c)
    return SweepResult(list(candidates), scores, int(np.argmax(scores)), per_scene,
                       worst=int(np.argmin(scores)), base_score=miou(base, gt, c))


def overfusion_stats(base, voted, gt, ignore: int = IGNORE_ID) -> tuple:
    """(fraction degraded, fraction improved) among points with evaluable gt."""
    base, voted, gt = (np.asarray(a) for a in (base, voted, gt))
    keep = gt != ignore
    n = int(keep.sum())
    if n == 0:
        return 0.0, 0.0
    b_ok = base[keep] == gt[keep]
    v_ok = voted[keep] == gt[keep]
    return float((~v_ok & b_ok).sum() / n), float((v_ok & ~b_ok).sum() / n)


def overfusion_report(scenes, params: GsParams) -> list:
    """Per scene ``(frac_degraded, frac_improved)`` of voting relative to the base argmax."""
    out = []
    for cloud, graph in scenes:
        voted = _voted((cloud, graph), params)
        out.append(overfusion_stats(cloud.semantic_probs.argmax(axis=1), voted, cloud.semantic_gt))
    return out
