"""Referring segmentation metrics: J, F, Precision@K, IoU summaries, mAP and stability."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractError, ShapeError

PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
MAP_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ShapeError(f"prediction shape {p.shape} differs from ground truth {g.shape}")
    return p, g


def iou(pred, gt) -> float:
    p, g = _pair(pred, gt)
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def default_tolerance(h: int, w: int) -> int:
    return int(math.ceil(0.008 * math.hypot(h, w)))


def boundary(mask) -> np.ndarray:
    """Foreground pixels with a 4-neighbour in the background (outside counts as background)."""
    m = np.asarray(mask).astype(bool)
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return m & ~interior


def _within(src: np.ndarray, dst: np.ndarray, tol: float) -> np.ndarray:
    """For each on-pixel of ``src``: is some on-pixel of ``dst`` within Euclidean distance tol?"""
    if not dst.any():
        return np.zeros(int(src.sum()), dtype=bool)
    dist = ndimage.distance_transform_edt(~dst)
    return dist[src] <= tol


def boundary_f(pred, gt, tol: float | None = None) -> float:
    p, g = _pair(pred, gt)
    if tol is None:
        tol = default_tolerance(*p.shape)
    if tol < 0:
        raise ContractError("boundary tolerance must be >= 0")
    bp, bg = boundary(p), boundary(g)
    n_p, n_g = int(bp.sum()), int(bg.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = _within(bp, bg, tol).mean()
    recall = _within(bg, bp, tol).mean()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def precision_at_k(ious, k: float) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    if ious.size == 0:
        raise ContractError("precision needs at least one sample")
    return float(np.mean(ious > k))


def map_50_95(ious) -> float:
    """Mean over thresholds 0.50:0.05:0.95 of the hit rate (one prediction per sample)."""
    return float(np.mean([precision_at_k(ious, k) for k in MAP_THRESHOLDS]))


def stability_variance(per_frame) -> float:
    """Population variance; exactly 0 for a constant sequence."""
    x = np.asarray(per_frame, dtype=np.float64)
    if x.size == 0:
        raise ContractError("stability needs at least one frame")
    if np.all(x == x[0]):
        return 0.0
    return float(np.mean((x - x.mean()) ** 2))


@dataclass
class MaskSequence:
    frames: np.ndarray   # (T, H, W) binary
    video_id: str = ""
    expression_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise ShapeError(f"mask sequence must be (T, H, W), got {self.frames.shape}")
        if not np.all((self.frames == 0) | (self.frames == 1)):
            raise ContractError("mask sequence values must be 0 or 1")


@dataclass
class VideoScores:
    video_id: str
    j: list[float]
    f: list[float]
    intersection: int
    union: int

    @property
    def jf(self) -> list[float]:
        return [(a + b) / 2 for a, b in zip(self.j, self.f)]


def score_video(pred: MaskSequence, gt: MaskSequence, tol: float | None = None) -> VideoScores:
    if pred.frames.shape != gt.frames.shape:
        raise ShapeError(f"prediction {pred.frames.shape} and ground truth {gt.frames.shape} differ")
    j = [iou(p, g) for p, g in zip(pred.frames, gt.frames)]
    f = [boundary_f(p, g, tol) for p, g in zip(pred.frames, gt.frames)]
    pb, gb = pred.frames.astype(bool), gt.frames.astype(bool)
    return VideoScores(gt.video_id, j, f, int((pb & gb).sum()), int((pb | gb).sum()))


@dataclass
class EvalReport:
    j_mean: float
    f_mean: float
    jf_mean: float
    precision_at: dict[str, float]
    overall_iou: float
    mean_iou: float
    map_50_95: float
    iou_variance: float
    jf_variance: float
    iou_variance_median: float
    boundary_tolerance: float
    num_videos: int
    per_video: list[dict] = field(default_factory=list)

    def rows(self) -> list[tuple[str, float]]:
        out = [("j_mean", self.j_mean), ("f_mean", self.f_mean), ("jf_mean", self.jf_mean)]
        out += [(f"precision@{k}", v) for k, v in self.precision_at.items()]
        out += [("overall_iou", self.overall_iou), ("mean_iou", self.mean_iou), ("map_50_95", self.map_50_95),
                ("iou_variance", self.iou_variance), ("jf_variance", self.jf_variance),
                ("iou_variance_median", self.iou_variance_median),
                ("boundary_tolerance", self.boundary_tolerance), ("num_videos", self.num_videos)]
        return out

    def to_tsv(self) -> str:
        return "metric\tvalue\n" + "".join(f"{name}\t{value!r}\n" for name, value in self.rows())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluate(preds: list[MaskSequence], gts: list[MaskSequence], tol: float | None = None) -> EvalReport:
    """Aggregate per-video scores.  ``mean_iou`` averages per-video J; P@K and mAP use it too."""
    if not gts:
        raise ContractError("evaluation needs at least one video")
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions for {len(gts)} ground-truth videos")
    if tol is None:
        tol = default_tolerance(*gts[0].frames.shape[1:])
    scores = [score_video(p, g, tol) for p, g in zip(preds, gts)]
    return report_from_scores(scores, tol)


def report_from_scores(scores: list[VideoScores], tol: float) -> EvalReport:
    per_video_iou = np.array([np.mean(s.j) for s in scores])
    j_all = np.concatenate([s.j for s in scores])
    f_all = np.concatenate([s.f for s in scores])
    iou_var = [stability_variance(s.j) for s in scores]
    jf_var = [stability_variance(s.jf) for s in scores]
    inter = sum(s.intersection for s in scores)
    union = sum(s.union for s in scores)
    return EvalReport(
        j_mean=float(j_all.mean()),
        f_mean=float(f_all.mean()),
        jf_mean=float((j_all.mean() + f_all.mean()) / 2),
        precision_at={str(k): precision_at_k(per_video_iou, k) for k in PRECISION_THRESHOLDS},
        overall_iou=float(inter / union) if union else 1.0,
        mean_iou=float(per_video_iou.mean()),
        map_50_95=map_50_95(per_video_iou),
        iou_variance=float(np.mean(iou_var)),
        jf_variance=float(np.mean(jf_var)),
        iou_variance_median=float(np.median(iou_var)),
        boundary_tolerance=float(tol),
        num_videos=len(scores),
        per_video=[{"video_id": s.video_id, "j": s.j, "f": s.f, "iou_variance": v, "jf_variance": u}
                   for s, v, u in zip(scores, iou_var, jf_var)],
    )
