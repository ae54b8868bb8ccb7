"""Trajectory matching and the training objective.

Per-frame loss terms are written once, vectorised over any leading query
axes, so the matcher can score every query with exactly the terms the
training loss later applies to the matched one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .heads import TrajectoryPrediction
from .matching import hungarian
from .tensor import Tensor, no_grad


@dataclass
class LossWeights:
    cls: float = 2.0
    l1: float = 2.0
    giou: float = 2.0
    dice: float = 2.0
    focal: float = 5.0
    con: float = 1.0

    def scaled(self, k: float) -> "LossWeights":
        return LossWeights(*(k * w for w in (self.cls, self.l1, self.giou, self.dice, self.focal, self.con)))


@dataclass
class GroundTruthTrajectory:
    flags: np.ndarray   # (T,) 1 where the referred object is visible
    boxes: np.ndarray   # (T, 4) normalised cx, cy, w, h
    masks: np.ndarray   # (T, h, w) binary, at mask-head resolution

    @property
    def valid(self) -> np.ndarray:
        return self.flags > 0.5

    def validate(self) -> None:
        if not np.all((self.masks == 0) | (self.masks == 1)):
            raise ContractError("ground-truth masks must be binary")
        vis = self.valid
        if np.any(self.boxes[vis, 2:] < 0):
            raise ContractError("ground-truth boxes need non-negative width/height on visible frames")


@dataclass
class MatchResult:
    sigma: int
    cost: float
    y_tau: np.ndarray
    costs: np.ndarray = field(repr=False, default=None)


# ----------------------------------------------------------------- per-frame terms

def dice_terms(logits: Tensor, gt: np.ndarray) -> Tensor:
    """1 - (2 sum(pg) + 1) / (sum(p) + sum(g) + 1) per frame; ``logits`` (..., F, h, w)."""
    p = T.sigmoid(logits)
    axes = (-2, -1)
    inter = (p * gt).sum(axis=axes)
    return 1.0 - (2.0 * inter + 1.0) / (p.sum(axis=axes) + gt.sum(axis=axes) + 1.0)


def focal_terms(logits: Tensor, gt: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Alpha-balanced binary focal loss, elementwise on logits."""
    p = T.sigmoid(logits)
    ce = T.softplus(logits) - logits * gt  # binary cross-entropy with logits
    p_t = p * gt + (1.0 - p) * (1.0 - gt)
    alpha_t = alpha * gt + (1.0 - alpha) * (1.0 - gt)
    return alpha_t * ce * (1.0 - p_t) ** gamma


def mask_focal_terms(logits: Tensor, gt: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    return focal_terms(logits, gt, alpha, gamma).mean(axis=(-2, -1))


def cxcywh_to_xyxy(b):
    cx, cy, w, h = (b[..., i] for i in range(4))
    return cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h


def l1_terms(pred: Tensor, gt: np.ndarray) -> Tensor:
    return T.absolute(pred - gt).sum(axis=-1)


def giou_terms(pred: Tensor, gt: np.ndarray) -> Tensor:
    """1 - GIoU per box; ground truth with zero extent behaves as a point/segment."""
    px0, py0, px1, py1 = cxcywh_to_xyxy(pred)
    gt = np.asarray(gt, dtype=np.float64)
    gx0, gy0, gx1, gy1 = cxcywh_to_xyxy(gt)
    iw = T.relu(T.minimum(px1, gx1) - T.maximum(px0, gx0))
    ih = T.relu(T.minimum(py1, gy1) - T.maximum(py0, gy0))
    inter = iw * ih
    area_p = (px1 - px0) * (py1 - py0)
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = area_p + area_g - inter
    hull = (T.maximum(px1, gx1) - T.minimum(px0, gx0)) * (T.maximum(py1, gy1) - T.minimum(py0, gy0))
    giou = inter / union - (hull - union) / hull
    return 1.0 - giou


def generalized_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """GIoU of cxcywh boxes (no tape)."""
    with no_grad():
        return 1.0 - giou_terms(Tensor(a), b).data


# ----------------------------------------------------------------- losses

def _visible(gt_valid) -> np.ndarray:
    vis = np.flatnonzero(np.asarray(gt_valid) > 0.5)
    if vis.size == 0:
        raise ContractError("ground truth has no visible frame")
    return vis


def dice_loss(pred_logits: Tensor, gt: np.ndarray, valid=None) -> Tensor:
    """Dice over frames ``(F, h, w)``, averaged over visible frames."""
    vis = _visible(np.ones(gt.shape[0]) if valid is None else valid)
    return dice_terms(pred_logits[vis], gt[vis]).mean()


def focal_loss(pred_logits: Tensor, gt: np.ndarray, valid=None, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    vis = _visible(np.ones(gt.shape[0]) if valid is None else valid)
    return mask_focal_terms(pred_logits[vis], gt[vis], alpha, gamma).mean()


def box_losses(pred: Tensor, gt: np.ndarray, valid=None) -> tuple[Tensor, Tensor]:
    vis = _visible(np.ones(gt.shape[0]) if valid is None else valid)
    p, g = pred[vis], gt[vis]
    return l1_terms(p, g).mean(), giou_terms(p, g).mean()


def class_loss(logits: Tensor, sigma: int, flags: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    """Focal loss on the single referred logit; positives at (visible t, sigma).

    Normalised by the number of visible frames.
    """
    flags = np.asarray(flags, dtype=np.float64)
    n_vis = _visible(flags).size
    target = np.zeros(logits.shape[:2])
    target[:, sigma] = flags
    return focal_terms(logits[..., 0], target, alpha, gamma).sum() * (1.0 / n_vis)


def guidance_embedding(fused_text: Tensor) -> Tensor:
    """Average-pool the final-scale fused word features into one D-vector."""
    return fused_text.mean(axis=0, keepdims=True)


def similarity(video_queries: Tensor, fused_text: Tensor) -> Tensor:
    """Scaled dot product between each video query and the text guidance, shape (N_v,)."""
    d = video_queries.shape[-1]
    g = guidance_embedding(fused_text)
    return (video_queries @ g.transpose(1, 0)).reshape(video_queries.shape[0]) * (1.0 / math.sqrt(d))


def contrastive_loss(video_queries: Tensor, fused_text: Tensor, y_tau) -> Tensor:
    y_tau = np.asarray(y_tau, dtype=np.float64)
    if y_tau.shape != (video_queries.shape[0],):
        raise ContractError(f"y_tau length {y_tau.shape} differs from video query count {video_queries.shape[0]}")
    logp = T.log_softmax(similarity(video_queries, fused_text), axis=0)
    return -(logp * y_tau).sum()


# ----------------------------------------------------------------- matching

def trajectory_costs(pred: TrajectoryPrediction, gt: GroundTruthTrajectory, w: LossWeights,
                     alpha: float = 0.25, gamma: float = 2.0) -> np.ndarray:
    """Weighted loss terms each query would incur as the matched trajectory, summed over visible frames."""
    vis = _visible(gt.flags)
    with no_grad():
        masks = Tensor(np.swapaxes(pred.masks.data, 0, 1)[:, vis])      # (N, F, h, w)
        boxes = Tensor(np.swapaxes(pred.boxes.data, 0, 1)[:, vis])      # (N, F, 4)
        logits = Tensor(pred.class_logits.data[vis, :, 0].T)            # (N, F)
        gm, gb = gt.masks[vis].astype(np.float64), gt.boxes[vis]
        cost = (w.dice * dice_terms(masks, gm).data + w.focal * mask_focal_terms(masks, gm, alpha, gamma).data
                + w.l1 * l1_terms(boxes, gb).data + w.giou * giou_terms(boxes, gb).data)
        # class-loss change when the query turns from negative to positive
        pos = focal_terms(logits, np.ones(1), alpha, gamma).data
        neg = focal_terms(logits, np.zeros(1), alpha, gamma).data
        cost = cost + w.cls * (pos - neg)
    return cost.sum(axis=1)


def match_trajectory(pred: TrajectoryPrediction, gt: GroundTruthTrajectory, w: LossWeights,
                     alpha: float = 0.25, gamma: float = 2.0) -> MatchResult:
    costs = trajectory_costs(pred, gt, w, alpha, gamma)
    (sigma, _), = hungarian(costs[:, None])
    y_tau = np.zeros(costs.size)
    y_tau[sigma] = 1.0
    return MatchResult(sigma=int(sigma), cost=float(costs[sigma]), y_tau=y_tau, costs=costs)


# ----------------------------------------------------------------- total

@dataclass
class LossBreakdown:
    total: Tensor
    parts: dict[str, float]


def total_loss(pred: TrajectoryPrediction, gt: GroundTruthTrajectory, match: MatchResult,
               video_queries: Tensor, fused_text: Tensor, w: LossWeights,
               alpha: float = 0.25, gamma: float = 2.0) -> LossBreakdown:
    """Weighted sum of mask (dice + focal), box (L1 + GIoU), class focal and contrastive terms."""
    s = match.sigma
    masks = pred.masks[:, s]
    boxes = pred.boxes[:, s]
    dice = dice_loss(masks, gt.masks.astype(np.float64), gt.flags)
    focal = focal_loss(masks, gt.masks.astype(np.float64), gt.flags, alpha, gamma)
    l1, giou = box_losses(boxes, gt.boxes, gt.flags)
    cls = class_loss(pred.class_logits, s, gt.flags, alpha, gamma)
    con = contrastive_loss(video_queries, fused_text, match.y_tau)
    total = (w.dice * dice + w.focal * focal + w.l1 * l1 + w.giou * giou + w.cls * cls + w.con * con)
    parts = {"dice": dice.item(), "focal": focal.item(), "l1": l1.item(), "giou": giou.item(),
             "cls": cls.item(), "con": con.item()}
    return LossBreakdown(total, parts)
