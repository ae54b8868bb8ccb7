"""Training loop, checkpointing and inference for the referring segmentation model."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import Config
from .encoders import Vocabulary
from .errors import ContractError, ShapeError
from .losses import GroundTruthTrajectory, LossBreakdown, match_trajectory, total_loss
from .metrics import EvalReport, MaskSequence, evaluate
from .model import ModelOutput, SOCModel
from .nn import Adam
from .serialize import load_checkpoint, save_checkpoint
from .synthdata import Sample, downsample_masks, lexicon
from .tensor import new_tape, no_grad

MASK_STRIDE = 4
LOSS_PARTS = ("dice", "focal", "l1", "giou", "cls", "con")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, sample_id: str):
        super().__init__(f"loss became non-finite at epoch {epoch}, step {step} (sample {sample_id})")
        self.epoch, self.step, self.sample_id = epoch, step, sample_id


def default_vocabulary() -> Vocabulary:
    return Vocabulary(lexicon())


@dataclass
class Prepared:
    id: str
    frames: np.ndarray
    token_ids: list[int]
    gt: GroundTruthTrajectory
    full_masks: np.ndarray
    split: str = ""


def prepare(sample: Sample, vocab: Vocabulary) -> Prepared:
    gt = GroundTruthTrajectory(sample.flags.astype(np.float64), sample.boxes.astype(np.float64),
                               downsample_masks(sample.masks, MASK_STRIDE))
    gt.validate()
    return Prepared(sample.id, sample.frames, vocab.encode(sample.expression), gt, sample.masks, sample.split)


# word swaps that keep an expression true after mirroring the clip
HFLIP_WORDS = {"left": "right", "right": "left"}
VFLIP_WORDS = {"up": "down", "down": "up", "upward": "downward", "downward": "upward",
               "top": "bottom", "bottom": "top", "rising": "falling", "falling": "rising"}


def flip_item(item: Prepared, horizontal: bool, vertical: bool, vocab: Vocabulary | None = None) -> Prepared:
    """Mirror a sample's frames, masks and boxes, swapping direction words to match."""
    if not (horizontal or vertical):
        return item
    vocab = vocab or default_vocabulary()
    axes, swap = [], {}
    boxes = item.gt.boxes.copy()
    visible = item.gt.valid
    if horizontal:
        axes.append(-1)
        swap.update(HFLIP_WORDS)
        boxes[visible, 0] = 1.0 - boxes[visible, 0]
    if vertical:
        axes.append(-2)
        swap.update(VFLIP_WORDS)
        boxes[visible, 1] = 1.0 - boxes[visible, 1]
    axes = tuple(axes)
    words = [vocab.words[i] for i in item.token_ids]
    token_ids = [vocab.ids.get(swap.get(w, w), i) for w, i in zip(words, item.token_ids)]
    gt = GroundTruthTrajectory(item.gt.flags, boxes, np.flip(item.gt.masks, axes).copy())
    return Prepared(item.id, np.flip(item.frames, axes).copy(), token_ids, gt,
                    np.flip(item.full_masks, axes).copy(), item.split)


def check_geometry(cfg: Config, item: Prepared) -> None:
    t, _, h, w = item.frames.shape
    if (t, h, w) != (cfg.num_frames, cfg.height, cfg.width):
        raise ShapeError(f"sample {item.id} is {t}x{h}x{w} but config expects "
                         f"num_frames={cfg.num_frames}, height={cfg.height}, width={cfg.width}")


def build_model(cfg: Config, vocab: Vocabulary | None = None) -> SOCModel:
    return SOCModel(cfg, len(vocab or default_vocabulary()))


def make_optimizer(cfg: Config, model: SOCModel) -> Adam:
    params = model.parameters()
    clip = cfg.clip_grad_norm if cfg.clip_grad_norm > 0 else None
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, weight_decay=cfg.weight_decay, clip_norm=clip, decoupled=False)
    if cfg.optimizer == "adamw":
        return Adam(params, cfg.lr, weight_decay=cfg.weight_decay, clip_norm=clip, decoupled=True)
    return Adam(params, cfg.lr, betas=(0.0, 0.99), weight_decay=cfg.weight_decay, clip_norm=clip, decoupled=False)


def forward_loss(model: SOCModel, item: Prepared) -> tuple[ModelOutput, LossBreakdown]:
    cfg = model.cfg
    out = model(item.frames, item.token_ids)
    pred = out.pred
    if not all(np.isfinite(x.data).all() for x in (pred.class_logits, pred.boxes, pred.masks)):
        raise FloatingPointError(f"non-finite predictions for sample {item.id}")
    w = cfg.loss_weights
    match = match_trajectory(out.pred, item.gt, w, cfg.focal_alpha, cfg.focal_gamma)
    loss = total_loss(out.pred, item.gt, match, out.video_queries, out.fused_text_final, w,
                      cfg.focal_alpha, cfg.focal_gamma)
    return out, loss


@dataclass
class TrainResult:
    model: SOCModel
    history: list[dict] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [row["total"] for row in self.history]


def train(cfg: Config, items: list[Prepared], log_path=None, checkpoint_path=None,
          model: SOCModel | None = None, progress=None) -> TrainResult:
    """Per-sample gradient steps; one CSV row of mean losses per epoch."""
    if not items:
        raise ContractError("training needs at least one sample")
    for item in items:
        check_geometry(cfg, item)
    model = model or build_model(cfg)
    vocab = default_vocabulary()
    opt = make_optimizer(cfg, model)
    result = TrainResult(model)
    writer = fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "total", *LOSS_PARTS])
    try:
        step = 0
        for epoch in range(1, cfg.epochs + 1):
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(items))
            sums = dict.fromkeys(("total",) + LOSS_PARTS, 0.0)
            for idx in order:
                item = items[idx]
                step += 1
                if cfg.augment == "flip":
                    h, v = np.random.default_rng([cfg.seed, epoch, step]).random(2) < 0.5
                    item = flip_item(item, bool(h), bool(v), vocab)
                new_tape()
                opt.zero_grad()
                try:
                    _, loss = forward_loss(model, item)
                except FloatingPointError as exc:
                    raise TrainingDiverged(epoch, step, item.id) from exc
                value = loss.total.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(epoch, step, item.id)
                loss.total.backward()
                opt.step()
                sums["total"] += value
                for k in LOSS_PARTS:
                    sums[k] += loss.parts[k]
            row = {"epoch": epoch, **{k: v / len(items) for k, v in sums.items()}}
            result.history.append(row)
            if writer is not None:
                writer.writerow([epoch] + [repr(row[k]) for k in ("total",) + LOSS_PARTS])
                fh.flush()
            if progress is not None:
                progress(row)
    finally:
        new_tape()
        if fh is not None:
            fh.close()
    if checkpoint_path is not None:
        save_model(model, checkpoint_path)
    return result


def save_model(model: SOCModel, path) -> None:
    save_checkpoint(path, model.state_dict())


def load_model(cfg: Config, path, vocab: Vocabulary | None = None) -> SOCModel:
    model = build_model(cfg, vocab)
    model.load_state_dict(load_checkpoint(path))
    return model


# ----------------------------------------------------------------- inference

@dataclass
class Prediction:
    id: str
    query: int
    masks: np.ndarray        # (T, H0, W0) uint8
    scores: np.ndarray       # mean class logit per query


def predict(model: SOCModel, item: Prepared) -> Prediction:
    """Mask sequence of the query with the highest mean class score, thresholded at p = 0.5."""
    with no_grad():
        out = model(item.frames, item.token_ids)
        scores = out.pred.class_logits.data[..., 0].mean(axis=0)
        q = int(np.argmax(scores))
        logits = out.pred.masks.data[:, q]
        h, w = item.frames.shape[2:]
        up = T.bilinear_resize(logits, h, w).data
    return Prediction(item.id, q, (up > 0).astype(np.uint8), scores)


def num_threads() -> int:
    raw = os.environ.get("SOC_NUM_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def predict_all(model: SOCModel, items: list[Prepared], threads: int | None = None) -> list[Prediction]:
    threads = threads or num_threads()
    if threads == 1:
        return [predict(model, it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda it: predict(model, it), items))


def evaluate_model(model: SOCModel, items: list[Prepared], threads: int | None = None
                   ) -> tuple[EvalReport, list[Prediction]]:
    preds = predict_all(model, items, threads)
    report = evaluate([MaskSequence(p.masks, p.id) for p in preds],
                      [MaskSequence(it.full_masks, it.id) for it in items])
    return report, preds
