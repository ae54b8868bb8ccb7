"""End-to-end referring segmentation model: encoders -> fusion -> SIM -> heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Config
from .encoders import FeaturePyramid, TextEncoder, TextFeatures, VisualEncoder
from .fusion import FusedFeatures, JointProjection, MultiModalFusion
from .heads import BoxHead, ClassHead, FPNDecoder, MaskHead, TrajectoryPrediction
from .nn import Module
from .sim import EncodedVisual, FrameAggregation, VideoObjectCluster, broadcast_enhance
from .tensor import Tensor


class Encoders(Module):
    def __init__(self, vocab_size: int, cfg: Config, rng: np.random.Generator):
        self.visual = VisualEncoder(rng)
        self.text = TextEncoder(vocab_size, cfg.text_dim, cfg.heads, cfg.text_layers, rng)


@dataclass
class ModelOutput:
    pyramid: FeaturePyramid
    text: TextFeatures
    fused: FusedFeatures
    encoded: EncodedVisual
    frame_queries: Tensor      # O^f before enhancement, (T, N_q, D)
    reference: Tensor          # (T, N_q, 2) reference point of each frame query
    video_queries: Tensor      # O^v, (N_v, D)
    queries: Tensor            # enhanced O^f fed to the heads
    seg: Tensor                # F_seg, (T, D, H0/4, W0/4)
    pred: TrajectoryPrediction

    @property
    def fused_text_final(self) -> Tensor:
        return self.fused.textual[4]


class SOCModel(Module):
    def __init__(self, cfg: Config, vocab_size: int):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        self.encoders = Encoders(vocab_size, cfg, rng)
        self.project = JointProjection(self.encoders.visual.channels, cfg.text_dim, d, rng)
        self.fusion = MultiModalFusion(d, cfg.heads, rng, cfg.fusion_strategy)
        self.frame = FrameAggregation(d, cfg.heads, cfg.num_queries, cfg.num_encoder_layers,
                                      cfg.num_decoder_layers, rng)
        self.voc = VideoObjectCluster(d, cfg.heads, cfg.num_queries, cfg.num_voc_layers, rng,
                                      structure=cfg.voc_structure, slot_pos=self.frame.query_pos)
        self.class_head = ClassHead(d, cfg.num_classes, rng)
        self.box_head = BoxHead(d, rng)
        self.fpn = FPNDecoder(d, rng)
        self.mask_head = MaskHead(d, d, rng)

    def __call__(self, frames, token_ids) -> ModelOutput:
        pyramid = self.encoders.visual(frames)
        text = self.encoders.text(token_ids)
        words = self.project.text(text.words)
        sentence = self.project.text(text.sentence)
        fused = self.fusion(self.project.project_visual(pyramid), words)
        encoded, frame_q, reference = self.frame(fused, sentence)
        video_q = self.voc(frame_q, sentence)
        queries = broadcast_enhance(frame_q, video_q)
        logits = self.class_head(queries)
        boxes = self.box_head(queries, reference)
        seg = self.fpn(encoded, pyramid[1])
        masks = self.mask_head(queries, seg, boxes)
        return ModelOutput(pyramid, text, fused, encoded, frame_q, reference, video_q, queries, seg,
                           TrajectoryPrediction(logits, boxes, masks))
