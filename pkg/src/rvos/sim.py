"""Semantic integration: per-frame query decoding, then the video-level object cluster.

Frame stage.  Each frame's fused multi-scale tokens (scales 2-4, flattened and
concatenated) run through a stack of dense self-attention encoder layers and
are then read by ``N_q`` object queries (learned content plus the sentence
feature) through a decoder stack.  A fixed 2-D sine code plus a learned
per-scale code is added to the queries/keys of every attention layer.  Each
query also reports a reference point: the attention-weighted mean position of
the tokens it read in the last decoder layer.  Frames never exchange
information here.

Video stage.  The ``T x N_q`` frame queries are flattened into one sequence
(with a temporal code and the slot code of their query index), mixed by
self-attention, and read by ``N_v = N_q`` video queries that start from the
sentence feature.  The video queries are then added back to every frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import VOC_STRUCTURES
from .errors import ConfigError, ContractError
from .fusion import FUSED_SCALES, FusedFeatures
from .nn import DecoderLayer, EncoderLayer, Module, Parameter, sine_encoding, sine_encoding_2d
from .tensor import Tensor


@dataclass
class EncodedVisual:
    scales: dict[int, Tensor]            # scale -> (T, H_i*W_i, D)
    spatial: dict[int, tuple[int, int]]

    def as_map(self, s: int) -> Tensor:
        """Scale ``s`` as a (T, D, H, W) feature map."""
        x = self.scales[s]
        h, w = self.spatial[s]
        t, _, d = x.shape
        return x.reshape(t, h, w, d).transpose(0, 3, 1, 2)


@dataclass
class FrameOutput:
    encoded: EncodedVisual
    queries: Tensor       # O^f, (T, N_q, D)
    reference: Tensor     # (T, N_q, 2) attention-weighted (x, y) of each query

    def __iter__(self):
        return iter((self.encoded, self.queries, self.reference))


class FrameAggregation(Module):
    def __init__(self, dim: int, heads: int, num_queries: int, enc_layers: int, dec_layers: int,
                 rng: np.random.Generator):
        self.dim = dim
        self.scale_embed = Parameter(rng.normal(0.0, 0.1, size=(len(FUSED_SCALES), dim)))
        self.query_content = Parameter(rng.normal(0.0, 1.0, size=(num_queries, dim)))
        self.query_pos = Parameter(rng.normal(0.0, 1.0, size=(num_queries, dim)))
        self.encoder = [EncoderLayer(dim, heads, rng) for _ in range(enc_layers)]
        self.decoder = [DecoderLayer(dim, heads, rng) for _ in range(dec_layers)]
        self._pos_cache: dict = {}

    @property
    def num_queries(self) -> int:
        return self.query_content.shape[0]

    def _static_codes(self, spatial) -> tuple[np.ndarray, np.ndarray]:
        """Fixed 2-D sine codes and normalised (x, y) pixel-centre coordinates of every token."""
        key = tuple(spatial[s] for s in FUSED_SCALES)
        if key not in self._pos_cache:
            codes, coords = [], []
            for s in FUSED_SCALES:
                h, w = spatial[s]
                codes.append(sine_encoding_2d(h, w, self.dim))
                ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
                coords.append(np.stack([xs.ravel(), ys.ravel()], axis=-1))
            self._pos_cache[key] = (np.concatenate(codes), np.concatenate(coords))
        return self._pos_cache[key]

    def __call__(self, fused: FusedFeatures, sentence: Tensor | None = None) -> FrameOutput:
        """Encode the fused tokens and decode ``N_q`` queries per frame.

        With ``sentence`` (1, D) given, every query starts from its learned
        content plus the sentence feature (language-conditioned queries).
        Position codes enter the queries/keys of every attention layer.
        """
        sizes = [fused.visual[s].shape[1] for s in FUSED_SCALES]
        scale_rows = np.repeat(np.arange(len(FUSED_SCALES)), sizes)
        tokens = T.concat([fused.visual[s] for s in FUSED_SCALES], axis=1)
        codes, coords = self._static_codes(fused.spatial)
        pos = T.take(self.scale_embed, scale_rows) + codes
        for layer in self.encoder:
            tokens = layer(tokens, pos=pos)
        bounds = np.cumsum([0] + sizes)
        encoded = EncodedVisual(
            {s: tokens[:, bounds[i]:bounds[i + 1]] for i, s in enumerate(FUSED_SCALES)}, dict(fused.spatial))
        t = tokens.shape[0]
        queries = self.query_content + np.zeros((t, 1, 1))
        if sentence is not None:
            queries = queries + sentence.reshape(1, 1, self.dim)
        weights = None
        for layer in self.decoder:
            queries, weights = layer(queries, tokens, query_pos=self.query_pos, memory_pos=pos, return_attn=True)
        if weights is None:
            reference = Tensor(np.full((t, self.num_queries, 2), 0.5))
        else:
            # where each query looked in the last layer, averaged over heads
            reference = weights.mean(axis=1) @ coords
        return FrameOutput(encoded, queries, reference)


def frame_content_aggregation(fused: FusedFeatures, module: FrameAggregation,
                              sentence: Tensor | None = None) -> FrameOutput:
    return module(fused, sentence)


class VideoObjectCluster(Module):
    def __init__(self, dim: int, heads: int, num_queries: int, layers: int, rng: np.random.Generator,
                 structure: str = "both", slot_pos: Tensor | None = None):
        if structure not in VOC_STRUCTURES:
            raise ConfigError(f"voc_structure must be one of {VOC_STRUCTURES}, got {structure!r}")
        self.structure = structure
        self.dim = dim
        self.num_queries = num_queries
        # shared with the frame decoder's query_pos so video query n and frame slot n carry the same code
        self.slot_pos = slot_pos if slot_pos is not None else Parameter(rng.normal(size=(num_queries, dim)))
        use_enc = structure in ("encoder_only", "both")
        use_dec = structure in ("decoder_only", "both")
        self.encoder = [EncoderLayer(dim, heads, rng) for _ in range(layers)] if use_enc else []
        self.decoder = [DecoderLayer(dim, heads, rng) for _ in range(layers)] if use_dec else []

    def temporal_codes(self, t: int) -> np.ndarray:
        return sine_encoding(np.arange(t, dtype=np.float64), self.dim, temperature=100.0)

    def __call__(self, frame_queries: Tensor, sentence: Tensor) -> Tensor:
        t, n, d = frame_queries.shape
        if n != self.num_queries:
            raise ContractError(f"expected {self.num_queries} frame queries, got {n}")
        if self.structure == "none":
            return Tensor(np.zeros((n, d)))
        pos = (self.temporal_codes(t)[:, None, :] + self.slot_pos).reshape(t * n, d)
        tokens = frame_queries.reshape(t * n, d)
        for layer in self.encoder:
            tokens = layer(tokens, pos=pos)
        if not self.decoder:
            # encoder-only variant: each slot's video query is its temporal mean
            return tokens.reshape(t, n, d).mean(axis=0)
        queries = sentence.reshape(1, d) + np.zeros((n, 1))
        for layer in self.decoder:
            queries = layer(queries, tokens, query_pos=self.slot_pos, memory_pos=pos)
        return queries


def video_object_cluster(frame_queries: Tensor, sentence: Tensor, module: VideoObjectCluster) -> Tensor:
    return module(frame_queries, sentence)


def broadcast_enhance(frame_queries: Tensor, video_queries: Tensor) -> Tensor:
    """Add video query ``n`` to frame query ``n`` of every frame."""
    if frame_queries.shape[1] != video_queries.shape[0]:
        raise ContractError(
            f"video query count {video_queries.shape[0]} differs from frame query count {frame_queries.shape[1]}")
    return frame_queries + video_queries.reshape(1, *video_queries.shape)
