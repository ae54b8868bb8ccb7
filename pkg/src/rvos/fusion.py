"""Two-stream multi-modal fusion over pyramid scales 2-4.

Language-to-vision: every visual token queries the word embeddings and the
attended result gates the token elementwise.  Vision-to-language: every word
queries all visual tokens of the clip and gates itself the same way.  One
attention module per direction is shared by all three scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import FUSION_STRATEGIES
from .encoders import FeaturePyramid
from .errors import ConfigError, ShapeError
from .nn import Conv2d, Linear, Module, MultiheadAttention
from .tensor import Tensor

FUSED_SCALES = (2, 3, 4)


@dataclass
class FusedFeatures:
    visual: dict[int, Tensor]    # scale -> (T, H_i*W_i, D)
    textual: dict[int, Tensor]   # scale -> (L, D)
    spatial: dict[int, tuple[int, int]]


def multi_head_cross_attention(x: Tensor, y: Tensor, attn: MultiheadAttention, return_weights: bool = False):
    """Queries from ``x[n, D]``, keys and values from ``y[m, D]``."""
    return attn(x, y, return_weights=return_weights)


class JointProjection(Module):
    """1x1 convolutions (visual, per scale) and a linear map (text) into width D."""

    def __init__(self, visual_channels, text_dim: int, dim: int, rng: np.random.Generator):
        # visual_channels[i-1] is C_i
        self.visual = [Conv2d(visual_channels[s - 1], dim, 1, rng) for s in FUSED_SCALES]
        self.text = Linear(text_dim, dim, rng)

    def project_visual(self, pyramid: FeaturePyramid) -> dict[int, Tensor]:
        out = {}
        for conv, s in zip(self.visual, FUSED_SCALES):
            out[s] = conv(pyramid[s])  # (T, D, H, W)
        return out


class MultiModalFusion(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, strategy: str = "both"):
        if strategy not in FUSION_STRATEGIES:
            raise ConfigError(f"fusion_strategy must be one of {FUSION_STRATEGIES}, got {strategy!r}")
        self.strategy = strategy
        self.l2v = MultiheadAttention(dim, heads, rng)
        self.v2l = MultiheadAttention(dim, heads, rng)

    def __call__(self, visual: dict[int, Tensor], words: Tensor) -> FusedFeatures:
        """``visual`` maps scale -> projected map (T, D, H, W); ``words`` is (L, D)."""
        fused_v, fused_t, spatial = {}, {}, {}
        for s in FUSED_SCALES:
            fv = visual[s]
            t, d, h, w = fv.shape
            if words.shape[-1] != d:
                raise ShapeError(f"word width {words.shape[-1]} differs from visual width {d}")
            tokens = fv.transpose(0, 2, 3, 1).reshape(t * h * w, d)
            out_v, out_t = tokens, words
            if self.strategy in ("l2v", "both"):
                out_v = multi_head_cross_attention(tokens, words, self.l2v) * tokens
            if self.strategy in ("v2l", "both"):
                out_t = multi_head_cross_attention(words, tokens, self.v2l) * words
            fused_v[s] = out_v.reshape(t, h * w, d)
            fused_t[s] = out_t
            spatial[s] = (h, w)
        return FusedFeatures(fused_v, fused_t, spatial)
