"""Small stand-ins for the video and text backbones.

The visual side is a strided convolutional stem that yields a four-level
feature pyramid at strides 4, 8, 16 and 32.  The text side is an embedding
table followed by a two-layer transformer encoder; the sentence feature is
the mean of the final word states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .nn import Conv2d, Embedding, EncoderLayer, Module
from .tensor import Tensor

PAD, UNK = "<pad>", "<unk>"
MAX_TOKENS = 64
STAGE_CHANNELS = (16, 32, 64, 128)
STEM_CHANNELS = 8
# strides 4/8/16 are exact; the coarsest level has ceil(H0 / 32) rows
FRAME_MULTIPLE = 16


class Vocabulary:
    """Token <-> id map with reserved PAD (0) and UNK (1) ids."""

    def __init__(self, words):
        self.words = [PAD, UNK] + sorted(set(words) - {PAD, UNK})
        self.ids = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def encode(self, text: str) -> list[int]:
        return [self.ids.get(tok, 1) for tok in text.lower().split()]

    def decode(self, ids) -> str:
        return " ".join(self.words[i] for i in ids)


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, 3, H0, W0) in [0, 1]

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class TextExpression:
    token_ids: list[int]
    text: str = ""

    def validate(self, vocab_size: int) -> None:
        if not 1 <= len(self.token_ids) <= MAX_TOKENS:
            raise ContractError(f"expression length {len(self.token_ids)} outside [1, {MAX_TOKENS}]")
        if any(i < 0 or i >= vocab_size for i in self.token_ids):
            raise ContractError("token id outside vocabulary")


@dataclass
class FeaturePyramid:
    levels: list[Tensor]  # level i (1-based) at index i-1, each (T, C_i, H_i, W_i)

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i - 1]


@dataclass
class TextFeatures:
    words: Tensor     # (L, C_t)
    sentence: Tensor  # (1, C_t)


class VisualEncoder(Module):
    def __init__(self, rng: np.random.Generator):
        self.stem = Conv2d(3, STEM_CHANNELS, 3, rng, stride=2, padding=1)
        chans = (STEM_CHANNELS,) + STAGE_CHANNELS
        self.stages = [Conv2d(a, b, 3, rng, stride=2, padding=1) for a, b in zip(chans[:-1], chans[1:])]

    @property
    def channels(self) -> tuple[int, ...]:
        return STAGE_CHANNELS

    def __call__(self, clip) -> FeaturePyramid:
        frames = clip.frames if isinstance(clip, VideoClip) else clip
        frames = frames if isinstance(frames, Tensor) else Tensor(frames)
        if frames.ndim != 4 or frames.shape[1] != 3:
            raise ConfigError(f"video clip must be (T, 3, H, W), got {frames.shape}")
        if frames.shape[2] % FRAME_MULTIPLE or frames.shape[3] % FRAME_MULTIPLE:
            raise ConfigError(f"frame size {frames.shape[2:]} is not divisible by {FRAME_MULTIPLE}")
        x = T.relu(self.stem(frames))
        levels = []
        for stage in self.stages:
            x = T.relu(stage(x))
            levels.append(x)
        return FeaturePyramid(levels)


class TextEncoder(Module):
    def __init__(self, vocab_size: int, dim: int, heads: int, layers: int, rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.embed = Embedding(vocab_size, dim, rng, scale=1.0)
        self.pos = Embedding(MAX_TOKENS, dim, rng, scale=0.1)
        self.layers = [EncoderLayer(dim, heads, rng) for _ in range(layers)]

    def embed_tokens(self, ids) -> Tensor:
        return self.embed(np.asarray(ids, dtype=np.int64))

    def __call__(self, expr) -> TextFeatures:
        ids = expr.token_ids if isinstance(expr, TextExpression) else list(expr)
        ids = [i if 0 <= i < self.vocab_size else 1 for i in ids]
        TextExpression(ids).validate(self.vocab_size)
        x = self.embed_tokens(ids) + self.pos(np.arange(len(ids)))
        for layer in self.layers:
            x = layer(x)
        return TextFeatures(words=x, sentence=x.mean(axis=0, keepdims=True))
