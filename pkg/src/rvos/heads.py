"""Class, box and dynamic-kernel mask heads, and the FPN that feeds the mask head."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import STAGE_CHANNELS
from .errors import ShapeError
from .nn import MLP, Conv2d, Module
from .sim import EncodedVisual
from .tensor import Tensor

DYNAMIC_HIDDEN = 8
DYNAMIC_LAYERS = 3


@dataclass
class TrajectoryPrediction:
    class_logits: Tensor  # (T, N_q, K+1)
    boxes: Tensor         # (T, N_q, 4) normalised cx, cy, w, h
    masks: Tensor         # (T, N_q, H0/4, W0/4) logits

    @property
    def num_queries(self) -> int:
        return self.class_logits.shape[1]


def dynamic_param_count(c_in: int, hidden: int = DYNAMIC_HIDDEN) -> int:
    """Weights + biases of the (c_in+2) -> hidden -> hidden -> 1 kernel stack."""
    return (c_in + 2) * hidden + hidden + hidden * hidden + hidden + hidden + 1


class ClassHead(Module):
    def __init__(self, dim: int, num_classes: int, rng: np.random.Generator, prior: float = 0.01):
        self.mlp = MLP(dim, dim, num_classes + 1, 3, rng)
        self.mlp.layers[-1].bias.data[:] = -math.log((1 - prior) / prior)

    def __call__(self, queries: Tensor) -> Tensor:
        return self.mlp(queries)


class BoxHead(Module):
    """Normalised (cx, cy, w, h); centres are offsets from a reference point in logit space."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.mlp = MLP(dim, dim, 4, 3, rng)
        last = self.mlp.layers[-1]
        last.weight.data[:] = 0.0
        last.bias.data[:] = [0.0, 0.0, -1.5, -1.5]

    def __call__(self, queries: Tensor, reference: Tensor | None = None) -> Tensor:
        out = self.mlp(queries)
        if reference is None:
            return T.sigmoid(out)
        ref = T.minimum(T.maximum(reference, 1e-4), 1 - 1e-4)
        centre = T.sigmoid(out[..., :2] + T.log(ref) - T.log(1.0 - ref))
        return T.concat([centre, T.sigmoid(out[..., 2:])], axis=-1)


def class_head(queries: Tensor, head: ClassHead) -> Tensor:
    return head(queries)


def box_head(queries: Tensor, head: BoxHead, reference: Tensor | None = None) -> Tensor:
    return head(queries, reference)


class FPNDecoder(Module):
    """Top-down pathway from the coarsest encoded scale to stride 4."""

    def __init__(self, dim: int, rng: np.random.Generator, level1_channels: int = STAGE_CHANNELS[0]):
        self.lateral3 = Conv2d(dim, dim, 1, rng)
        self.lateral2 = Conv2d(dim, dim, 1, rng)
        self.lateral1 = Conv2d(level1_channels, dim, 1, rng)
        self.out = Conv2d(dim, dim, 3, rng, padding=1)

    def __call__(self, encoded: EncodedVisual, level1: Tensor) -> Tensor:
        x = encoded.as_map(4)
        for lateral, src in ((self.lateral3, encoded.as_map(3)), (self.lateral2, encoded.as_map(2)),
                             (self.lateral1, level1)):
            lat = lateral(src)
            if lat.shape[:2] != x.shape[:2]:
                raise ShapeError(f"FPN top-down {x.shape} does not match lateral {lat.shape}")
            # a 2x upsample whenever the frame side is a multiple of 32
            x = T.bilinear_resize(x, lat.shape[2], lat.shape[3]) + lat
        return T.relu(self.out(x))


def fpn_decode(encoded: EncodedVisual, level1: Tensor, fpn: FPNDecoder) -> Tensor:
    return fpn(encoded, level1)


def coordinate_grid(h: int, w: int) -> np.ndarray:
    """Pixel-centre coordinates in [0, 1], shape (h*w, 2) ordered (x, y)."""
    ys, xs = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=-1)


def relative_coordinates(boxes: Tensor, h: int, w: int) -> Tensor:
    """(x - cx, y - cy) for every pixel, shape (T, N, h*w, 2)."""
    centres = boxes[..., :2]
    return Tensor(coordinate_grid(h, w)) - centres.reshape(*centres.shape[:-1], 1, 2)


class MaskHead(Module):
    """Per-query kernels from a controller MLP, applied as three 1x1 convolutions."""

    def __init__(self, dim: int, seg_channels: int, rng: np.random.Generator):
        self.seg_channels = seg_channels
        self.num_params = dynamic_param_count(seg_channels)
        self.controller = MLP(dim, dim, self.num_params, 3, rng)

    def split_kernels(self, kernels: Tensor):
        c, hdim = self.seg_channels + 2, DYNAMIC_HIDDEN
        lead = kernels.shape[:-1]
        sizes = [c * hdim, hdim, hdim * hdim, hdim, hdim, 1]
        shapes = [(c, hdim), (1, hdim), (hdim, hdim), (1, hdim), (hdim, 1), (1, 1)]
        out, start = [], 0
        for n, shp in zip(sizes, shapes):
            out.append(kernels[..., start:start + n].reshape(*lead, *shp))
            start += n
        return out

    def apply_kernels(self, kernels: Tensor, seg: Tensor, boxes: Tensor) -> Tensor:
        t, c, h, w = seg.shape
        if c != self.seg_channels:
            raise ShapeError(f"mask features have {c} channels, head expects {self.seg_channels}")
        n = kernels.shape[1]
        w1, b1, w2, b2, w3, b3 = self.split_kernels(kernels)
        feats = seg.reshape(t, 1, c, h * w).transpose(0, 1, 3, 2)          # (T, 1, P, C)
        coords = relative_coordinates(boxes, h, w)                        # (T, N, P, 2)
        x = feats @ w1[:, :, :c] + coords @ w1[:, :, c:] + b1
        x = T.relu(x)
        x = T.relu(x @ w2 + b2)
        x = x @ w3 + b3                                                     # (T, N, P, 1)
        return x.reshape(t, n, h, w)

    def __call__(self, queries: Tensor, seg: Tensor, boxes: Tensor) -> Tensor:
        return self.apply_kernels(self.controller(queries), seg, boxes)


def mask_head(queries: Tensor, seg: Tensor, boxes: Tensor, head: MaskHead) -> Tensor:
    return head(queries, seg, boxes)
