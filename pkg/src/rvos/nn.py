"""Parameterised layers built on :mod:`rvos.tensor`, plus the Adam optimiser."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def Parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, gain: float = 1.0) -> Tensor:
    bound = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return Parameter(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)))


class Module:
    """Attribute-walking container; parameter names are dotted attribute paths."""

    def named_parameters(self, prefix: str = "", seen: set | None = None) -> Iterator[tuple[str, Tensor]]:
        seen = set() if seen is None else seen
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad and id(val) not in seen:
                    seen.add(id(val))
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.", seen)
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.", seen)
                    elif isinstance(item, Tensor) and item.requires_grad and id(item) not in seen:
                        seen.add(id(item))
                        yield f"{prefix}{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise ShapeError(f"checkpoint keys differ: missing={missing[:5]} unexpected={extra[:5]}")
        for key, arr in state.items():
            if key not in own:
                continue
            if own[key].shape != tuple(arr.shape):
                raise ShapeError(f"checkpoint key {key!r} has shape {tuple(arr.shape)}, model expects {own[key].shape}")
            own[key].data[...] = arr

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, gain: float = 1.0):
        self.weight = xavier(rng, d_in, d_out, gain=gain)
        self.bias = Parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            return x @ self.weight + self.bias
        lead = x.shape[:-1]
        y = x.reshape(-1, x.shape[-1]) @ self.weight + self.bias
        return y.reshape(*lead, y.shape[-1])


class MLP(Module):
    """``n_layers`` linear layers with ReLU between them."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, n_layers: int, rng: np.random.Generator):
        dims = [d_in] + [d_hidden] * (n_layers - 1) + [d_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, stride: int = 1, padding: int = 0):
        fan_in, fan_out = c_in * k * k, c_out * k * k
        self.weight = xavier(rng, fan_in, fan_out, shape=(c_out, c_in, k, k))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Embedding(Module):
    def __init__(self, n: int, dim: int, rng: np.random.Generator, scale: float = 1.0):
        self.table = Parameter(rng.normal(0.0, scale, size=(n, dim)))

    def __call__(self, ids) -> Tensor:
        return T.take(self.table, ids)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, heads, d // heads)
    k = len(lead)
    return x.transpose(*range(k), k + 1, k, k + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    k = len(lead)
    return x.transpose(*range(k), k + 1, k, k + 2).reshape(*lead, n, h * dh)


class MultiheadAttention(Module):
    """Scaled dot-product attention: queries from ``x``, keys/values from ``y``."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if heads < 1 or dim % heads:
            raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x: Tensor, y: Tensor, q_pos=None, k_pos=None, return_weights: bool = False):
        d = x.shape[-1]
        if y.shape[-1] != d:
            raise ShapeError(f"attention feature dims differ: {x.shape} vs {y.shape}")
        q = self.q(x if q_pos is None else x + q_pos)
        k = self.k(y if k_pos is None else y + k_pos)
        v = self.v(y)
        qh, kh, vh = (_split_heads(t, self.heads) for t in (q, k, v))
        dh = d // self.heads
        nd = kh.ndim
        scores = (qh @ kh.transpose(*range(nd - 2), nd - 1, nd - 2)) * (1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        out = self.out(_merge_heads(attn @ vh))
        return (out, attn) if return_weights else out


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class EncoderLayer(Module):
    """Post-norm self-attention block."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn: int | None = None):
        self.attn = MultiheadAttention(dim, heads, rng)
        self.ffn = FeedForward(dim, ffn or 2 * dim, rng)
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)

    def __call__(self, x: Tensor, pos=None) -> Tensor:
        x = self.norm1(x + self.attn(x, x, q_pos=pos, k_pos=pos))
        return self.norm2(x + self.ffn(x))


class DecoderLayer(Module):
    """Post-norm query self-attention, cross-attention to memory, then FFN."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, ffn: int | None = None):
        self.self_attn = MultiheadAttention(dim, heads, rng)
        self.cross_attn = MultiheadAttention(dim, heads, rng)
        self.ffn = FeedForward(dim, ffn or 2 * dim, rng)
        self.norm1 = LayerNorm(dim)
        self.norm2 = LayerNorm(dim)
        self.norm3 = LayerNorm(dim)

    def __call__(self, q: Tensor, memory: Tensor, query_pos=None, memory_pos=None, return_attn: bool = False):
        q = self.norm1(q + self.self_attn(q, q, q_pos=query_pos, k_pos=query_pos))
        att, weights = self.cross_attn(q, memory, q_pos=query_pos, k_pos=memory_pos, return_weights=True)
        q = self.norm2(q + att)
        q = self.norm3(q + self.ffn(q))
        return (q, weights) if return_attn else q


def sine_encoding(positions: np.ndarray, dim: int, temperature: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of scalar positions, shape ``(len(positions), dim)``."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freq = temperature ** (-np.arange(half) / max(half, 1))
    ang = positions[:, None] * freq[None, :]
    enc = np.zeros((positions.size, dim))
    enc[:, 0:2 * half:2] = np.sin(ang)
    enc[:, 1:2 * half:2] = np.cos(ang)
    return enc


def sine_encoding_2d(h: int, w: int, dim: int) -> np.ndarray:
    """2-D encoding over an ``h x w`` grid: half the channels for y, half for x."""
    ys = (np.arange(h) + 0.5) / h * 2 * math.pi
    xs = (np.arange(w) + 0.5) / w * 2 * math.pi
    half = dim // 2
    ey = sine_encoding(ys, half, temperature=100.0)
    ex = sine_encoding(xs, dim - half, temperature=100.0)
    grid = np.concatenate([np.repeat(ey[:, None, :], w, axis=1), np.repeat(ex[None, :, :], h, axis=0)], axis=-1)
    return grid.reshape(h * w, dim)


class Adam:
    """Adam / AdamW / RMSprop-style updates over a fixed parameter list.

    ``decoupled`` selects AdamW-style weight decay; otherwise the decay is
    added to the gradient.  ``betas[0] = 0`` gives a momentum-free step.
    """

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, clip_norm: float | None = None, decoupled: bool = True):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.decoupled = decoupled
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def grad_norm(self) -> float:
        return math.sqrt(sum(float((p.grad ** 2).sum()) for p in self.params if p.grad is not None))

    def step(self) -> float:
        self.t += 1
        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / (norm + 1e-12)
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            if self.weight_decay and not self.decoupled:
                g = g + self.weight_decay * p.data
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay and self.decoupled:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
