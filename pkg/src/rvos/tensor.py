"""Dense float64 tensors with a reverse-mode differentiation tape.

Every differentiable operation records a node on the calling thread's
current :class:`Tape`.  ``Tape.backward`` walks those nodes once, in reverse
recording order, and accumulates gradients into the ``grad`` field of every
participating tensor that has ``requires_grad`` set.

Only the operations the segmentation pipeline needs are provided; each one
has a hand-written backward rule that is checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor", "Tape", "tensor", "get_tape", "new_tape", "no_grad", "grad_enabled",
    "add", "sub", "mul", "div", "neg", "matmul", "power", "exp", "log", "sqrt",
    "sigmoid", "relu", "softplus", "log_sigmoid", "absolute", "maximum", "minimum",
    "sum", "mean", "reshape", "transpose", "concat", "stack", "index", "take",
    "softmax", "log_softmax", "layer_norm", "conv2d", "upsample2x",
    "bilinear_resize", "avg_pool2d", "backward",
]

_state = threading.local()


class Node:
    __slots__ = ("inputs", "output", "rule")

    def __init__(self, inputs, output, rule):
        self.inputs = inputs
        self.output = output
        self.rule = rule


class Tape:
    """Ordered record of differentiable operations on one thread."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def record(self, inputs: Sequence["Tensor"], output: "Tensor", rule: Callable) -> None:
        self.nodes.append(Node(tuple(inputs), output, rule))

    def reset(self) -> None:
        self.nodes = []

    def backward(self, loss: "Tensor") -> None:
        """Populate ``grad`` for every requires-grad tensor feeding ``loss``.

        The tape is cleared afterwards, so a second call needs a fresh
        forward pass.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss is not on the tape (no input requires grad)")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {id(loss): loss}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            leaves.pop(id(node.output), None)
            out = node.output
            out.grad = g if out.grad is None else out.grad + g
            for inp, gi in zip(node.inputs, node.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                    leaves[key] = inp
        for key, g in grads.items():
            t = leaves[key]
            t.grad = g if t.grad is None else t.grad + g
        self.reset()


def get_tape() -> Tape:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = Tape()
    return tape


def new_tape() -> Tape:
    """Install and return an empty tape for the calling thread."""
    _state.tape = Tape()
    return _state.tape


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """n-dimensional float64 array that can take part in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor's reflected operator

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, idx): return index(self, idx)

    def sum(self, axis=None, keepdims=False): return sum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    req = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    if req:
        get_tape().record(inputs, out, rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    get_tape().backward(loss)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                              _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None))


def neg(a) -> Tensor:
    a = _wrap(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _wrap(a)
    return _result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (g * 0.5 / out,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), overflow-safe."""
    a = _wrap(a)
    return _result(np.logaddexp(0.0, a.data), (a,), lambda g: (g * _sigmoid(a.data),))


def log_sigmoid(a) -> Tensor:
    a = _wrap(a)
    return _result(-np.logaddexp(0.0, -a.data), (a,), lambda g: (g * _sigmoid(-a.data),))


def absolute(a) -> Tensor:
    a = _wrap(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    pick = a.data >= b.data
    return _result(np.where(pick, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)))


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    pick = a.data <= b.data
    return _result(np.where(pick, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(g * pick, a.shape), _unbroadcast(g * ~pick, b.shape)))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, numpy broadcasting on the rest."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul cannot broadcast {a.shape} @ {b.shape}") from exc

    def rule(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), rule)


# ---------------------------------------------------------------- reductions and layout

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _result(out, (a,), rule)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _result(out, (a,), rule)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _result(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in ts]} on axis {axis}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(out, ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in ts]}") from exc
    n = len(ts)
    return _result(out, ts, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def _is_basic(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def index(a, idx) -> Tensor:
    a = _wrap(a)
    out = a.data[idx]
    basic = _is_basic(idx)

    def rule(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(np.array(out, copy=True), (a,), rule)


def take(table, ids) -> Tensor:
    """Row lookup ``table[ids]`` (embedding lookup) along axis 0."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _result(table.data[ids], (table,), rule)


# ---------------------------------------------------------------- normalisations

def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _result(out, (a,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"log_softmax axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    return _result(out, (a,), lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm affine params {gamma.shape}/{beta.shape} do not match last axis {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def rule(g):
        lead = tuple(range(g.ndim - 1))
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(out, (x, gamma, beta), rule)


# ---------------------------------------------------------------- spatial ops

def conv2d(x, w, b=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``w[O,C,kh,kw]`` via im2col."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d input {x.shape} incompatible with weight {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output would be empty for input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride][:, :, :ho, :wo].reshape(n, c, ho * wo)
    else:
        cols = np.empty((n, c, kh, kw, ho, wo))
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
        cols = cols.reshape(n, c * kh * kw, ho * wo)
    wm = w.data.reshape(o, -1)
    out = np.matmul(wm, cols).reshape(n, o, ho, wo)
    inputs = [x, w]
    if b is not None:
        b = _wrap(b)
        out = out + b.data.reshape(1, o, 1, 1)
        inputs.append(b)

    def rule(g):
        gm = g.reshape(n, o, ho * wo)
        gw = np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = np.matmul(wm.T, gm)
            dxp = np.zeros_like(xp)
            if kh == 1 and kw == 1:
                dxp[:, :, :stride * ho:stride, :stride * wo:stride] = dcols.reshape(n, c, ho, wo)
            else:
                dcols = dcols.reshape(n, c, kh, kw, ho, wo)
                for i in range(kh):
                    for j in range(kw):
                        dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
            gx = dxp[:, :, padding:padding + h, padding:padding + wd] if padding else dxp
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, inputs, rule)


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear-interpolation weights (half-pixel centres, edge clamped)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_resize(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes."""
    x = _wrap(x)
    mh = resize_matrix(x.shape[-2], out_h)
    mw = resize_matrix(x.shape[-1], out_w)
    out = mh @ x.data @ mw.T
    return _result(out, (x,), lambda g: (mh.T @ g @ mw,))


def upsample2x(x) -> Tensor:
    x = _wrap(x)
    return bilinear_resize(x, 2 * x.shape[-2], 2 * x.shape[-1])


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = _wrap(x)
    *lead, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d window {k} does not tile spatial dims {(h, w)}")
    out = x.data.reshape(*lead, h // k, k, w // k, k).mean(axis=(-3, -1))

    def rule(g):
        g = np.repeat(np.repeat(g, k, axis=-2), k, axis=-1)
        return (g / (k * k),)

    return _result(out, (x,), rule)
