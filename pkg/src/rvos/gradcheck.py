"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, new_tape


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` (0 when both vanish)."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < 1e-12:
        return float(np.linalg.norm(a - n))
    return float(np.linalg.norm(a - n) / denom)


def numerical_grad(fn: Callable[[], Tensor], target: Tensor, h: float = 1e-5,
                   coords: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``target.data`` (in place)."""
    flat = target.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn().data)
        flat[i] = old - h
        fm = float(fn().data)
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def analytic_grads(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> list[np.ndarray]:
    new_tape()
    for t in inputs:
        t.grad = None
    loss = fn()
    loss.backward()
    return [np.zeros_like(t.data) if t.grad is None else np.array(t.grad) for t in inputs]


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
              max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``fn`` must rebuild the graph from ``inputs`` on every call.  With
    ``max_coords`` set, only that many randomly chosen coordinates per input
    are differenced (used for large parameter sets).
    """
    grads = analytic_grads(fn, inputs)
    worst = 0.0
    for t, g in zip(inputs, grads):
        coords = None
        if max_coords is not None and t.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = sorted(rng.choice(t.size, size=max_coords, replace=False).tolist())
        num = numerical_grad(fn, t, h, coords)
        ana = g.reshape(-1) if coords is None else g.reshape(-1)[coords]
        worst = max(worst, relative_error(ana, num))
    return worst
