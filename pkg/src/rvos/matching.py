"""Minimum-cost assignment (Hungarian method with row/column potentials)."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-total-cost one-to-one assignment of ``min(n, m)`` (row, col) pairs.

    Shortest augmenting paths over reduced costs, O(n^2 m).  Rectangular
    inputs are handled by assigning along the shorter side.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ContractError(f"cost matrix must be 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ContractError("cost matrix contains NaN or infinite entries")
    n, m = c.shape
    if n == 0 or m == 0:
        return []
    transposed = n > m
    if transposed:
        c = c.T
        n, m = m, n

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=np.int64)  # owner[j] = row (1-based) matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    pairs = [(int(owner[j]) - 1, j - 1) for j in range(1, m + 1) if owner[j]]
    if transposed:
        pairs = [(col, row) for row, col in pairs]
    return sorted(pairs)


def assignment_cost(cost, pairs) -> float:
    c = np.asarray(cost, dtype=np.float64)
    total = 0.0
    for r, k in sorted(pairs):
        total += c[r, k]
    return total
