"""Exact transportation simplex (MODI / u-v method) with Bland's pivoting rule.

Dense and meant for desk-scale marginals. Bland's rule (first improving cell in
row-major order enters; among tied blocking cells the smallest row-major index
leaves) makes the pivot sequence, and hence the returned plan, deterministic.
"""
from __future__ import annotations

from collections import deque

import numpy as np


class CapExceededError(RuntimeError):
    """Problem size exceeds a configured cap."""


def _northwest_corner(a: np.ndarray, b: np.ndarray):
    m, n = len(a), len(b)
    ra, rb = a.copy(), b.copy()
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(ra[i], rb[j])
        flow[i, j] = max(x, 0.0)
        basis.append((i, j))
        ra[i] -= x
        rb[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if (ra[i] <= rb[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flow, basis


def _adjacency(basis, m, n):
    adj = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    return adj


def _potentials(C, basis, m, n):
    adj = _adjacency(basis, m, n)
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for nb in adj[k]:
            if np.isnan(pot[nb]):
                if k < m:
                    pot[nb] = C[k, nb - m] - pot[k]
                else:
                    pot[nb] = C[nb, k - m] - pot[k]
                queue.append(nb)
    return pot[:m], pot[m:], adj


def _tree_path(adj, src, dst):
    parent = {src: None}
    queue = deque([src])
    while queue:
        k = queue.popleft()
        if k == dst:
            break
        for nb in adj[k]:
            if nb not in parent:
                parent[nb] = k
                queue.append(nb)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return path[::-1]


def transport_simplex(a, b, C, max_iter: int = 100_000):
    """Minimise <C, P> over plans P >= 0 with row sums ``a`` and column sums ``b``.

    Returns ``(value, plan)``. ``a`` and ``b`` must have equal totals.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.asarray(C, dtype=float)
    m, n = len(a), len(b)
    if C.shape != (m, n):
        raise ValueError(f"cost shape {C.shape} does not match marginals ({m}, {n})")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise ValueError(f"marginal totals differ: {a.sum()} vs {b.sum()}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    flow, basis = _northwest_corner(a, b)
    scale = 1.0 + float(np.abs(C).max(initial=0.0))
    eps = 1e-12 * scale
    for _ in range(max_iter):
        u, v, adj = _potentials(C, basis, m, n)
        red = C - u[:, None] - v[None, :]
        neg = np.flatnonzero(red.ravel() < -eps)
        if neg.size == 0:
            break
        i, j = divmod(int(neg[0]), n)
        nodes = _tree_path(adj, i, m + j)
        cells = []
        for s, t in zip(nodes[:-1], nodes[1:]):
            cells.append((s, t - m) if s < m else (t, s - m))
        minus = cells[0::2]
        plus = cells[1::2]
        theta = min(flow[c] for c in minus)
        leaving = min((c for c in minus if flow[c] <= theta), key=lambda c: c[0] * n + c[1])
        flow[i, j] += theta
        for c in plus:
            flow[c] += theta
        for c in minus:
            flow[c] = max(flow[c] - theta, 0.0)
        basis.remove(leaving)
        basis.append((i, j))
    else:
        raise RuntimeError("transportation simplex did not converge")
    return float(np.sum(flow * C)), flow
