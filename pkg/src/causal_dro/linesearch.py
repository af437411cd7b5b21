"""Bracketing and golden-section search for convex functions on a half-line.

Objective values may be ``math.inf`` (outside the effective domain); they are
only ever compared, never combined arithmetically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

INV_PHI = (math.sqrt(5) - 1) / 2


class UnboundedDualError(RuntimeError):
    """The dual objective keeps decreasing up to the multiplier cap."""


@dataclass
class SearchResult:
    x: float
    fx: float
    bracket: tuple[float, float]
    iterations: int
    probes: list[tuple[float, float]] = field(default_factory=list)
    at_cap: bool = False


def golden_section(h: Callable[[float], float], a: float, b: float, tol: float = 1e-8,
                   max_iter: int = 500, probes: list | None = None) -> SearchResult:
    """Minimise a convex (unimodal) ``h`` on [a, b]; stops when b - a <= tol * max(1, |b|)."""
    probes = [] if probes is None else probes

    def H(x):
        v = h(x)
        probes.append((x, v))
        return v

    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = H(c), H(d)
    it = 0
    while (b - a) > tol * max(1.0, abs(b)) and it < max_iter:
        it += 1
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = H(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = H(d)
    x, fx = min(probes, key=lambda p: p[1])
    return SearchResult(x, fx, (a, b), it, probes)


def minimize_halfline(h: Callable[[float], float], lo: float = 0.0, hi: float = math.inf,
                      cap: float = 1e8, start: float = 1.0, tol: float = 1e-8,
                      flat_tol: float = 1e-9) -> SearchResult:
    """Minimise convex ``h`` over [lo, min(hi, cap)].

    A bracket is grown by doubling from ``start`` until ``h`` increases (or turns
    infinite), then refined by golden-section search. If ``h`` is still decreasing
    at the cap by more than ``flat_tol`` (relative), :class:`UnboundedDualError` is raised.
    """
    top = min(hi, cap)
    probes: list[tuple[float, float]] = []

    def H(x):
        v = h(x)
        probes.append((x, v))
        return v

    xs, fs = [lo], [H(lo)]
    if top <= lo:
        return SearchResult(lo, fs[0], (lo, lo), 0, probes)
    x = min(max(start, lo), top)
    at_cap = False
    while True:
        fx = H(x)
        xs.append(x)
        fs.append(fx)
        if fx > fs[-2]:
            a = xs[-3] if len(xs) >= 3 else xs[0]
            bracket = (a, x)
            break
        if x >= top:
            at_cap = True
            bracket = (xs[-2], x)
            break
        x = min(2 * x, top)
    if at_cap and top == cap and hi > cap:
        prev = H(cap / 2)
        if math.isfinite(fs[-1]) and fs[-1] < prev - flat_tol * (1 + abs(prev)):
            raise UnboundedDualError(
                f"dual objective still decreasing at multiplier cap {cap:g} "
                f"(h({cap / 2:g})={prev:.6g}, h({cap:g})={fs[-1]:.6g}); the payoff may violate "
                "the growth condition |f(x)-f(y)| <= K1 c(x,y) + K2(x), or the candidate grid "
                "does not cover the support of the reference law"
            )
    res = golden_section(h, bracket[0], bracket[1], tol=tol, probes=probes)
    x, fx = min(probes, key=lambda p: p[1])
    return SearchResult(x, fx, bracket, res.iterations, probes, at_cap=at_cap and x >= bracket[1] - tol * max(1, x))
