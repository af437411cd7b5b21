"""Exact optimal transport between finite path laws and scenario trees."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .measures import Path, PathMeasure, ScenarioTree, leaf_path_index, to_path_measure
from .simplex import CapExceededError, transport_simplex

FEAS_TOL = 1e-10
CAUSAL_TOL = 1e-8
DEFAULT_OT_CAP = 2000

BUILTIN_GROUND = ("sqeuclidean", "euclidean")


def ground_cost(kind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Broadcast a per-step ground cost over trailing value axes."""
    if kind == "sqeuclidean":
        return np.sum((x - y) ** 2, axis=-1)
    if kind == "euclidean":
        return np.sqrt(np.sum((x - y) ** 2, axis=-1))
    if callable(kind):
        x, y = np.broadcast_arrays(x, y)
        flat_x = x.reshape(-1, x.shape[-1])
        flat_y = y.reshape(-1, y.shape[-1])
        out = np.fromiter((kind(a, b) for a, b in zip(flat_x, flat_y)), dtype=float, count=len(flat_x))
        return out.reshape(x.shape[:-1])
    raise ValueError(f"unknown ground cost {kind!r}")


class CostSpec:
    """Transport cost on path pairs: a separable sum of per-step ground costs or a general function.

    Per-step ground costs are ``"sqeuclidean"``, ``"euclidean"`` or a callable
    ``(x_n, y_n) -> float`` on value arrays (use :meth:`tabulated_step` for tables).
    A general cost is a callable ``(x_path, y_path) -> float`` over tuples of values.
    """

    def __init__(self, steps: Sequence | None = None, general: Callable | None = None, name: str = ""):
        if (steps is None) == (general is None):
            raise ValueError("give exactly one of per-step ground costs or a general cost")
        self.steps = tuple(steps) if steps is not None else None
        self.general = general
        self.name = name or ("separable(" + ",".join(s if isinstance(s, str) else "fn" for s in self.steps) + ")"
                             if self.steps is not None else "general")

    @classmethod
    def sqeuclidean(cls, horizon: int) -> "CostSpec":
        return cls(steps=["sqeuclidean"] * horizon, name="sqdist")

    @classmethod
    def euclidean(cls, horizon: int) -> "CostSpec":
        return cls(steps=["euclidean"] * horizon, name="dist")

    @classmethod
    def from_table(cls, table: Mapping[tuple[Path, Path], float]) -> "CostSpec":
        """General cost looked up from a path-pair table; missing pairs raise ``KeyError``."""
        norm = {(_key(x), _key(y)): float(v) for (x, y), v in table.items()}
        if any(v < 0 for v in norm.values()):
            raise ValueError("tabulated costs must be nonnegative")

        def lookup(x, y):
            try:
                return norm[(_key(x), _key(y))]
            except KeyError:
                raise KeyError(f"cost table has no entry for ({x}, {y})") from None

        return cls(general=lookup, name="table")

    @staticmethod
    def tabulated_step(table: Mapping[tuple, float]) -> Callable:
        norm = {(_val(x), _val(y)): float(v) for (x, y), v in table.items()}

        def lookup(x, y):
            return norm[(_val(x), _val(y))]

        return lookup

    @property
    def separable(self) -> bool:
        return self.steps is not None

    def step_matrix(self, n: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Ground cost c_n between value arrays ``xs`` (k, d) and ``ys`` (l, d); n is 1-based."""
        if not self.separable:
            raise ValueError("step costs are only defined for separable costs")
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        return ground_cost(self.steps[n - 1], xs[:, None, :], ys[None, :, :])

    def matrix(self, xpaths: Sequence[Path], ypaths: Sequence[Path]) -> np.ndarray:
        """Cost matrix between two lists of paths."""
        if self.separable:
            N = len(self.steps)
            out = np.zeros((len(xpaths), len(ypaths)))
            for n in range(1, N + 1):
                xs = np.array([p[n - 1] for p in xpaths], dtype=float)
                ys = np.array([p[n - 1] for p in ypaths], dtype=float)
                out += self.step_matrix(n, xs, ys)
            return out
        return np.array([[float(self.general(x, y)) for y in ypaths] for x in xpaths], dtype=float)

    def __call__(self, x: Path, y: Path) -> float:
        return float(self.matrix([x], [y])[0, 0])

    def __repr__(self) -> str:
        return f"CostSpec({self.name})"


def _val(v) -> tuple[float, ...]:
    return tuple(float(a) for a in np.atleast_1d(v))


def _key(p) -> Path:
    return tuple(_val(v) for v in p)


@dataclass(frozen=True, eq=False)
class Coupling:
    """Transport plan between two path measures (rows: ``mu`` paths, columns: ``nu`` paths)."""

    weights: np.ndarray
    mu: PathMeasure
    nu: PathMeasure

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (len(self.mu), len(self.nu)):
            raise ValueError(f"coupling shape {w.shape} does not match ({len(self.mu)}, {len(self.nu)})")

    def marginal_errors(self) -> tuple[float, float]:
        return (float(np.abs(self.weights.sum(1) - self.mu.weights).max()),
                float(np.abs(self.weights.sum(0) - self.nu.weights).max()))

    def is_feasible(self, tol: float = FEAS_TOL) -> bool:
        r, c = self.marginal_errors()
        return bool(np.all(self.weights >= -tol)) and r <= tol and c <= tol

    def transposed(self) -> "Coupling":
        return Coupling(self.weights.T, self.nu, self.mu)

    def cost(self, c: CostSpec) -> float:
        return float(np.sum(self.weights * c.matrix(self.mu.paths, self.nu.paths)))

    def to_csv(self, tol: float = 0.0) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["mu_path_index", "nu_path_index", "weight"])
        for i, j in zip(*np.nonzero(self.weights > tol)):
            wr.writerow([int(i), int(j), f"{self.weights[i, j]:.12g}"])
        return buf.getvalue()


def ot_classic(mu: PathMeasure, nu: PathMeasure, c: CostSpec, cap: int = DEFAULT_OT_CAP):
    """Classical optimal transport value and an optimal plan."""
    if len(mu) > cap or len(nu) > cap:
        raise CapExceededError(f"support sizes {len(mu)}x{len(nu)} exceed cap {cap}x{cap}")
    C = c.matrix(mu.paths, nu.paths)
    value, plan = transport_simplex(mu.weights, nu.weights, C)
    return value, Coupling(plan, mu, nu)


def ot_bicausal(mu: ScenarioTree, nu: ScenarioTree, c: CostSpec, cap: int = DEFAULT_OT_CAP):
    """Bicausal (adapted) transport between two trees by backward recursion on node pairs.

    The terminal value on a pair of leaves is the cost of their full paths; at each
    earlier step a pair of nodes gets the optimal classical transport value between
    their child distributions with the successor values as cost.
    """
    if mu.horizon != nu.horizon:
        raise ValueError(f"horizons differ: {mu.horizon} vs {nu.horizon}")
    N = mu.horizon
    levels_a = [mu.nodes_at(n) for n in range(1, N + 1)]
    levels_b = [nu.nodes_at(n) for n in range(1, N + 1)]
    pos_a = [{nid: k for k, nid in enumerate(lv)} for lv in levels_a]
    pos_b = [{nid: k for k, nid in enumerate(lv)} for lv in levels_b]

    V = c.matrix([mu.history(a) for a in levels_a[-1]], [nu.history(b) for b in levels_b[-1]])
    plans: dict[tuple[int, int], np.ndarray] = {}
    for n in range(N - 1, 0, -1):
        Vn = np.empty((len(levels_a[n - 1]), len(levels_b[n - 1])))
        for ia, a in enumerate(levels_a[n - 1]):
            ka = mu.children(a)
            pa = np.array([mu.node(k).prob for k in ka])
            ra = [pos_a[n][k] for k in ka]
            for ib, b in enumerate(levels_b[n - 1]):
                kb = nu.children(b)
                if len(ka) > cap or len(kb) > cap:
                    raise CapExceededError(f"node pair ({a}, {b}) has {len(ka)}x{len(kb)} children > cap {cap}")
                pb = np.array([nu.node(k).prob for k in kb])
                sub = V[np.ix_(ra, [pos_b[n][k] for k in kb])]
                Vn[ia, ib], plans[(a, b)] = transport_simplex(pa, pb, sub)
        V = Vn
    ra_ = mu.roots
    rb_ = nu.roots
    p1 = np.array([mu.node(r).prob for r in ra_])
    q1 = np.array([nu.node(r).prob for r in rb_])
    value, root_plan = transport_simplex(p1, q1, V[np.ix_([pos_a[0][r] for r in ra_], [pos_b[0][r] for r in rb_])])

    pm_mu, pm_nu = to_path_measure(mu), to_path_measure(nu)
    li_mu, li_nu = leaf_path_index(mu, pm_mu), leaf_path_index(nu, pm_nu)
    W = np.zeros((len(pm_mu), len(pm_nu)))
    stack = [(a, b, root_plan[i, j]) for i, a in enumerate(ra_) for j, b in enumerate(rb_) if root_plan[i, j] > 0]
    while stack:
        a, b, w = stack.pop()
        if mu.node(a).step == N:
            W[li_mu[a], li_nu[b]] += w
            continue
        P = plans[(a, b)]
        for i, ka in enumerate(mu.children(a)):
            for j, kb in enumerate(nu.children(b)):
                if P[i, j] > 0:
                    stack.append((ka, kb, w * P[i, j]))
    return value, Coupling(W, pm_mu, pm_nu)


def _groups(keys: list) -> list[list[int]]:
    idx: dict = {}
    for i, k in enumerate(keys):
        idx.setdefault(k, []).append(i)
    return list(idx.values())


def validate_causal(pi: Coupling, direction: str = "forward", tol: float = CAUSAL_TOL) -> bool:
    """Check the kernel factorisation test of causality for a finite coupling.

    Forward: for every step n, mu-paths sharing the prefix x_{1:n} must send the same
    conditional mass to every nu-prefix cylinder of length n. Backward applies the
    same test to the transposed plan.
    """
    if direction == "backward":
        return validate_causal(pi.transposed(), "forward", tol)
    if direction != "forward":
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    W = pi.weights
    m = W.sum(axis=1)
    N = pi.mu.horizon
    for n in range(1, N):
        col_groups = _groups(pi.nu.prefix_keys(n))
        M = np.stack([W[:, g].sum(axis=1) for g in col_groups], axis=1)
        for g in _groups(pi.mu.prefix_keys(n)):
            if len(g) < 2:
                continue
            Mg, mg = M[g], m[g]
            diff = Mg[:, None, :] * mg[None, :, None] - Mg[None, :, :] * mg[:, None, None]
            if np.abs(diff).max() > tol:
                return False
    return True
