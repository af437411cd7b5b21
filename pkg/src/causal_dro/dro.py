"""Penalised distributionally robust values under causal transport penalties.

The robust value ``sup_nu {E_nu[f] - L(d_c(mu, nu))}`` is computed through its dual
``inf_{lam >= 0} {L*(lam) + E_mu[f - lam c]}``. The inner term is evaluated either by
the nested backward recursion (adapted perturbations) or by the flat per-path
maximisation (classical, non-adapted perturbations), over finite candidate grids.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .linesearch import minimize_halfline
from .measures import Path, ScenarioTree, to_path_measure
from .transport import CostSpec, ground_cost

DEFAULT_LAMBDA_CAP = 1e8


# -- penalties ---------------------------------------------------------------


@dataclass(frozen=True)
class Penalty:
    """Convex nondecreasing penalty L on transport cost with L(0) = 0."""

    def __call__(self, t: float) -> float:
        raise NotImplementedError

    def conjugate(self, lam: float) -> float:
        raise NotImplementedError

    @property
    def domain_hi(self) -> float:
        """Right end of the effective domain of the conjugate."""
        return math.inf

    @property
    def scale(self) -> float:
        return 1.0

    @staticmethod
    def parse(spec: str) -> "Penalty":
        """Parse ``ball:DELTA``, ``linear:KAPPA`` or ``quad:BETA``."""
        kind, _, arg = spec.partition(":")
        try:
            x = float(arg)
        except ValueError:
            raise ValueError(f"bad penalty parameter in {spec!r}") from None
        kinds = {"ball": Ball, "linear": Linear, "quad": Quadratic, "quadratic": Quadratic}
        if kind not in kinds:
            raise ValueError(f"unknown penalty kind {kind!r}; expected ball, linear or quad")
        return kinds[kind](x)


def _check_lambda(lam: float) -> None:
    if lam < 0:
        raise ValueError(f"multiplier must be >= 0, got {lam}")


@dataclass(frozen=True)
class Ball(Penalty):
    """Hard constraint d <= delta (L = +inf outside the ball)."""

    delta: float

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError(f"ball radius must be >= 0, got {self.delta}")

    def __call__(self, t: float) -> float:
        return 0.0 if t <= self.delta else math.inf

    def conjugate(self, lam: float) -> float:
        _check_lambda(lam)
        return lam * self.delta

    @property
    def scale(self) -> float:
        return self.delta


@dataclass(frozen=True)
class Linear(Penalty):
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"linear penalty slope must be > 0, got {self.kappa}")

    def __call__(self, t: float) -> float:
        return self.kappa * t

    def conjugate(self, lam: float) -> float:
        _check_lambda(lam)
        return 0.0 if lam <= self.kappa else math.inf

    @property
    def domain_hi(self) -> float:
        return self.kappa


@dataclass(frozen=True)
class Quadratic(Penalty):
    """L(t) = t^2 / (2 beta), conjugate beta lam^2 / 2."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"quadratic penalty parameter must be > 0, got {self.beta}")

    def __call__(self, t: float) -> float:
        return t * t / (2 * self.beta)

    def conjugate(self, lam: float) -> float:
        _check_lambda(lam)
        return self.beta * lam * lam / 2

    @property
    def scale(self) -> float:
        return self.beta


def conjugate(L: Penalty, lam: float) -> float:
    return L.conjugate(lam)


# -- payoffs -----------------------------------------------------------------


class PathFunctional:
    """Payoff on paths, vectorised over broadcastable per-step value arrays.

    ``fn(ys)`` receives a list of N arrays, ``ys[n]`` of shape (..., d_{n+1}), that
    broadcast against each other, and returns the payoff with the broadcast shape.
    ``stage_terms``, when given, are per-step functions whose sum is the payoff;
    they enable the stage-wise evaluation shortcut for separable costs.
    """

    def __init__(self, fn: Callable, name: str = "custom", params: Mapping | None = None,
                 stage_terms: Sequence[Callable] | None = None):
        self._fn = fn
        self.name = name
        self.params = dict(params or {})
        self.stage_terms = tuple(stage_terms) if stage_terms is not None else None

    @property
    def stage_additive(self) -> bool:
        return self.stage_terms is not None

    def evaluate(self, ys: Sequence[np.ndarray]) -> np.ndarray:
        return np.asarray(self._fn([np.asarray(y, dtype=float) for y in ys]), dtype=float)

    def __call__(self, path: Path) -> float:
        return float(self.evaluate([np.asarray(v, dtype=float) for v in path]))

    def on_paths(self, paths: Sequence[Path]) -> np.ndarray:
        return np.array([self(p) for p in paths], dtype=float)

    def map(self, g: Callable[[np.ndarray], np.ndarray], name: str | None = None) -> "PathFunctional":
        """Pointwise transform g(f); stage additivity is dropped."""
        return PathFunctional(lambda ys: g(self.evaluate(ys)), name or f"g({self.name})", self.params)

    def __add__(self, m: float) -> "PathFunctional":
        terms = None
        if self.stage_terms is not None:
            terms = list(self.stage_terms)
            first = terms[0]
            terms[0] = lambda y, _f=first: _f(y) + m
        return PathFunctional(lambda ys: self.evaluate(ys) + m, f"{self.name}+{m:g}", self.params, terms)

    def __repr__(self) -> str:
        args = ",".join(f"{k}={v:g}" if isinstance(v, (int, float)) else f"{k}" for k, v in self.params.items())
        return f"PathFunctional({self.name}{'(' + args + ')' if args else ''})"

    # builtins ---------------------------------------------------------------

    @classmethod
    def increment_call(cls, K: float) -> "PathFunctional":
        """(x_2 - x_1 + 1 - K)^+ on the first coordinates of the first two steps."""
        return cls(lambda ys: np.maximum(ys[1][..., 0] - ys[0][..., 0] + 1.0 - K, 0.0),
                   "increment_call", {"K": K})

    @classmethod
    def lookback_call(cls, K: float) -> "PathFunctional":
        """(max_n x_n - K)^+ on the first coordinate."""
        def fn(ys):
            out = ys[0][..., 0]
            for y in ys[1:]:
                out = np.maximum(out, y[..., 0])
            return np.maximum(out - K, 0.0)
        return cls(fn, "lookback_call", {"K": K})

    @classmethod
    def calendar_spread(cls, K: float) -> "PathFunctional":
        """(x_2 - K)^+ - (x_1 - K)^+, additive across the two steps."""
        t1 = lambda y: -np.maximum(y[..., 0] - K, 0.0)  # noqa: E731
        t2 = lambda y: np.maximum(y[..., 0] - K, 0.0)  # noqa: E731
        return cls(lambda ys: t1(ys[0]) + t2(ys[1]), "calendar_spread", {"K": K}, [t1, t2])

    @classmethod
    def terminal_quadratic(cls) -> "PathFunctional":
        return cls(lambda ys: np.sum(ys[-1] ** 2, axis=-1), "terminal_quadratic")

    @classmethod
    def sum_quadratic(cls, horizon: int) -> "PathFunctional":
        terms = [lambda y: np.sum(y ** 2, axis=-1)] * horizon
        return cls(lambda ys: sum(np.sum(y ** 2, axis=-1) for y in ys), "sum_quadratic", {}, terms)

    @classmethod
    def stage_sum(cls, terms: Sequence[Callable], name: str = "stage_sum") -> "PathFunctional":
        terms = list(terms)
        return cls(lambda ys: sum(t(y) for t, y in zip(terms, ys)), name, {}, terms)

    @classmethod
    def tabulated(cls, table: Mapping[Path, float]) -> "PathFunctional":
        """Payoff given per path; evaluation outside the table raises ``KeyError``."""
        norm = {tuple(tuple(float(a) for a in np.atleast_1d(v)) for v in p): float(x) for p, x in table.items()}

        def fn(ys):
            shape = np.broadcast_shapes(*[y.shape[:-1] for y in ys])
            out = np.empty(shape)
            full = [np.broadcast_to(y, shape + y.shape[-1:]) for y in ys]
            for idx in np.ndindex(shape):
                key = tuple(tuple(float(a) for a in f[idx]) for f in full)
                try:
                    out[idx] = norm[key]
                except KeyError:
                    raise KeyError(f"tabulated payoff has no value for path {key}") from None
            return out

        return cls(fn, "tabulated", {})

    @classmethod
    def parse(cls, spec: str, horizon: int) -> "PathFunctional":
        """Parse ``NAME[:K]`` for the builtin payoffs."""
        name, _, arg = spec.partition(":")
        if name in ("increment_call", "lookback_call", "calendar_spread"):
            if not arg:
                raise ValueError(f"payoff {name} needs a strike, e.g. {name}:1.0")
            return getattr(cls, name)(float(arg))
        if name == "terminal_quadratic":
            return cls.terminal_quadratic()
        if name == "sum_quadratic":
            return cls.sum_quadratic(horizon)
        raise ValueError(f"unknown payoff {name!r}")


# -- candidate grids -----------------------------------------------------------


def _unique_rows(a: np.ndarray) -> np.ndarray:
    return np.unique(np.asarray(a, dtype=float), axis=0)


@dataclass(frozen=True, eq=False)
class CandidateGrids:
    """Finite candidate sets Y_n for the perturbed values at each step."""

    steps: tuple[np.ndarray, ...]

    def __post_init__(self):
        steps = tuple(np.atleast_2d(np.asarray(s, dtype=float)) for s in self.steps)
        if not steps or any(s.shape[0] == 0 for s in steps):
            raise ValueError("every step needs at least one candidate value")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def from_values(cls, values: Sequence[Sequence]) -> "CandidateGrids":
        """Per-step lists of values (scalars or vectors)."""
        steps = []
        for vals in values:
            arr = np.asarray(vals, dtype=float)
            steps.append(arr.reshape(-1, 1) if arr.ndim == 1 else arr)
        return cls(tuple(steps))

    @classmethod
    def support(cls, mu: ScenarioTree) -> "CandidateGrids":
        return cls(tuple(_unique_rows([mu.node(k).value for k in mu.nodes_at(n)]) for n in range(1, mu.horizon + 1)))

    @classmethod
    def around(cls, mu: ScenarioTree, radius: float, points: int = 33, cover_support: bool = True) -> "CandidateGrids":
        """Uniform grid spanning the support of each step widened by ``radius``, united with the support."""
        steps = []
        for n in range(1, mu.horizon + 1):
            supp = _unique_rows([mu.node(k).value for k in mu.nodes_at(n)])
            axes = [np.linspace(supp[:, j].min() - radius, supp[:, j].max() + radius, points)
                    for j in range(supp.shape[1])]
            grid = np.array(list(itertools.product(*axes)), dtype=float)
            if cover_support:
                grid = np.vstack([grid, supp])
            steps.append(_unique_rows(grid))
        return cls(tuple(steps))

    @classmethod
    def default_for(cls, mu: ScenarioTree, penalty: Penalty, points: int = 33) -> "CandidateGrids":
        return cls.around(mu, 3.0 * math.sqrt(penalty.scale), points)

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.steps)

    def broadcast(self) -> list[np.ndarray]:
        """Per-step arrays shaped to broadcast over the product grid."""
        N = self.horizon
        out = []
        for n, s in enumerate(self.steps):
            shape = [1] * N + [s.shape[1]]
            shape[n] = s.shape[0]
            out.append(s.reshape(shape))
        return out

    def paths(self) -> list[Path]:
        """All grid paths in row-major (C) order of the product grid."""
        per_step = [[tuple(row) for row in s] for s in self.steps]
        return [tuple(p) for p in itertools.product(*per_step)]

    def covers(self, mu: ScenarioTree, tol: float = 0.0) -> bool:
        for n, s in enumerate(self.steps, start=1):
            for k in mu.nodes_at(n):
                v = np.asarray(mu.node(k).value)
                if not np.any(np.all(np.abs(s - v) <= tol, axis=1)):
                    return False
        return True


def _check_dims(mu: ScenarioTree, grids: CandidateGrids) -> None:
    if grids.horizon != mu.horizon or any(s.shape[1] != d for s, d in zip(grids.steps, mu.dims)):
        raise ValueError(
            f"grid dimensions {[s.shape[1] for s in grids.steps]} do not match tree dims {list(mu.dims)}"
        )


# -- inner evaluators ------------------------------------------------------------


def payoff_grid(f: PathFunctional, grids: CandidateGrids) -> np.ndarray:
    """Payoff on every path of the product grid, shape ``grids.shape``."""
    out = f.evaluate(grids.broadcast())
    return np.broadcast_to(out, grids.shape)


def _step_cost(c: CostSpec, n: int, x: Sequence[float], grid: np.ndarray) -> np.ndarray:
    return ground_cost(c.steps[n - 1], np.asarray(x, dtype=float)[None, :], grid)


def _path_cost_grid(c: CostSpec, x: Path, grids: CandidateGrids) -> np.ndarray:
    """c(x, y) for every grid path y, shape ``grids.shape``."""
    if c.separable:
        N = grids.horizon
        out = np.zeros(grids.shape)
        for n in range(1, N + 1):
            shape = [1] * N
            shape[n - 1] = grids.shape[n - 1]
            out = out + _step_cost(c, n, x[n - 1], grids.steps[n - 1]).reshape(shape)
        return out
    return c.matrix([x], grids.paths())[0].reshape(grids.shape)


def nested_from_grid(mu: ScenarioTree, F: np.ndarray, c: CostSpec, lam: float, grids: CandidateGrids) -> float:
    """Nested sup/expectation recursion for a payoff already tabulated on the grid."""
    N = mu.horizon
    if c.separable:
        # step-n cost enters where x_n and y_n are both known; earlier terms are
        # constant in the later maximisations
        memo: dict[tuple, np.ndarray] = {}
        vals: dict[int, np.ndarray] = {}
        for nid in mu.postorder():
            node = mu.node(nid)
            n = node.step
            if n == N:
                key = node.value
                if key not in memo:
                    memo[key] = (F - lam * _step_cost(c, N, node.value, grids.steps[N - 1])).max(axis=-1)
                vals[nid] = memo[key]
                continue
            acc = None
            for k in mu.children(nid):
                term = mu.node(k).prob * vals.pop(k)
                acc = term if acc is None else acc + term
            vals[nid] = (acc - lam * _step_cost(c, n, node.value, grids.steps[n - 1])).max(axis=-1)
    else:
        vals = {}
        for nid in mu.postorder():
            node = mu.node(nid)
            if node.step == N:
                vals[nid] = (F - lam * _path_cost_grid(c, mu.history(nid), grids)).max(axis=-1)
                continue
            acc = None
            for k in mu.children(nid):
                term = mu.node(k).prob * vals.pop(k)
                acc = term if acc is None else acc + term
            vals[nid] = acc.max(axis=-1)
    total = 0.0
    for r in mu.roots:
        total += mu.node(r).prob * float(vals[r])
    return total


def classical_from_grid(mu: ScenarioTree, F: np.ndarray, c: CostSpec, lam: float, grids: CandidateGrids) -> float:
    """E_mu[max_y {F(y) - lam c(X, y)}] with y ranging over the whole product grid."""
    pm = to_path_measure(mu)
    total = 0.0
    for p, w in zip(pm.paths, pm.weights):
        total += w * float((F - lam * _path_cost_grid(c, p, grids)).max())
    return float(total)


def _stagewise(mu: ScenarioTree, f: PathFunctional, c: CostSpec, lam: float, grids: CandidateGrids) -> float:
    total = 0.0
    for n in range(1, mu.horizon + 1):
        g = np.asarray(f.stage_terms[n - 1](grids.steps[n - 1]), dtype=float)
        for k in mu.nodes_at(n):
            x = mu.node(k).value
            total += mu.joint_prob(k) * float((g - lam * _step_cost(c, n, x, grids.steps[n - 1])).max())
    return total


def nested_dual_value(mu: ScenarioTree, f: PathFunctional, c: CostSpec, lam: float, grids: CandidateGrids,
                      use_structure: bool = True) -> float:
    """Adapted inner value sup over causal couplings of E[f(Y) - lam c(X, Y)], Y on the grid.

    Exact for the grid-restricted problem; a lower bound of the continuum supremum.
    ``use_structure`` enables the stage-wise shortcut for stage-additive payoffs with
    separable costs.
    """
    _check_lambda(lam)
    _check_dims(mu, grids)
    if use_structure and f.stage_additive and c.separable:
        return _stagewise(mu, f, c, lam, grids)
    return nested_from_grid(mu, payoff_grid(f, grids), c, lam, grids)


def classical_dual_value(mu: ScenarioTree, f: PathFunctional, c: CostSpec, lam: float, grids: CandidateGrids,
                         use_structure: bool = True) -> float:
    """Non-adapted inner value: per-path maximisation over whole grid paths."""
    _check_lambda(lam)
    _check_dims(mu, grids)
    if use_structure and f.stage_additive and c.separable:
        return _stagewise(mu, f, c, lam, grids)
    return classical_from_grid(mu, payoff_grid(f, grids), c, lam, grids)


# -- outer minimisation ------------------------------------------------------------


@dataclass
class SolveOptions:
    tol_lambda: float = 1e-8
    lambda_cap: float = DEFAULT_LAMBDA_CAP
    use_structure: bool = True


@dataclass
class DualSolveReport:
    value: float
    lambda_star: float
    gamma_star: float | None = None
    probes: list[tuple[float, float]] = field(default_factory=list)
    iterations: int = 0
    bracket: tuple[float, float] = (0.0, 0.0)
    mode: str = "causal"
    at_cap: bool = False
    oracle_value: float | None = None
    oracle_gap: float | None = None
    notes: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def attach_oracle(self, oracle_value: float) -> "DualSolveReport":
        self.oracle_value = float(oracle_value)
        self.oracle_gap = float(self.value - oracle_value)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probes"] = [[x, v] for x, v in self.probes]
        d["bracket"] = list(self.bracket)
        return d

    def to_json(self) -> str:
        return json.dumps(_finite_json(self.to_dict()), sort_keys=True)


def _fmt(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.12g}")
    return x


def _finite_json(obj):
    if isinstance(obj, dict):
        return {k: _finite_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_json(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return _fmt(float(obj))
    return _fmt(obj)


def minimize_dual(inner: Callable[[float], float], L: Penalty, opts: SolveOptions | None = None,
                  mode: str = "causal") -> DualSolveReport:
    """inf over lam >= 0 of L*(lam) + inner(lam) for a convex nonincreasing ``inner``."""
    opts = opts or SolveOptions()

    def h(lam: float) -> float:
        conj = L.conjugate(lam)
        if math.isinf(conj):
            return math.inf
        return conj + inner(lam)

    if isinstance(L, Ball) and L.delta == 0:
        # zero conjugate: h is nonincreasing, so its infimum is the value at the cap
        cap = min(L.domain_hi, opts.lambda_cap)
        v = h(cap)
        rep = DualSolveReport(v, cap, probes=[(cap, v)], bracket=(cap, cap), mode=mode, at_cap=True)
        rep.notes.append("zero radius: value taken at the multiplier cap")
        return rep
    res = minimize_halfline(h, 0.0, L.domain_hi, cap=opts.lambda_cap, tol=opts.tol_lambda)
    rep = DualSolveReport(res.fx, res.x, probes=res.probes, iterations=res.iterations,
                          bracket=res.bracket, mode=mode, at_cap=res.at_cap)
    if res.at_cap:
        rep.notes.append("minimum at the multiplier cap")
    return rep


def solve_penalized(mu: ScenarioTree, f: PathFunctional, c: CostSpec, L: Penalty, grids: CandidateGrids,
                    mode: str = "causal", opts: SolveOptions | None = None) -> DualSolveReport:
    """Penalised robust value via inf_lam {L*(lam) + D(lam)} with D nested (causal) or classical."""
    opts = opts or SolveOptions()
    _check_dims(mu, grids)
    if mode not in ("causal", "classical"):
        raise ValueError(f"mode must be 'causal' or 'classical', got {mode!r}")
    if opts.use_structure and f.stage_additive and c.separable:
        def inner(lam):
            return _stagewise(mu, f, c, lam, grids)
    else:
        F = payoff_grid(f, grids)
        evaluator = nested_from_grid if mode == "causal" else classical_from_grid

        def inner(lam):
            return evaluator(mu, F, c, lam, grids)

    rep = minimize_dual(inner, L, opts, mode)
    if not grids.covers(mu):
        rep.notes.append("candidate grid does not cover the reference support")
    rep.notes.append("inner supremum restricted to the candidate grid (lower bound of the continuum value)")
    return rep


def radius_curve(mu: ScenarioTree, f: PathFunctional, c: CostSpec, deltas: Sequence[float],
                 grids: CandidateGrids, mode: str = "causal",
                 opts: SolveOptions | None = None) -> list[tuple[float, float]]:
    return [(float(d), solve_penalized(mu, f, c, Ball(float(d)), grids, mode, opts).value) for d in deltas]


def curve_csv(curve: Sequence[tuple[float, float]]) -> str:
    lines = ["delta,value"]
    lines += [f"{d:.12g},{v:.12g}" for d, v in curve]
    return "\n".join(lines) + "\n"
