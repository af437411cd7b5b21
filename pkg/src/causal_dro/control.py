"""Robust stochastic control on finite grids and the scalar linear-quadratic case.

Only the observation costs f_n(X_n) are perturbed; the control costs l_n are paid
on the reference dynamics. For a separable transport cost the inner adversary
decouples into robust stage costs f̂_n(x) = max_y {f_n(y) - lam c_n(x, y)} and the
problem becomes an ordinary Bellman recursion for each multiplier.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dro import DualSolveReport, Penalty, SolveOptions, minimize_dual, Ball
from .linesearch import INV_PHI, minimize_halfline
from .measures import Node, ScenarioTree
from .stopping import expect_seq
from .transport import ground_cost


class UnboundedStageCostError(ArithmeticError):
    """The robust stage cost sup_y {f(y) - lam c(x, y)} diverges at this multiplier."""


def _nearest(grid: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float]:
    idx = np.abs(np.asarray(v, dtype=float)[..., None] - grid).argmin(axis=-1)
    return idx, float(np.abs(grid[idx] - v).max()) if np.size(v) else 0.0


def _quadratic(coef: float) -> Callable:
    return lambda n, y: coef * np.asarray(y, dtype=float) ** 2


class ControlProblem:
    """Finite-horizon Markov control problem on finite scalar state grids.

    Parameters are per step: ``states`` for n = 1..N, ``actions`` and ``noise``
    (values, probs) for n = 1..N-1. The next state g_n(x, u, w) comes from
    ``dynamics(n, x, u, w)`` or from precomputed ``next_values[n-1]`` of shape
    (states, actions, noise atoms) and is snapped to the nearest grid point.
    ``stage_cost(n, x, u)`` is the control cost and ``obs_cost(n, y)`` the
    observation cost (vectorised in y). ``obs_growth`` is a constant q with
    f_n(y) <= q y^2 + const, used to flag divergent robust stage costs.
    ``continuous_obs`` says whether f_n may be evaluated off the grids (needed for
    the golden refinement of robust stage costs); tabulated costs set it to False.
    """

    def __init__(self, states: Sequence, actions: Sequence, noise: Sequence, initial,
                 obs_cost: Callable[[int, np.ndarray], np.ndarray],
                 stage_cost: Callable[[int, float, float], float] | None = None,
                 dynamics: Callable[[int, float, float, float], float] | None = None,
                 next_values: Sequence | None = None,
                 stage_table: Sequence | None = None,
                 obs_growth: float | None = None, continuous_obs: bool = True):
        self.continuous_obs = continuous_obs
        self.states = tuple(np.asarray(s, dtype=float).ravel() for s in states)
        self.horizon = N = len(self.states)
        if N < 1:
            raise ValueError("horizon must be at least 1")
        self.actions = tuple(np.asarray(a, dtype=float).ravel() for a in actions)
        if len(self.actions) != N - 1:
            raise ValueError(f"need {N - 1} action sets, got {len(self.actions)}")
        for n, a in enumerate(self.actions, 1):
            if a.size == 0:
                raise ValueError(f"empty action set at step {n}")
        for n, s in enumerate(self.states, 1):
            if s.size == 0:
                raise ValueError(f"empty state grid at step {n}")
        self.noise = tuple((np.asarray(v, dtype=float).ravel(), np.asarray(p, dtype=float).ravel())
                           for v, p in noise)
        if len(self.noise) != N - 1:
            raise ValueError(f"need {N - 1} noise laws, got {len(self.noise)}")
        for n, (v, p) in enumerate(self.noise, 1):
            if v.shape != p.shape or v.size == 0 or np.any(p <= 0) or abs(p.sum() - 1) > 1e-12:
                raise ValueError(f"noise law at step {n} must have positive probabilities summing to 1")
        iv, ip = (np.asarray(a, dtype=float).ravel() for a in initial)
        if iv.shape != ip.shape or iv.size == 0 or np.any(ip <= 0) or abs(ip.sum() - 1) > 1e-12:
            raise ValueError("initial law must have positive probabilities summing to 1")
        self.init_index, snap0 = _nearest(self.states[0], iv)
        if snap0 > 1e-12:
            raise ValueError(f"initial states are off the step-1 grid (distance {snap0:g})")
        self.init_probs = ip
        self.obs_cost = obs_cost
        self.obs_growth = obs_growth

        if (dynamics is None) == (next_values is None):
            raise ValueError("give exactly one of dynamics or next_values")
        self.next_index, self.max_snap = [], 0.0
        for n in range(1, N):
            S, A, W = self.states[n - 1], self.actions[n - 1], self.noise[n - 1][0]
            if next_values is not None:
                raw = np.asarray(next_values[n - 1], dtype=float)
                if raw.shape != (S.size, A.size, W.size):
                    raise ValueError(f"next_values at step {n} must have shape {(S.size, A.size, W.size)}")
            else:
                raw = np.array([[[dynamics(n, x, u, w) for w in W] for u in A] for x in S], dtype=float)
            idx, snap = _nearest(self.states[n], raw)
            self.next_index.append(idx)
            self.max_snap = max(self.max_snap, snap)

        self.stage = []
        for n in range(1, N):
            S, A = self.states[n - 1], self.actions[n - 1]
            if stage_table is not None:
                t = np.asarray(stage_table[n - 1], dtype=float)
                if t.shape != (S.size, A.size):
                    raise ValueError(f"stage cost table at step {n} must have shape {(S.size, A.size)}")
            elif stage_cost is not None:
                t = np.array([[float(stage_cost(n, x, u)) for u in A] for x in S])
            else:
                t = np.zeros((S.size, A.size))
            if not np.all(np.isfinite(t)):
                raise ValueError(f"stage costs at step {n} are not finite")
            self.stage.append(t)

    @property
    def n_policies(self) -> int:
        out = 1
        for n in range(1, self.horizon):
            out *= self.actions[n - 1].size ** self.states[n - 1].size
        return out

    @classmethod
    def affine(cls, A: float, B: float, states: Sequence, actions: Sequence, noise: Sequence, initial,
               state_coef: float = 1.0, action_coef: float = 1.0) -> "ControlProblem":
        """x' = A x + B u + w with costs action_coef u^2 and observation cost state_coef y^2."""
        return cls(states, actions, noise, initial, _quadratic(state_coef),
                   stage_cost=lambda n, x, u: action_coef * u * u,
                   dynamics=lambda n, x, u, w: A * x + B * u + w, obs_growth=state_coef)

    @classmethod
    def from_obj(cls, doc: dict) -> "ControlProblem":
        """Build from a JSON document (see the README for the schema)."""
        try:
            states = doc["states"]
            actions = doc["actions"]
            noise = [(d["values"], d["probs"]) for d in doc["noise"]]
            initial = (doc["initial"]["values"], doc["initial"]["probs"])
            dyn = doc["dynamics"]
            kw: dict = {}
            if dyn["kind"] == "affine":
                A, B = float(dyn["A"]), float(dyn["B"])
                kw["dynamics"] = lambda n, x, u, w: A * x + B * u + w
            elif dyn["kind"] == "table":
                kw["next_values"] = dyn["next"]
            else:
                raise ValueError(f"unknown dynamics kind {dyn['kind']!r}")
            sc = doc.get("stage_cost", {"kind": "quadratic", "state": 0.0, "action": 0.0})
            if sc["kind"] == "quadratic":
                qs, qa = float(sc.get("state", 0.0)), float(sc.get("action", 0.0))
                kw["stage_cost"] = lambda n, x, u: qs * x * x + qa * u * u
            elif sc["kind"] == "table":
                kw["stage_table"] = sc["values"]
            else:
                raise ValueError(f"unknown stage cost kind {sc['kind']!r}")
            oc = doc["obs_cost"]
            if oc["kind"] == "quadratic":
                obs, growth = _quadratic(float(oc["coef"])), float(oc["coef"])
            elif oc["kind"] == "table":
                obs, growth = _table_obs(states, oc["values"]), None
            else:
                raise ValueError(f"unknown observation cost kind {oc['kind']!r}")
        except (KeyError, TypeError) as e:
            raise ValueError(f"malformed control problem document: {e}") from None
        return cls(states, actions, noise, initial, obs, obs_growth=growth, continuous_obs=growth is not None, **kw)


def _table_obs(states, values) -> Callable:
    maps = [dict(zip(map(float, s), map(float, v))) for s, v in zip(states, values)]

    def obs(n, y):
        y = np.asarray(y, dtype=float)
        try:
            return np.vectorize(lambda t: maps[n - 1][float(t)], otypes=[float])(y)
        except KeyError:
            raise KeyError(f"tabulated observation cost at step {n} evaluated off the state grid") from None

    return obs


@dataclass
class Policy:
    """Markov feedback: per step, action index for every grid state."""

    states: tuple
    actions: tuple
    choice: list[np.ndarray]

    def action(self, n: int, x: float) -> float:
        i = int(np.abs(self.states[n - 1] - x).argmin())
        return float(self.actions[n - 1][self.choice[n - 1][i]])

    def to_obj(self) -> dict:
        return {"steps": [{f"{x:.12g}": float(f"{a[k]:.12g}") for x, k in zip(s, ch)}
                          for s, a, ch in zip(self.states, self.actions, self.choice)]}

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True)


# -- robust stage costs ---------------------------------------------------------------


def robust_stage_cost(f: Callable[[np.ndarray], np.ndarray], c, lam: float, Y: np.ndarray, xs: np.ndarray,
                      refine: bool = True, growth: float | None = None, iters: int = 100) -> np.ndarray:
    """f̂(x) = max over y in ``Y`` of f(y) - lam c(x, y), for each x in ``xs``.

    With ``refine`` the grid maximiser is polished by golden-section search on the
    neighbouring grid cells (f evaluated off the grid). Entries are ``inf`` when the
    supremum diverges: ``lam <= growth`` for quadratic growth against a squared cost,
    or a maximiser on a grid edge lying outside the range of ``xs``.
    """
    Y = np.asarray(Y, dtype=float).ravel()
    xs = np.asarray(xs, dtype=float).ravel()
    if Y.size == 0:
        raise ValueError("empty candidate grid")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if growth is not None and lam <= growth:
        return np.full(xs.shape, math.inf)

    def phi(x, y):
        return np.asarray(f(y), dtype=float) - lam * ground_cost(c, x[..., None], y[..., None])

    Phi = phi(xs[:, None], Y[None, :])
    k = Phi.argmax(axis=1)
    best = Phi[np.arange(xs.size), k]
    if refine and Y.size > 1:
        a = Y[np.maximum(k - 1, 0)]
        b = Y[np.minimum(k + 1, Y.size - 1)]
        for _ in range(iters):
            cpt = b - INV_PHI * (b - a)
            dpt = a + INV_PHI * (b - a)
            left = phi(xs, cpt) >= phi(xs, dpt)
            b = np.where(left, dpt, b)
            a = np.where(left, a, cpt)
        best = np.maximum(best, phi(xs, 0.5 * (a + b)))
    edge = ((k == 0) & (Y[0] < xs.min())) | ((k == Y.size - 1) & (Y[-1] > xs.max()))
    return np.where(edge, math.inf, best)


def stage_cost_tables(problem: ControlProblem, lam: float, grids: Sequence | None = None, c="sqeuclidean",
                      refine: bool = True) -> list[np.ndarray]:
    """f̂_n on each state grid; ``lam = inf`` gives the unperturbed f_n."""
    out = []
    for n in range(1, problem.horizon + 1):
        S = problem.states[n - 1]
        if math.isinf(lam):
            out.append(np.asarray(problem.obs_cost(n, S), dtype=float))
            continue
        Y = problem.states[n - 1] if grids is None else grids[n - 1]
        out.append(robust_stage_cost(lambda y, n=n: problem.obs_cost(n, y), c, lam, Y, S,
                                     refine=refine and problem.continuous_obs, growth=problem.obs_growth))
    return out


# -- dynamic programming ------------------------------------------------------------------


def backward(problem: ControlProblem, fhat: Sequence[np.ndarray]) -> tuple[float, Policy, list[np.ndarray]]:
    """J_N = f̂_N, J_n = min_u {l_n + f̂_n + E[J_{n+1}]}; ties go to the smallest action index."""
    N = problem.horizon
    J = [None] * N
    J[N - 1] = np.asarray(fhat[N - 1], dtype=float)
    choice: list = [None] * (N - 1)
    for n in range(N - 1, 0, -1):
        idx = problem.next_index[n - 1]
        probs = problem.noise[n - 1][1]
        E = expect_seq(probs, [J[n][idx[:, :, w]] for w in range(probs.size)])
        Q = (problem.stage[n - 1] + np.asarray(fhat[n - 1], dtype=float)[:, None]) + E
        a = Q.argmin(axis=1)
        choice[n - 1] = a
        J[n - 1] = Q[np.arange(Q.shape[0]), a]
    value = float(expect_seq(problem.init_probs, list(J[0][problem.init_index])))
    return value, Policy(problem.states[:-1], problem.actions, choice), J


def bellman_solve(problem: ControlProblem, lam: float, grids: Sequence | None = None, c="sqeuclidean",
                  refine: bool = True) -> tuple[float, Policy]:
    """J(lam) and a greedy optimal Markov policy for the multiplier ``lam``."""
    fhat = stage_cost_tables(problem, lam, grids, c, refine)
    for n, t in enumerate(fhat, 1):
        if not np.all(np.isfinite(t)):
            raise UnboundedStageCostError(f"robust stage cost at step {n} diverges at lambda={lam:g}")
    value, policy, _ = backward(problem, fhat)
    return value, policy


def evaluate_policy(problem: ControlProblem, policy: Policy, fhat: Sequence[np.ndarray]) -> float:
    """Value of a fixed Markov policy with the same operation order as :func:`backward`."""
    N = problem.horizon
    V = np.asarray(fhat[N - 1], dtype=float)
    for n in range(N - 1, 0, -1):
        idx = problem.next_index[n - 1]
        probs = problem.noise[n - 1][1]
        a = policy.choice[n - 1]
        rows = np.arange(a.size)
        E = expect_seq(probs, [V[idx[rows, a, w]] for w in range(probs.size)])
        V = (problem.stage[n - 1][rows, a] + np.asarray(fhat[n - 1], dtype=float)) + E
    return float(expect_seq(problem.init_probs, list(V[problem.init_index])))


def policy_control_cost(problem: ControlProblem, policy: Policy) -> float:
    """E[sum_n l_n(X_n, u_n)] under the reference dynamics."""
    zero = [np.zeros(s.size) for s in problem.states]
    return evaluate_policy(problem, policy, zero)


def controlled_law(problem: ControlProblem, policy: Policy) -> ScenarioTree:
    """Scenario tree of the state process under ``policy`` (equal next states merged)."""
    nodes: list[Node] = []

    def grow(parent, n, i, prob):
        nid = len(nodes)
        nodes.append(Node(nid, parent, n, (float(problem.states[n - 1][i]),), prob))
        if n == problem.horizon:
            return
        a = policy.choice[n - 1][i]
        merged: dict[int, float] = {}
        for w, p in enumerate(problem.noise[n - 1][1]):
            j = int(problem.next_index[n - 1][i, a, w])
            merged[j] = merged.get(j, 0.0) + float(p)
        for j in sorted(merged):
            grow(nid, n + 1, j, merged[j])

    roots: dict[int, float] = {}
    for i, p in zip(problem.init_index, problem.init_probs):
        roots[int(i)] = roots.get(int(i), 0.0) + float(p)
    for i in sorted(roots):
        grow(None, 1, i, roots[i])
    return ScenarioTree(problem.horizon, (1,) * problem.horizon, tuple(nodes))


def solve_robust_control(problem: ControlProblem, L: Penalty, grids: Sequence | None = None, c="sqeuclidean",
                         opts: SolveOptions | None = None, refine: bool = True) -> tuple[DualSolveReport, Policy]:
    """inf_lam {L*(lam) + J(lam)} and the greedy policy at the minimising multiplier."""

    def inner(lam):
        try:
            return bellman_solve(problem, lam, grids, c, refine)[0]
        except UnboundedStageCostError:
            return math.inf

    rep = minimize_dual(inner, L, opts, mode="control")
    _, policy = bellman_solve(problem, rep.lambda_star, grids, c, refine)
    rep.extra = {"max_snap_distance": problem.max_snap, "policy": policy.to_obj()}
    if problem.max_snap > 0:
        rep.notes.append(f"dynamics snapped to the state grid (max distance {problem.max_snap:.6g})")
    return rep, policy


# -- linear-quadratic ------------------------------------------------------------------------


@dataclass(frozen=True)
class LQSpec:
    """x_{n+1} = A x_n + B u_n + w_n, cost sum_n u_n^2 (n < N) plus perturbed sum_n x_n^2."""

    A: float
    B: float
    N: int
    x1: float
    v_w: float
    delta: float

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if self.v_w < 0:
            raise ValueError("noise variance must be nonnegative")
        if self.delta < 0:
            raise ValueError("radius must be nonnegative")


@dataclass
class RiccatiCoeffs:
    lam: float
    kappa: float
    p: tuple[float, ...]
    q: tuple[float, ...]

    def value(self, x1: float) -> float:
        return self.p[0] * x1 * x1 + self.q[0]

    def gain(self, n: int, B: float, A: float) -> float:
        """Optimal feedback u_n = -gain * x_n (n is 1-based, n < N)."""
        p = self.p[n]
        return p * A * B / (1.0 + B * B * p)


def riccati(spec: LQSpec, lam: float) -> RiccatiCoeffs:
    """Backward recursion for V_n(x) = p_n x^2 + q_n with state weight kappa = lam/(lam - 1)."""
    kappa = 1.0 if math.isinf(lam) else lam / (lam - 1.0)
    A2, B2 = spec.A ** 2, spec.B ** 2
    p, q = [0.0] * spec.N, [0.0] * spec.N
    p[-1] = kappa
    for n in range(spec.N - 2, -1, -1):
        pn = p[n + 1]
        p[n] = kappa + A2 * pn - A2 * B2 * pn * pn / (1.0 + B2 * pn)
        q[n] = q[n + 1] + pn * spec.v_w
    return RiccatiCoeffs(lam, kappa, tuple(p), tuple(q))


@dataclass
class LQResult:
    value: float
    lambda_star: float
    coeffs: list[RiccatiCoeffs]
    at_cap: bool = False
    notes: list[str] = field(default_factory=list)

    def to_obj(self) -> dict:
        best = min(self.coeffs, key=lambda r: abs(r.lam - self.lambda_star) if math.isfinite(r.lam) else 0.0)
        return {"value": float(f"{self.value:.12g}"),
                "lambda_star": "inf" if math.isinf(self.lambda_star) else float(f"{self.lambda_star:.12g}"),
                "kappa": float(f"{best.kappa:.12g}"),
                "p": [float(f"{v:.12g}") for v in best.p], "q": [float(f"{v:.12g}") for v in best.q],
                "at_cap": self.at_cap, "notes": self.notes}


def lq_solve(spec: LQSpec, cap: float = 1e6, tol: float = 1e-10) -> LQResult:
    """inf over lam in (1, cap] of delta lam + V(lam); delta = 0 returns the classical value."""
    if spec.delta == 0:
        r = riccati(spec, math.inf)
        return LQResult(r.value(spec.x1), math.inf, [r])
    coeffs: list[RiccatiCoeffs] = []

    def h(s):
        if s <= 0:
            return math.inf
        r = riccati(spec, 1.0 + s)
        coeffs.append(r)
        return spec.delta * (1.0 + s) + r.value(spec.x1)

    res = minimize_halfline(h, 0.0, cap - 1.0, cap=cap - 1.0, tol=tol)
    out = LQResult(res.fx, 1.0 + res.x, coeffs, at_cap=res.at_cap)
    if res.at_cap:
        out.notes.append(f"minimum at the multiplier cap {cap:g}")
    return out


def lq_moments(spec: LQSpec, kappa: float) -> float:
    """kappa * sum_n E[X_n^2] for the uncontrolled chain X_{n+1} = A X_n + w_n."""
    m, total = spec.x1 ** 2, 0.0
    for _ in range(spec.N):
        total += m
        m = spec.A ** 2 * m + spec.v_w
    return kappa * total


def lq_grid_check(spec: LQSpec, h: float = 0.25, xmax: float = 6.0, umax: float = 4.0, ymax: float = 60.0,
                  opts: SolveOptions | None = None) -> dict:
    """Compare :func:`lq_solve` with the grid Bellman solver on a lattice of spacing ``h``.

    Noise is the two-point law +-sqrt(v_w) (same variance, so the same LQ value), which
    keeps the affine dynamics on the lattice when sqrt(v_w)/h and x1/h are integers.
    Rounding the exact LQ feedback to the action lattice costs at most
    sum_{n<N} (1 + B^2 p_{n+1}) h^2/4, which is reported as the discretisation error.
    """
    sw = math.sqrt(spec.v_w)
    lattice = lambda m: np.round(np.arange(-m, m + h / 2, h) / h) * h  # noqa: E731
    states = [lattice(xmax)] * spec.N
    prob = ControlProblem.affine(spec.A, spec.B, states, [lattice(umax)] * (spec.N - 1),
                                 [([-sw, sw], [0.5, 0.5])] * (spec.N - 1), ([spec.x1], [1.0]))
    Y = [np.linspace(-ymax, ymax, 481)] * spec.N
    rep, policy = solve_robust_control(prob, Ball(spec.delta), Y, opts=opts or SolveOptions(tol_lambda=1e-10))
    lq = lq_solve(spec)
    r = riccati(spec, lq.lambda_star)
    bound = sum((1.0 + spec.B ** 2 * r.p[n]) * h * h / 4.0 for n in range(1, spec.N))
    return {"lq_value": lq.value, "lq_lambda": lq.lambda_star, "grid_value": rep.value,
            "grid_lambda": rep.lambda_star, "difference": rep.value - lq.value, "error_bound": bound,
            "max_snap_distance": prob.max_snap}
