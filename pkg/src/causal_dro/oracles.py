"""Brute-force ground truth for the fast solvers.

Linear programs over path-pair couplings with the causality constraints written
out row by row, primal robust problems for ball penalties, and exhaustive
enumeration of control policies and stopping rules. Everything here is meant for
desk-size instances and refuses to run past its caps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .control import ControlProblem, Policy, controlled_law, policy_control_cost, stage_cost_tables
from .dro import CandidateGrids, PathFunctional
from .measures import Path, PathMeasure, ScenarioTree, to_path_measure
from .simplex import CapExceededError
from .stopping import (BicausalCostTable, CandidateFamily, StagePayoffs, bicausal_cost_table,
                       candidate_values, expect_seq)
from .transport import CostSpec, Coupling, _groups, ot_bicausal

LP_CAP = 10_000
POLICY_CAP = 1_000_000
STOPPING_CAP = 1 << 20
MODES = ("classical", "causal", "bicausal")


class OracleError(RuntimeError):
    """The LP solver failed on a problem that is feasible by construction."""


@dataclass(frozen=True, eq=False)
class CouplingConstraintSet:
    """Couplings with first marginal ``mu`` and either a fixed second marginal ``nu`` or
    free mass on a finite list of ``candidates`` paths."""

    mode: str
    mu: PathMeasure
    nu: PathMeasure | None = None
    candidates: tuple | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.nu is None) == (self.candidates is None):
            raise ValueError("give exactly one of a fixed second marginal or a candidate path set")
        if self.candidates is not None:
            cands = tuple(tuple(tuple(float(a) for a in np.atleast_1d(v)) for v in p) for p in self.candidates)
            if not cands:
                raise ValueError("candidate path set is empty")
            if len(set(cands)) != len(cands):
                raise ValueError("candidate paths must be distinct")
            object.__setattr__(self, "candidates", cands)
        if self.mode == "bicausal" and self.nu is None:
            raise ValueError("bicausal constraints are bilinear when the second marginal is free; fix nu")

    @classmethod
    def free(cls, mode: str, mu: PathMeasure, candidates) -> "CouplingConstraintSet":
        if isinstance(candidates, CandidateGrids):
            candidates = candidates.paths()
        return cls(mode, mu, None, tuple(candidates))

    @property
    def targets(self) -> list[Path]:
        return list(self.nu.paths) if self.nu is not None else list(self.candidates)

    def prefix_keys(self, n: int) -> list:
        return [p[:n] for p in self.targets]


def _causal_rows(row_w: np.ndarray, row_keys, col_keys, index, horizon: int):
    """Rows of mu(p0) pi(p, B) - mu(p) pi(p0, B) = 0 per prefix group and target cylinder."""
    rows, cols, vals = [], [], []
    r = 0
    for n in range(1, horizon):
        cyl = _groups(col_keys(n))
        for g in _groups(row_keys(n)):
            p0 = g[0]
            for p in g[1:]:
                for B in cyl:
                    for j in B:
                        rows += [r, r]
                        cols += [index(p, j), index(p0, j)]
                        vals += [row_w[p0], -row_w[p]]
                    r += 1
    return rows, cols, vals, r


def _constraints(cons: CouplingConstraintSet):
    mu, targets = cons.mu, cons.targets
    m, k = len(mu), len(targets)
    if m * k > LP_CAP:
        raise CapExceededError(f"{m}x{k} = {m * k} coupling variables exceed the cap {LP_CAP}")
    idx = lambda i, j: i * k + j  # noqa: E731
    blocks, rhs = [], []
    # first marginal
    blocks.append(sparse.coo_matrix((np.ones(m * k), (np.repeat(np.arange(m), k), np.arange(m * k))),
                                    shape=(m, m * k)))
    rhs.append(mu.weights)
    if cons.nu is not None:
        blocks.append(sparse.coo_matrix((np.ones(m * k), (np.tile(np.arange(k), m), np.arange(m * k))),
                                        shape=(k, m * k)))
        rhs.append(cons.nu.weights)
    N = mu.horizon
    if cons.mode in ("causal", "bicausal"):
        r, c_, v, nrows = _causal_rows(mu.weights, mu.prefix_keys, cons.prefix_keys, idx, N)
        if nrows:
            blocks.append(sparse.coo_matrix((v, (r, c_)), shape=(nrows, m * k)))
            rhs.append(np.zeros(nrows))
    if cons.mode == "bicausal":
        r, c_, v, nrows = _causal_rows(cons.nu.weights, cons.nu.prefix_keys, mu.prefix_keys,
                                       lambda j, i: idx(i, j), N)
        if nrows:
            blocks.append(sparse.coo_matrix((v, (r, c_)), shape=(nrows, m * k)))
            rhs.append(np.zeros(nrows))
    return sparse.vstack(blocks).tocsr(), np.concatenate(rhs)


def _solve(obj, A_eq, b_eq, A_ub=None, b_ub=None):
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise OracleError(f"LP solver failed: {res.message}")
    return res


def _coupling(cons: CouplingConstraintSet, x: np.ndarray) -> Coupling:
    m, k = len(cons.mu), len(cons.targets)
    W = np.clip(x[: m * k].reshape(m, k), 0.0, None)
    if cons.nu is not None:
        return Coupling(W, cons.mu, cons.nu)
    col = W.sum(axis=0)
    keep = col > 1e-14
    W = W[:, keep]
    nu = PathMeasure(tuple(p for p, q in zip(cons.targets, keep) if q), col[keep] / col[keep].sum(),
                     cons.mu.dims)
    return Coupling(W, cons.mu, nu)


def lp_transport(cons: CouplingConstraintSet, c: CostSpec, objective: str = "min_cost",
                 f: PathFunctional | None = None, lam: float = 0.0) -> tuple[float, Coupling]:
    """Exact LP over the declared coupling set.

    ``objective="min_cost"`` minimises E[c]; ``objective="max"`` maximises
    E[f(Y) - lam c(X, Y)] (``f`` required).
    """
    A_eq, b_eq = _constraints(cons)
    C = c.matrix(cons.mu.paths, cons.targets)
    if objective == "min_cost":
        res = _solve(C.ravel(), A_eq, b_eq)
        return float(res.fun), _coupling(cons, res.x)
    if objective == "max":
        if f is None:
            raise ValueError("objective 'max' needs a payoff")
        F = f.on_paths(cons.targets)
        res = _solve(-(F[None, :] - lam * C).ravel(), A_eq, b_eq)
        return float(-res.fun), _coupling(cons, res.x)
    raise ValueError(f"objective must be 'min_cost' or 'max', got {objective!r}")


def _candidate_paths(candidates) -> list:
    if isinstance(candidates, CandidateGrids):
        return candidates.paths()
    return list(candidates)


def primal_dro_ball(mu: ScenarioTree, f: PathFunctional, c: CostSpec, delta: float, mode: str = "causal",
                    candidates=None) -> float:
    """max E_pi[f(Y)] over couplings from ``mu`` onto the candidates with E_pi[c] <= delta.

    ``mode="classical"`` and ``"causal"`` are exact LPs. ``"bicausal"`` is a feasible
    lower bound: the causal optimiser's target law is mixed with ``mu`` as far as the
    nested distance allows.
    """
    if delta < 0:
        raise ValueError("radius must be nonnegative")
    pm = to_path_measure(mu)
    cands = _candidate_paths(candidates if candidates is not None else CandidateGrids.support(mu))
    if mode == "bicausal":
        return _bicausal_lower(mu, f, c, delta, cands)
    cons = CouplingConstraintSet.free(mode, pm, cands)
    A_eq, b_eq = _constraints(cons)
    F = f.on_paths(cons.targets)
    C = c.matrix(pm.paths, cons.targets)
    obj = -np.broadcast_to(F[None, :], C.shape).ravel()
    if math.isinf(delta):
        res = _solve(obj, A_eq, b_eq)
    else:
        res = _solve(obj, A_eq, b_eq, sparse.csr_matrix(C.ravel()[None, :]), np.array([delta]))
    return float(-res.fun)


def _mixture(mu: ScenarioTree, nu: PathMeasure, t: float) -> ScenarioTree:
    pm = to_path_measure(mu)
    w: dict = {}
    for p, q in zip(pm.paths, pm.weights):
        w[p] = w.get(p, 0.0) + (1 - t) * q
    for p, q in zip(nu.paths, nu.weights):
        w[p] = w.get(p, 0.0) + t * q
    paths = [p for p in w if w[p] > 0]
    return ScenarioTree.from_paths(paths, [w[p] for p in paths], mu.dims)


def _bicausal_lower(mu, f, c, delta, cands) -> float:
    pm = to_path_measure(mu)
    base = float(pm.expect(f.on_paths(pm.paths)))
    _, pi = lp_transport(CouplingConstraintSet.free("causal", pm, cands), c, "max", f, lam=0.0)
    target = pi.nu
    gain = float(target.expect(f.on_paths(target.paths))) - base
    if gain <= 0:
        return base

    def feasible(t):
        return ot_bicausal(mu, _mixture(mu, target, t), c)[0] <= delta

    if feasible(1.0):
        return base + gain
    lo, hi = 0.0, 1.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if feasible(mid) else (lo, mid)
    return base + lo * gain


def primal_avar_ball(mu: ScenarioTree, f: PathFunctional, c: CostSpec, delta: float, alpha: float,
                     candidates=None, mode: str = "causal") -> float:
    """sup over nu in the causal (or classical) ball and eta with d eta/d nu <= 1/alpha of E_eta[f]."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if mode not in ("causal", "classical"):
        raise ValueError("mode must be 'causal' or 'classical'")
    pm = to_path_measure(mu)
    cands = _candidate_paths(candidates if candidates is not None else CandidateGrids.support(mu))
    cons = CouplingConstraintSet.free(mode, pm, cands)
    A_pi, b_pi = _constraints(cons)
    m, k = len(pm), len(cands)
    nv = m * k + k
    A_eq = sparse.vstack([sparse.hstack([A_pi, sparse.csr_matrix((A_pi.shape[0], k))]),
                          sparse.csr_matrix(np.r_[np.zeros(m * k), np.ones(k)][None, :])]).tocsr()
    b_eq = np.r_[b_pi, 1.0]
    # eta_q - alpha^{-1} sum_p pi(p, q) <= 0
    rows = np.r_[np.tile(np.arange(k), m), np.arange(k)]
    cols = np.r_[np.arange(m * k), m * k + np.arange(k)]
    vals = np.r_[np.full(m * k, -1.0 / alpha), np.ones(k)]
    A_ub = sparse.coo_matrix((vals, (rows, cols)), shape=(k, nv))
    b_ub = np.zeros(k)
    if not math.isinf(delta):
        C = c.matrix(pm.paths, cands)
        A_ub = sparse.vstack([A_ub, sparse.csr_matrix(np.r_[C.ravel(), np.zeros(k)][None, :])])
        b_ub = np.r_[b_ub, delta]
    F = f.on_paths(cands)
    obj = np.r_[np.zeros(m * k), -F]
    res = _solve(obj, A_eq, b_eq, A_ub.tocsr(), b_ub)
    return float(-res.fun)


# -- enumeration -----------------------------------------------------------------------


def enumerate_policies(problem: ControlProblem, lam: float = math.inf, grids: Sequence | None = None,
                       c="sqeuclidean", cap: int = POLICY_CAP, fhat: Sequence | None = None) -> tuple[float, Policy]:
    """Best Markov policy by exhaustive search, evaluated with the Bellman operation order."""
    total = problem.n_policies
    if total > cap:
        raise CapExceededError(f"{total} policies exceed the enumeration cap {cap}")
    if fhat is None:
        fhat = stage_cost_tables(problem, lam, grids, c)
    N = problem.horizon
    P = np.arange(total)
    acts: list[np.ndarray] = []
    stride = 1
    for n in range(1, N):
        A, S = problem.actions[n - 1].size, problem.states[n - 1].size
        a = np.empty((total, S), dtype=int)
        for i in range(S):
            a[:, i] = (P // stride) % A
            stride *= A
        acts.append(a)
    V = np.broadcast_to(np.asarray(fhat[N - 1], dtype=float), (total, problem.states[N - 1].size))
    for n in range(N - 1, 0, -1):
        idx, probs = problem.next_index[n - 1], problem.noise[n - 1][1]
        S = problem.states[n - 1].size
        Vn = np.empty((total, S))
        f_n = np.asarray(fhat[n - 1], dtype=float)
        for i in range(S):
            a = acts[n - 1][:, i]
            E = expect_seq(probs, [V[P, idx[i, a, w]] for w in range(probs.size)])
            Vn[:, i] = (problem.stage[n - 1][i, a] + f_n[i]) + E
        V = Vn
    vals = expect_seq(problem.init_probs, [V[:, i] for i in problem.init_index])
    best = int(np.argmin(vals))
    pol = Policy(problem.states[:-1], problem.actions, [a[best].copy() for a in acts])
    return float(vals[best]), pol


def enumerate_stopping(tree: ScenarioTree, f: StagePayoffs, cap: int = STOPPING_CAP) -> tuple[float, dict[int, str]]:
    """Best stop/continue labelling of the non-leaf nodes by exhaustive search."""
    interior = [nid for nid in tree.preorder() if tree.children(nid)]
    total = 1 << len(interior)
    if total > cap:
        raise CapExceededError(f"{total} stopping rules exceed the enumeration cap {cap}")
    bit = {nid: k for k, nid in enumerate(interior)}
    R = np.arange(total)
    V: dict[int, np.ndarray] = {}
    for nid in tree.postorder():
        now = f.at(tree, nid)
        kids = tree.children(nid)
        if not kids:
            V[nid] = np.full(total, now)
            continue
        cont = expect_seq([tree.node(k).prob for k in kids], [V.pop(k) for k in kids])
        stop = ((R >> bit[nid]) & 1).astype(bool)
        V[nid] = np.where(stop, now, cont)
    vals = expect_seq([tree.node(r).prob for r in tree.roots], [V[r] for r in tree.roots])
    best = int(np.argmax(vals))
    rule = {nid: ("stop" if (best >> bit[nid]) & 1 else "continue") for nid in interior}
    rule.update({nid: "stop" for nid in tree.leaves})
    return float(vals[best]), rule


def primal_stopping_selection(mu: ScenarioTree, f: StagePayoffs, cands: CandidateFamily, c: CostSpec,
                              delta: float, table: BicausalCostTable | None = None) -> float:
    """max sum_z P(z) theta(z, w) J(w) over selection weights with sum_z,w P theta C <= delta."""
    table = table or bicausal_cost_table(mu, cands, c)
    J = candidate_values(cands, f)
    P, C = table.root_probs, table.values
    r, k = C.shape
    A_eq = sparse.kron(sparse.eye(r), np.ones((1, k))).tocsr()
    obj = -(P[:, None] * J[None, :]).ravel()
    if math.isinf(delta):
        res = _solve(obj, A_eq, np.ones(r))
    else:
        res = _solve(obj, A_eq, np.ones(r), sparse.csr_matrix((P[:, None] * C).ravel()[None, :]), np.array([delta]))
    return float(-res.fun)


def control_primal_check(problem: ControlProblem, policy: Policy, delta: float, grids: Sequence | None = None,
                         c: CostSpec | None = None) -> float:
    """Robust value of a fixed policy: control cost plus the causal primal over its state law."""
    N = problem.horizon
    law = controlled_law(problem, policy)
    obs = PathFunctional.stage_sum([lambda y, n=n: problem.obs_cost(n, y[..., 0]) for n in range(1, N + 1)])
    Y = grids if grids is not None else problem.states
    cands = CandidateGrids(tuple(np.asarray(g, dtype=float).reshape(-1, 1) for g in Y))
    c = c or CostSpec.sqeuclidean(N)
    return policy_control_cost(problem, policy) + primal_dro_ball(law, obs, c, delta, "causal", cands)
