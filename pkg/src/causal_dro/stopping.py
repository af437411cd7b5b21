"""Distributionally robust optimal stopping on filtered scenario trees.

Values of stopping problems depend on the information flow, not only on the path
law: two trees with the same path law but different branching (a coin toss hidden
behind equal values) can have different Snell values. The robust problem is
therefore posed over filtered laws and penalised by the bicausal (nested) distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dro import DualSolveReport, Penalty, SolveOptions, minimize_dual
from .measures import Node, Path, ScenarioTree, is_plain, tree_from_obj
from .transport import CostSpec, ot_bicausal


def expect_seq(probs: Sequence[float], values: Sequence):
    """Left-to-right sum of p_k * v_k (scalars or arrays); fixed order keeps results reproducible."""
    acc = 0.0
    for p, v in zip(probs, values):
        acc = acc + p * v
    return acc


class StagePayoffs:
    """Stopping rewards f_n(x_{1:n}), given as a function of (step, history) or per node id."""

    def __init__(self, fn: Callable[[int, Path], float] | None = None, table: Mapping[int, float] | None = None,
                 name: str = "custom"):
        if (fn is None) == (table is None):
            raise ValueError("give exactly one of a payoff function or a per-node table")
        self.fn = fn
        self.table = dict(table) if table is not None else None
        self.name = name

    def at(self, tree: ScenarioTree, node_id: int) -> float:
        if self.table is not None:
            try:
                v = float(self.table[node_id])
            except KeyError:
                raise KeyError(f"payoff table has no entry for node {node_id}") from None
        else:
            v = float(self.fn(tree.node(node_id).step, tree.history(node_id)))
        if not math.isfinite(v):
            raise ValueError(f"payoff at node {node_id} is not finite")
        return v

    @property
    def portable(self) -> bool:
        """Whether the payoff can be evaluated on trees other than the one it was tabulated for."""
        return self.fn is not None

    @classmethod
    def squared_minus_one(cls, first: float | None = 1.0) -> "StagePayoffs":
        """f_n = x_n^2 - 1 (first coordinate); ``first`` overrides the step-1 reward."""
        def fn(step, hist):
            if step == 1 and first is not None:
                return first
            return hist[-1][0] ** 2 - 1.0
        return cls(fn, name="squared_minus_one")

    @classmethod
    def markov(cls, terms: Sequence[Callable[[tuple], float]]) -> "StagePayoffs":
        terms = list(terms)
        return cls(lambda step, hist: terms[step - 1](hist[-1]), name="markov")


@dataclass
class SnellEnvelope:
    values: dict[int, float]
    actions: dict[int, str]
    value: float


def snell(tree: ScenarioTree, f: StagePayoffs) -> SnellEnvelope:
    """Backward induction F_n = max{f_n, E[F_{n+1} | node]}; ties resolve to stopping."""
    F: dict[int, float] = {}
    act: dict[int, str] = {}
    for nid in tree.postorder():
        now = f.at(tree, nid)
        kids = tree.children(nid)
        if not kids:
            F[nid], act[nid] = now, "stop"
            continue
        cont = expect_seq([tree.node(k).prob for k in kids], [F[k] for k in kids])
        if now >= cont:
            F[nid], act[nid] = now, "stop"
        else:
            F[nid], act[nid] = cont, "continue"
    value = expect_seq([tree.node(r).prob for r in tree.roots], [F[r] for r in tree.roots])
    return SnellEnvelope(F, act, float(value))


# -- relaxation example -------------------------------------------------------------


def two_point_tree(a: float) -> ScenarioTree:
    """Law 1/2 (delta_(0, a) + delta_(0, -a)) as a single-root tree."""
    return ScenarioTree(2, (1, 1), (Node(0, None, 1, (0.0,), 1.0),
                                    Node(1, 0, 2, (a,), 0.5), Node(2, 0, 2, (-a,), 0.5)))


def coin_toss_tree(t1: ScenarioTree, t2: ScenarioTree) -> ScenarioTree:
    """Two root branches of probability 1/2 carrying ``t1`` and ``t2`` (filtration enlarged by a coin)."""
    nodes = []
    for tree, off in ((t1, 0), (t2, 1000)):
        for n in tree.nodes:
            prob = 0.5 * n.prob if n.parent is None else n.prob
            nodes.append(Node(n.id + off, None if n.parent is None else n.parent + off, n.step, n.value, prob))
    return ScenarioTree(t1.horizon, t1.dims, tuple(nodes))


def relaxation_demo(first_reward: float = 1.0) -> dict:
    """Snell values of nu_1, nu_2, their plain mixture and the coin-augmented mixture.

    Uses f_1 = ``first_reward`` and f_2(x) = x^2 - 1.
    """
    f = StagePayoffs.squared_minus_one(first_reward)
    nu1, nu2 = two_point_tree(1.0), two_point_tree(2.0)
    plain = ScenarioTree.from_paths([((0.0,), (1.0,)), ((0.0,), (-1.0,)), ((0.0,), (2.0,)), ((0.0,), (-2.0,))],
                                    [0.25] * 4)
    augmented = coin_toss_tree(nu1, nu2)
    J1, J2 = snell(nu1, f).value, snell(nu2, f).value
    Jp, Ja = snell(plain, f).value, snell(augmented, f).value
    return {
        "J_nu1": J1,
        "J_nu2": J2,
        "J_plain_mixture": Jp,
        "J_augmented": Ja,
        "average_of_components": 0.5 * (J1 + J2),
        "plain_is_plain": is_plain(plain),
        "augmented_is_plain": is_plain(augmented),
        "strict_gap": Jp < 0.5 * (J1 + J2),
        "augmented_equals_average": Ja == 0.5 * (J1 + J2),
    }


# -- candidate family and relaxed dual ---------------------------------------------


@dataclass
class CandidateFamily:
    """Finite list of single-root trees (candidate step-1 nested laws)."""

    trees: list[ScenarioTree]
    labels: list[str] = field(default_factory=list)
    truncated: bool = False

    def __post_init__(self):
        if not self.trees:
            raise ValueError("candidate family is empty")
        if not self.labels:
            self.labels = [f"cand{k}" for k in range(len(self.trees))]
        for t in self.trees:
            if len(t.roots) != 1:
                raise ValueError("candidates must be single-root trees")

    def __len__(self) -> int:
        return len(self.trees)

    @classmethod
    def generate(cls, mu: ScenarioTree, delta: float, extra: Sequence[ScenarioTree] = (), cap: int = 200,
                 offsets: Sequence[float] = (-2, -1, 1, 2)) -> "CandidateFamily":
        """mu's root subtrees, single-node shifts by multiples of sqrt(delta)/N, then user trees."""
        trees, labels = [], []
        for r in mu.roots:
            trees.append(mu.subtree(r))
            labels.append(f"root{r}")
        for t in extra:
            for r in t.roots:
                if t.dims != mu.dims:
                    raise ValueError(f"candidate dims {t.dims} differ from reference dims {mu.dims}")
                trees.append(t.subtree(r))
                labels.append(f"user{len(labels)}")
        eps = math.sqrt(delta) / mu.horizon if delta > 0 else 0.0
        truncated = False
        if eps > 0:
            for r in mu.roots:
                sub = mu.subtree(r)
                for nid in sub.preorder():
                    for k in offsets:
                        if len(trees) >= cap:
                            truncated = True
                            break
                        v = tuple(a + k * eps for a in sub.node(nid).value)
                        trees.append(sub.with_values({nid: v}))
                        labels.append(f"root{r}:node{nid}{k:+g}eps")
        return cls(trees, labels, truncated)

    @classmethod
    def from_obj(cls, docs: Sequence) -> "CandidateFamily":
        trees, labels = [], []
        for k, doc in enumerate(docs):
            t = tree_from_obj(doc)
            for r in t.roots:
                trees.append(t.subtree(r))
                labels.append(f"file{k}:root{r}")
        return cls(trees, labels)


@dataclass
class BicausalCostTable:
    roots: list[int]
    root_probs: np.ndarray
    values: np.ndarray  # (roots, candidates)


def bicausal_cost_table(mu: ScenarioTree, cands: CandidateFamily, c: CostSpec) -> BicausalCostTable:
    """Nested distance between each root subtree of ``mu`` and each candidate."""
    roots = list(mu.roots)
    C = np.empty((len(roots), len(cands)))
    for i, r in enumerate(roots):
        sub = mu.subtree(r)
        for j, w in enumerate(cands.trees):
            C[i, j] = ot_bicausal(sub, w, c)[0]
    return BicausalCostTable(roots, np.array([mu.node(r).prob for r in roots]), C)


def candidate_values(cands: CandidateFamily, f: StagePayoffs) -> np.ndarray:
    if not f.portable:
        raise ValueError("candidate trees need a payoff given as a function of the history, not a node table")
    return np.array([snell(w, f).value for w in cands.trees])


def robust_stopping_dual(mu: ScenarioTree, f: StagePayoffs, cands: CandidateFamily, c: CostSpec, L: Penalty,
                         opts: SolveOptions | None = None, table: BicausalCostTable | None = None) -> DualSolveReport:
    """inf_lam {L*(lam) + sum_z P(z) max_w [J(w) - lam C(z, w)]} over the candidate family."""
    table = table or bicausal_cost_table(mu, cands, c)
    J = candidate_values(cands, f)
    P, C = table.root_probs, table.values

    def inner(lam):
        return float(expect_seq(P, list((J[None, :] - lam * C).max(axis=1))))

    rep = minimize_dual(inner, L, opts, mode="bicausal-relaxed")
    lam = rep.lambda_star
    best = (J[None, :] - lam * C).argmax(axis=1)
    rep.extra = {
        "argmax_candidates": {str(r): cands.labels[int(k)] for r, k in zip(table.roots, best)},
        "n_candidates": len(cands),
        "candidates_truncated": cands.truncated,
    }
    rep.notes.append("supremum over filtered laws restricted to the candidate family")
    return rep


def plain_primal_value(mu: ScenarioTree, f: StagePayoffs, cands: CandidateFamily, c: CostSpec,
                       L: Penalty) -> float:
    """max over single candidates w (and mu itself) of J(w) - L(d_bc(mu, w))."""
    best = snell(mu, f).value - L(0.0)
    for w in cands.trees:
        d = ot_bicausal(mu, w, c)[0]
        pen = L(d)
        if math.isfinite(pen):
            best = max(best, snell(w, f).value - pen)
    return best
