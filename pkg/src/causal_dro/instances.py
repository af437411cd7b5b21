"""Seeded random finite instances for property tests, acceptance runs and docs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dro import CandidateGrids, PathFunctional
from .measures import Node, ScenarioTree


def grid_table_payoff(grids: CandidateGrids, table: np.ndarray, name: str = "grid_table") -> PathFunctional:
    """Payoff tabulated on the product of 1-D grids; off-grid evaluation raises ``KeyError``."""
    axes = [s[:, 0] for s in grids.steps]
    table = np.asarray(table, dtype=float)
    if table.shape != grids.shape:
        raise ValueError(f"table shape {table.shape} != grid shape {grids.shape}")

    def fn(ys):
        idx = []
        for ax, y in zip(axes, ys):
            v = y[..., 0]
            i = np.clip(np.searchsorted(ax, v), 0, len(ax) - 1)
            if not np.all(ax[i] == v):
                raise KeyError("payoff evaluated off its grid")
            idx.append(i)
        return table[tuple(np.broadcast_arrays(*idx))]

    return PathFunctional(fn, name, {})


def random_tree(rng: np.random.Generator, horizon: int, max_branch: int, space: CandidateGrids) -> ScenarioTree:
    """Tree with 1..max_branch children per node, child values distinct and drawn from ``space``."""
    nodes: list[Node] = []

    def children(parent, step):
        k = int(rng.integers(1, max_branch + 1))
        grid = space.steps[step - 1]
        k = min(k, grid.shape[0])
        picks = rng.choice(grid.shape[0], size=k, replace=False)
        probs = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
        probs = probs / probs.sum()
        for i, p in zip(sorted(picks), probs):
            nid = len(nodes)
            nodes.append(Node(nid, parent, step, tuple(grid[i]), float(p)))
            if step < horizon:
                children(nid, step + 1)

    children(None, 1)
    # renormalise sibling groups so sums are 1 to machine precision
    groups: dict = {}
    for n in nodes:
        groups.setdefault(n.parent, []).append(n)
    fixed = []
    for n in nodes:
        s = sum(m.prob for m in groups[n.parent])
        fixed.append(Node(n.id, n.parent, n.step, n.value, n.prob / s))
    return ScenarioTree(horizon, tuple(s.shape[1] for s in space.steps), tuple(fixed))


@dataclass
class RandomInstance:
    mu: ScenarioTree
    space: CandidateGrids
    payoff: PathFunctional
    table: np.ndarray
    seed: int


def random_space(rng: np.random.Generator, horizon: int, size: int = 3, spacing: str = "float",
                 dims: int = 1) -> CandidateGrids:
    """Per-step finite value sets: distinct 3-decimal floats in [-1.5, 1.5] or small integers."""
    steps = []
    for _ in range(horizon):
        if dims > 1:
            vals = np.unique(np.round(rng.uniform(-1.5, 1.5, size=(size, dims)), 3), axis=0)
            steps.append(vals)
            continue
        if spacing == "int":
            vals = np.sort(rng.choice(np.arange(-4, 5), size=size, replace=False)).astype(float)
        else:
            vals = np.sort(np.round(rng.uniform(-1.5, 1.5, size=size), 3))
            while len(np.unique(vals)) < size:
                vals = np.sort(np.round(rng.uniform(-1.5, 1.5, size=size), 3))
        steps.append(vals.reshape(-1, 1))
    return CandidateGrids(tuple(steps))


def random_instance(seed: int, horizon: int | None = None, max_branch: int = 3, space_size: int = 3) -> RandomInstance:
    """Tree on a finite product space with a random tabulated payoff on every space path."""
    rng = np.random.default_rng(seed)
    N = int(horizon if horizon is not None else rng.integers(1, 4))
    space = random_space(rng, N, space_size)
    mu = random_tree(rng, N, max_branch, space)
    table = np.round(rng.uniform(-1.0, 1.0, size=space.shape), 4)
    return RandomInstance(mu, space, grid_table_payoff(space, table), table, seed)


def random_tree_for_cli(seed: int, horizon: int, max_branch: int, dims: int = 1) -> ScenarioTree:
    """Tree used by the command-line generator: values on a random 5-point space per step."""
    rng = np.random.default_rng(seed)
    space = random_space(rng, horizon, max(5, max_branch), dims=dims)
    return random_tree(rng, horizon, max_branch, space)


def random_pair(seed: int, max_branch: int = 3) -> tuple[ScenarioTree, ScenarioTree]:
    """Two independent random trees with a common horizon (1..3) on different value spaces."""
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4))
    a = random_tree(rng, N, max_branch, random_space(rng, N, 3))
    b = random_tree(rng, N, max_branch, random_space(rng, N, 3))
    return a, b


def random_control_problem(seed: int, horizon: int | None = None):
    """Two states per step, two actions, two noise atoms; tabulated transitions and costs."""
    from .control import ControlProblem, _table_obs

    rng = np.random.default_rng(seed)
    N = int(horizon if horizon is not None else rng.integers(1, 4))
    states = [np.sort(np.round(rng.uniform(-2, 2, 2), 3)) for _ in range(N)]
    for s in states:
        if s[0] == s[1]:
            s[1] += 0.5
    actions = [np.array([-1.0, 1.0]) for _ in range(N - 1)]
    noise = []
    for _ in range(N - 1):
        p = float(np.round(rng.uniform(0.2, 0.8), 3))
        noise.append(([-1.0, 1.0], [p, 1.0 - p]))
    nxt = [states[n][rng.integers(0, 2, size=(2, 2, 2))] for n in range(1, N)]
    stage = [np.round(rng.uniform(0, 1, (2, 2)), 3) for _ in range(N - 1)]
    obs_vals = [np.round(rng.uniform(0, 2, 2), 3) for _ in range(N)]
    p0 = float(np.round(rng.uniform(0.2, 0.8), 3))
    return ControlProblem(states, actions, noise, (states[0], [p0, 1.0 - p0]), _table_obs(states, obs_vals),
                          next_values=nxt, stage_table=stage, continuous_obs=False)


def random_stopping_payoff(seed: int, horizon: int):
    """Markov rewards f_n(x) = a_n x + b_n x^2 + c_n with seeded coefficients."""
    from .stopping import StagePayoffs

    rng = np.random.default_rng(seed)
    coef = np.round(rng.uniform(-1, 1, size=(horizon, 3)), 3)
    return StagePayoffs.markov([lambda x, a=a, b=b, c=c: a * x[0] + b * x[0] ** 2 + c for a, b, c in coef])
