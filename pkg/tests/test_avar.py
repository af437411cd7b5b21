import numpy as np
import pytest

from causal_dro.avar import (AvarParams, GbmSpec, GridEvaluator, avar_of_values, avar_robust, avar_standard,
                             gbm_tree, lognormal_atoms, run_avar_experiment, strike_sweep)
from causal_dro.dro import (Ball, CandidateGrids, Linear, PathFunctional, SolveOptions, classical_from_grid,
                            nested_from_grid, payoff_grid, solve_penalized)
from causal_dro.instances import random_instance
from causal_dro.measures import ScenarioTree
from causal_dro.oracles import primal_avar_ball, primal_dro_ball
from causal_dro.transport import CostSpec


def variational(values, weights, alpha):
    """inf over gamma of gamma + E[(v - gamma)^+]/alpha; a minimiser sits on an atom."""
    return min(g + np.dot(weights, np.maximum(values - g, 0.0)) / alpha for g in values)


def test_sorted_tail_values():
    v, w = np.array([1.0, 2.0, 3.0, 4.0]), np.full(4, 0.25)
    assert avar_of_values(v, w, 0.5) == pytest.approx(3.5)
    assert avar_of_values(v, w, 0.3) == pytest.approx((0.25 * 4 + 0.05 * 3) / 0.3)
    with pytest.raises(ValueError):
        avar_of_values(v, w, 1.5)


def test_sorted_tail_matches_variational(rng):
    for _ in range(50):
        k = int(rng.integers(1, 8))
        v, w = rng.normal(size=k), rng.dirichlet(np.ones(k))
        a = float(rng.uniform(0.05, 0.99))
        assert avar_of_values(v, w, a) == pytest.approx(variational(v, w, a), abs=1e-12)


def test_standard_requires_nonnegative_payoff():
    mu = ScenarioTree.from_paths([(-1.0,), (1.0,)], [0.5, 0.5])
    f = PathFunctional(lambda ys: ys[0][..., 0], "x")
    with pytest.raises(ValueError, match="nonnegative"):
        avar_standard(mu, f, 0.5)
    assert avar_standard(mu, f + 1.0, 0.5) == pytest.approx(2.0)


def test_dirac_closed_form():
    # [DERIVED] from a point mass, put alpha of the mass at y = sqrt(delta/alpha); the tail mean is 1 + y
    mu = ScenarioTree.chain([(0.0,)])
    f = PathFunctional(lambda ys: ys[0][..., 0] + 1.0, "x+1")
    grids = CandidateGrids.from_values([np.linspace(-1, 1, 9)])
    c = CostSpec.sqeuclidean(1)
    for mode in ("causal", "classical"):
        rep = avar_robust(mu, f, c, AvarParams(0.5, Ball(0.125), grids), mode)
        assert rep.value == pytest.approx(1.5, abs=1e-8)
        assert rep.gamma_star is not None


@pytest.mark.parametrize("seed", range(8))
def test_duality_against_lp(seed):
    inst = random_instance(seed, horizon=2)
    f = inst.payoff + 1.0
    c = CostSpec.sqeuclidean(2)
    for mode in ("causal", "classical"):
        for a in (0.3, 0.8):
            dual = avar_robust(inst.mu, f, c, AvarParams(a, Ball(0.2), inst.space), mode).value
            assert dual == pytest.approx(primal_avar_ball(inst.mu, f, c, 0.2, a, inst.space, mode), abs=1e-6)


def test_alpha_one_lp_is_robust_expectation():
    inst = random_instance(4, horizon=2)
    f = inst.payoff + 1.0
    c = CostSpec.sqeuclidean(2)
    assert primal_avar_ball(inst.mu, f, c, 0.3, 1.0, inst.space) == \
        pytest.approx(primal_dro_ball(inst.mu, f, c, 0.3, "causal", inst.space), abs=1e-9)


def test_linear_penalty_runs():
    inst = random_instance(2, horizon=2)
    f = inst.payoff + 1.0
    c = CostSpec.sqeuclidean(2)
    robust = avar_robust(inst.mu, f, c, AvarParams(0.5, Linear(1.0), inst.space)).value
    assert robust >= avar_standard(inst.mu, f, 0.5) - 1e-9


@pytest.mark.parametrize("augment", [False, True])
@pytest.mark.parametrize("seed", range(6))
def test_grid_evaluator_matches_reference(seed, augment):
    inst = random_instance(seed, horizon=3)
    grids = CandidateGrids.around(inst.mu, 0.4, points=4)  # includes the support
    c = CostSpec.sqeuclidean(3)
    f = PathFunctional.lookback_call(0.2)
    ev = GridEvaluator(inst.mu, f, c, grids, augment=augment)
    F = payoff_grid(f, grids)
    for lam in (0.0, 0.8, 4.0):
        assert ev.nested(ev.F, lam) == pytest.approx(nested_from_grid(inst.mu, F, c, lam, grids), abs=1e-12)
        assert ev.classical(ev.F, lam) == pytest.approx(classical_from_grid(inst.mu, F, c, lam, grids), abs=1e-12)
    with pytest.raises(ValueError, match="mode"):
        ev("bicausal")


def test_params_validation():
    with pytest.raises(ValueError):
        AvarParams(1.0, Ball(0.1), CandidateGrids.from_values([[0.0]]))


def test_gbm_tree_shape():
    spec = GbmSpec(atoms=5)
    t = gbm_tree(spec)
    assert len(t.nodes_at(1)) == 5 and len(t.nodes_at(2)) == 25
    assert all(t.node(k).prob == pytest.approx(0.2) for k in t.nodes_at(2))
    atoms = lognormal_atoms(0.2, 0.5, 16)
    assert np.all(np.diff(atoms) > 0)
    assert atoms.mean() == pytest.approx(1.0, abs=5e-3)
    with pytest.raises(ValueError):
        GbmSpec(times=(1.0, 0.5))


def test_strike_sweep():
    ks = strike_sweep()
    assert len(ks) == 21 and ks[0] == 0.5 and ks[-1] == 1.5
    with pytest.raises(ValueError):
        strike_sweep(1.0, 0.5)


def test_small_experiment_ordering_and_csv():
    exp = run_avar_experiment(GbmSpec(atoms=4), strikes=[0.8, 1.0, 1.2], points=9)
    for r in exp.rows:
        assert r.standard <= r.causal + 1e-9 <= r.classical + 2e-9
    lines = exp.to_csv().splitlines()
    assert lines[0] == "strike,standard,causal,classical" and len(lines) == 4


def test_calendar_spread_expectation_is_not_reduced():
    # stage-additive payoff and separable cost: causal and classical robust expectations agree
    mu = gbm_tree(GbmSpec(atoms=4))
    grids = CandidateGrids.around(mu, 0.6, points=9)
    c = CostSpec.sqeuclidean(2)
    f = PathFunctional.calendar_spread(1.0)
    a = solve_penalized(mu, f, c, Ball(0.09), grids, "causal")
    b = solve_penalized(mu, f, c, Ball(0.09), grids, "classical")
    assert a.value == pytest.approx(b.value, abs=1e-12)
    # same check without the stage-wise shortcut
    o = SolveOptions(use_structure=False)
    assert solve_penalized(mu, f, c, Ball(0.09), grids, "causal", o).value == \
        pytest.approx(solve_penalized(mu, f, c, Ball(0.09), grids, "classical", o).value, abs=1e-7)
