import math

import numpy as np
import pytest

from causal_dro.dro import CandidateGrids, PathFunctional
from causal_dro.instances import random_control_problem, random_instance, random_pair
from causal_dro.measures import ScenarioTree, to_path_measure
from causal_dro.oracles import (CouplingConstraintSet, enumerate_policies, enumerate_stopping, lp_transport,
                                primal_dro_ball)
from causal_dro.simplex import CapExceededError
from causal_dro.stopping import StagePayoffs, two_point_tree
from causal_dro.transport import CostSpec, ot_classic, validate_causal


def test_constraint_set_validation(leak_pair):
    A = to_path_measure(leak_pair[0])
    with pytest.raises(ValueError, match="mode"):
        CouplingConstraintSet("adapted", A, A)
    with pytest.raises(ValueError, match="exactly one"):
        CouplingConstraintSet("causal", A)
    with pytest.raises(ValueError, match="bilinear"):
        CouplingConstraintSet.free("bicausal", A, [((0.0,), (0.0,))])
    with pytest.raises(ValueError, match="distinct"):
        CouplingConstraintSet.free("causal", A, [((0.0,), (0.0,)), ((0.0,), (0.0,))])


@pytest.mark.parametrize("seed", range(0, 60, 6))
def test_classical_lp_matches_simplex(seed):
    a, b = random_pair(seed)
    A, B = to_path_measure(a), to_path_measure(b)
    c = CostSpec.sqeuclidean(a.horizon)
    v, pi = lp_transport(CouplingConstraintSet("classical", A, B), c)
    assert v == pytest.approx(ot_classic(A, B, c)[0], abs=1e-9)
    assert pi.is_feasible(1e-9)


@pytest.mark.parametrize("seed", range(0, 60, 6))
def test_causal_lp_plan_is_causal(seed):
    a, b = random_pair(seed)
    A, B = to_path_measure(a), to_path_measure(b)
    _, pi = lp_transport(CouplingConstraintSet("causal", A, B), CostSpec.sqeuclidean(a.horizon))
    assert validate_causal(pi, "forward", tol=1e-7)
    _, pib = lp_transport(CouplingConstraintSet("bicausal", A, B), CostSpec.sqeuclidean(a.horizon))
    assert validate_causal(pib, "forward", tol=1e-7) and validate_causal(pib, "backward", tol=1e-7)


def test_free_target_max_objective():
    inst = random_instance(11, horizon=2)
    c = CostSpec.sqeuclidean(2)
    cons = CouplingConstraintSet.free("causal", to_path_measure(inst.mu), inst.space)
    v0, pi = lp_transport(cons, c, "max", inst.payoff, 0.0)
    # at lam = 0 moves are free, but the value can never beat the best grid payoff
    assert v0 <= float(inst.table.max()) + 1e-12
    assert pi.nu.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError, match="payoff"):
        lp_transport(cons, c, "max")
    with pytest.raises(ValueError, match="objective"):
        lp_transport(cons, c, "min")


def test_primal_ball_monotone_and_infinite_radius():
    inst = random_instance(3, horizon=2)
    c = CostSpec.sqeuclidean(2)
    vals = [primal_dro_ball(inst.mu, inst.payoff, c, d, "causal", inst.space) for d in (0.0, 0.1, 1.0, math.inf)]
    assert all(x <= y + 1e-12 for x, y in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        primal_dro_ball(inst.mu, inst.payoff, c, -1.0)


def test_lp_cap():
    paths = [((float(i),),) for i in range(200)]
    mu = ScenarioTree.from_paths(paths, [1 / 200] * 200)
    grids = CandidateGrids.from_values([np.arange(60.0)])
    with pytest.raises(CapExceededError):
        primal_dro_ball(mu, PathFunctional.terminal_quadratic(), CostSpec.sqeuclidean(1), 1.0, "causal", grids)


def test_enumerate_stopping_two_point():
    # [DERIVED] f1 = 1, f2 = x^2 - 1: at a = 2 continuing earns 3, at a = 1 stopping earns 1
    f = StagePayoffs.squared_minus_one(1.0)
    v, rule = enumerate_stopping(two_point_tree(2.0), f)
    assert v == 3.0 and rule[0] == "continue"
    v, rule = enumerate_stopping(two_point_tree(1.0), f)
    assert v == 1.0 and rule[0] == "stop"
    with pytest.raises(CapExceededError):
        enumerate_stopping(two_point_tree(1.0), f, cap=1)


def test_enumerate_policies_cap_and_policy():
    p = random_control_problem(1, horizon=3)
    assert p.n_policies == 16
    v, pol = enumerate_policies(p)
    assert len(pol.choice) == 2
    with pytest.raises(CapExceededError):
        enumerate_policies(p, cap=8)
