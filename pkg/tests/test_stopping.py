import math

import pytest

from causal_dro.dro import Ball, Linear
from causal_dro.instances import random_instance, random_stopping_payoff
from causal_dro.measures import Node, ScenarioTree
from causal_dro.oracles import enumerate_stopping, primal_stopping_selection
from causal_dro.stopping import (CandidateFamily, StagePayoffs, bicausal_cost_table, candidate_values,
                                 expect_seq, plain_primal_value, relaxation_demo, robust_stopping_dual, snell,
                                 two_point_tree)
from causal_dro.transport import CostSpec, ot_bicausal

C2 = CostSpec.sqeuclidean(2)
F = StagePayoffs.squared_minus_one(1.0)


def test_relaxation_demo_values():
    # [DERIVED] J(nu1) = max(1, 0) = 1, J(nu2) = max(1, 3) = 3, plain mixture max(1, (0 + 3)/2) = 1.5,
    # coin-augmented mixture averages the two stopping problems: 2
    d = relaxation_demo()
    assert (d["J_nu1"], d["J_nu2"], d["J_plain_mixture"], d["J_augmented"]) == (1.0, 3.0, 1.5, 2.0)
    assert d["augmented_equals_average"] and d["strict_gap"]
    assert d["plain_is_plain"] and not d["augmented_is_plain"]


def test_uncorrected_first_reward():
    # with f_1(x) = x^2 - 1 = -1 at x_1 = 0 stopping never helps, so the mixture gap closes
    d = relaxation_demo(first_reward=None)
    assert d["J_plain_mixture"] == pytest.approx(d["average_of_components"])
    assert not d["strict_gap"]


def test_snell_ties_stop_and_actions():
    t = two_point_tree(1.0)
    env = snell(t, StagePayoffs(table={0: 0.5, 1: 1.0, 2: 0.0}))  # continuation 0.5 equals the reward
    assert env.value == 0.5 and env.actions[0] == "stop"
    assert env.actions[1] == env.actions[2] == "stop"


def test_expect_seq_order():
    assert expect_seq([0.5, 0.5], [1.0, 3.0]) == 2.0
    assert expect_seq([], []) == 0.0


def test_table_payoff_and_portability():
    t = two_point_tree(1.0)
    tab = StagePayoffs(table={0: 0.2, 1: 1.0, 2: 0.0})
    assert snell(t, tab).value == pytest.approx(0.5)
    assert not tab.portable and F.portable
    with pytest.raises(KeyError, match="node 2"):
        StagePayoffs(table={0: 0.2, 1: 1.0}).at(t, 2)
    with pytest.raises(ValueError):
        StagePayoffs()
    with pytest.raises(ValueError, match="history"):
        candidate_values(CandidateFamily([t]), tab)


@pytest.mark.parametrize("seed", range(25))
def test_snell_equals_enumeration(seed):
    mu = random_instance(seed).mu
    f = random_stopping_payoff(seed, mu.horizon)
    assert snell(mu, f).value == enumerate_stopping(mu, f)[0]


def test_candidate_family_generation():
    mu = ScenarioTree.from_paths([(0.0, 1.0), (0.0, -1.0), (1.0, 2.0)], [0.25, 0.25, 0.5])
    fam = CandidateFamily.generate(mu, 0.16)
    # two roots, each with its subtree plus 4 shifts per node (1 + 2 and 1 + 1 nodes)
    assert len(fam) == 2 + 4 * (3 + 2)
    eps = math.sqrt(0.16) / 2
    shifted = fam.trees[2]
    r = shifted.roots[0]
    assert shifted.node(r).value[0] == pytest.approx(mu.node(r).value[0] - 2 * eps)
    small = CandidateFamily.generate(mu, 0.16, cap=5)
    assert len(small) == 5 and small.truncated
    assert len(CandidateFamily.generate(mu, 0.0)) == 2
    with pytest.raises(ValueError, match="single-root"):
        CandidateFamily([mu])


def test_cost_table_is_nested_distance():
    mu = ScenarioTree.from_paths([(0.0, 1.0), (0.0, -1.0)], [0.5, 0.5])
    fam = CandidateFamily([two_point_tree(1.0), two_point_tree(2.0)])
    tab = bicausal_cost_table(mu, fam, C2)
    assert tab.values[0, 0] == pytest.approx(0.0)
    assert tab.values[0, 1] == pytest.approx(ot_bicausal(mu, two_point_tree(2.0), C2)[0])
    assert tab.values[0, 1] == pytest.approx(1.0)  # matched by sign, each leg moves by 1


def test_dual_on_relaxation_example():
    # [DERIVED] mu = nu1, candidate nu2 at nested distance 1. Ball(0.5): the selection can move half
    # of the (single) root's mass, so the relaxed value is 1/2 * 1 + 1/2 * 3 = 2 > the plain value 1
    mu = two_point_tree(1.0)
    fam = CandidateFamily([two_point_tree(1.0), two_point_tree(2.0)], ["nu1", "nu2"])
    rep = robust_stopping_dual(mu, F, fam, C2, Ball(0.5))
    assert rep.value == pytest.approx(2.0, abs=1e-7)
    assert primal_stopping_selection(mu, F, fam, C2, 0.5) == pytest.approx(2.0, abs=1e-9)
    assert plain_primal_value(mu, F, fam, C2, Ball(0.5)) == pytest.approx(1.0)
    assert plain_primal_value(mu, F, fam, C2, Ball(1.0)) == pytest.approx(3.0)
    assert rep.extra["n_candidates"] == 2


@pytest.mark.parametrize("seed", range(6))
def test_dual_vs_selection_lp(seed):
    mu = random_instance(seed, horizon=2).mu
    f = random_stopping_payoff(seed, 2)
    fam = CandidateFamily.generate(mu, 0.1)
    tab = bicausal_cost_table(mu, fam, C2)
    for d in (0.05, 0.3):
        dual = robust_stopping_dual(mu, f, fam, C2, Ball(d), table=tab).value
        assert dual == pytest.approx(primal_stopping_selection(mu, f, fam, C2, d, tab), abs=1e-6)
    # linear penalty: inf_{lam <= kappa} of the inner value is the inner value at kappa
    inner = robust_stopping_dual(mu, f, fam, C2, Linear(2.0), table=tab).value
    assert inner >= snell(mu, f).value - 1e-12


def test_non_plain_reference_ok():
    nodes = (Node(0, None, 1, (0.0,), 0.5), Node(1, None, 1, (0.0,), 0.5),
             Node(2, 0, 2, (1.0,), 1.0), Node(3, 1, 2, (-2.0,), 1.0))
    mu = ScenarioTree(2, (1, 1), nodes)
    # the root information reveals X2: stop on the x2 = 1 branch, continue on x2 = -2
    assert snell(mu, F).value == pytest.approx(0.5 * 1.0 + 0.5 * 3.0)
