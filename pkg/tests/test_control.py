import json
import math

import numpy as np
import pytest

from causal_dro.control import (ControlProblem, LQSpec, Policy, UnboundedStageCostError, backward, bellman_solve,
                                controlled_law, evaluate_policy, lq_moments, lq_solve, riccati, robust_stage_cost,
                                solve_robust_control, stage_cost_tables)
from causal_dro.dro import Ball
from causal_dro.instances import random_control_problem
from causal_dro.measures import to_path_measure
from causal_dro.oracles import control_primal_check, enumerate_policies

SQ = lambda y: y ** 2  # noqa: E731


@pytest.mark.parametrize("lam", [1.25, 2.0, 7.0])
def test_robust_stage_cost_quadratic(lam):
    xs = np.linspace(-2, 2, 21)
    got = robust_stage_cost(SQ, "sqeuclidean", lam, np.linspace(-30, 30, 121), xs)
    assert np.allclose(got, lam / (lam - 1) * xs ** 2, atol=1e-9)


def test_robust_stage_cost_divergence_flags():
    xs = np.array([0.0, 1.0])
    assert np.all(np.isinf(robust_stage_cost(SQ, "sqeuclidean", 1.0, np.linspace(-5, 5, 11), xs, growth=1.0)))
    # without the growth hint the grid maximiser sits on the edge, beyond the states
    out = robust_stage_cost(SQ, "sqeuclidean", 0.5, np.linspace(-5, 5, 11), xs)
    assert np.all(np.isinf(out))
    # edge maximisers inside the state range are legitimate
    flat = robust_stage_cost(lambda y: 0 * y, "sqeuclidean", 1.0, np.array([0.0, 1.0]), xs, refine=False)
    assert flat.tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        robust_stage_cost(SQ, "sqeuclidean", -1.0, xs, xs)


def test_riccati_hand_value():
    # [DERIVED] N=2, A=B=1, x1=1: min_u u^2 + 1 + (1+u)^2 = 1.5 at u = -1/2
    r = riccati(LQSpec(1.0, 1.0, 2, 1.0, 0.0, 0.0), math.inf)
    assert r.value(1.0) == pytest.approx(1.5)
    assert r.gain(1, 1.0, 1.0) == pytest.approx(0.5)


@pytest.mark.parametrize("A, delta", [(0.5, 0.1), (1.0, 0.09), (1.2, 1.0)])
def test_lq_closed_form_without_control(A, delta):
    # [DERIVED] B = 0: V(lam) = kappa M with M = sum E[X_n^2]; min over lam > 1 of
    # delta lam + lam M / (lam - 1) is (sqrt(M) + sqrt(delta))^2 at lam = 1 + sqrt(M / delta)
    spec = LQSpec(A, 0.0, 3, 1.0, 1.0, delta)
    M = lq_moments(spec, 1.0)
    res = lq_solve(spec)
    assert res.value == pytest.approx((math.sqrt(M) + math.sqrt(delta)) ** 2, rel=1e-9)
    assert res.lambda_star == pytest.approx(1 + math.sqrt(M / delta), rel=1e-4)


def test_lq_robust_above_classical_and_stationary():
    spec = LQSpec(1.0, 1.0, 3, 1.0, 1.0, 0.09)
    res = lq_solve(spec)
    classical = lq_solve(LQSpec(1.0, 1.0, 3, 1.0, 1.0, 0.0))
    assert math.isinf(classical.lambda_star) and res.value > classical.value
    h = lambda lam: spec.delta * lam + riccati(spec, lam).value(spec.x1)  # noqa: E731
    for eps in (1e-3, -1e-3):
        assert h(res.lambda_star * (1 + eps)) >= res.value - 1e-12
    doc = res.to_obj()
    assert doc["kappa"] == pytest.approx(res.lambda_star / (res.lambda_star - 1), rel=1e-9)


def test_lq_spec_validation():
    with pytest.raises(ValueError):
        LQSpec(1.0, 1.0, 1, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        LQSpec(1.0, 1.0, 3, 0.0, -1.0, 0.1)


@pytest.mark.parametrize("seed", range(20))
def test_bellman_equals_enumeration(seed):
    p = random_control_problem(seed)
    for lam in (math.inf, 1.0, 0.2):
        v, pol = bellman_solve(p, lam)
        ve, _ = enumerate_policies(p, lam)
        assert v == ve
        assert evaluate_policy(p, pol, stage_cost_tables(p, lam)) == v


def test_controlled_law_and_primal_check():
    p = random_control_problem(7, horizon=3)
    rep, pol = solve_robust_control(p, Ball(0.2))
    law = controlled_law(p, pol)
    assert to_path_measure(law).weights.sum() == pytest.approx(1.0)
    assert control_primal_check(p, pol, 0.2) == pytest.approx(rep.value, abs=1e-6)
    assert "policy" in rep.extra


def test_affine_problem_snapping_and_unbounded():
    states = [np.linspace(-2, 2, 9)] * 3
    p = ControlProblem.affine(1.0, 1.0, states, [np.array([-0.5, 0.0, 0.5])] * 2,
                              [([-0.3, 0.3], [0.5, 0.5])] * 2, ([0.0], [1.0]))
    assert p.max_snap == pytest.approx(0.8)  # 2 + 0.5 + 0.3 clamps to the top state 2
    with pytest.raises(UnboundedStageCostError):
        bellman_solve(p, 1.0, [np.linspace(-10, 10, 41)] * 3)
    v, pol = bellman_solve(p, math.inf)
    assert pol.action(1, 0.0) == 0.0
    with pytest.raises(ValueError, match="off the step-1 grid"):
        ControlProblem.affine(1.0, 1.0, states, [np.array([0.0])] * 2, [([0.0], [1.0])] * 2, ([0.1], [1.0]))


def problem_doc():
    return {
        "states": [[-1, 0, 1], [-1, 0, 1]],
        "actions": [[-1, 0, 1]],
        "noise": [{"values": [0], "probs": [1]}],
        "initial": {"values": [1], "probs": [1]},
        "dynamics": {"kind": "affine", "A": 1, "B": 1},
        "stage_cost": {"kind": "quadratic", "action": 1},
        "obs_cost": {"kind": "table", "values": [[0, 0, 0], [1, 0, 1]]},
    }


def test_from_obj_and_policy_json():
    # [DERIVED] from x1 = 1: u = -1 costs 1 and lands on 0 (cost 0); u = 0 costs 0 + 1
    p = ControlProblem.from_obj(problem_doc())
    assert not p.continuous_obs
    v, pol = bellman_solve(p, math.inf)
    assert v == 1.0
    assert json.loads(pol.to_json()) == pol.to_obj()
    bad = problem_doc()
    del bad["initial"]
    with pytest.raises(ValueError, match="malformed"):
        ControlProblem.from_obj(bad)
    bad = problem_doc()
    bad["dynamics"]["kind"] = "spline"
    with pytest.raises(ValueError, match="dynamics"):
        ControlProblem.from_obj(bad)


def test_problem_validation():
    doc = problem_doc()
    doc["noise"] = [{"values": [0, 1], "probs": [0.5, 0.6]}]
    with pytest.raises(ValueError, match="noise"):
        ControlProblem.from_obj(doc)
    p = ControlProblem.from_obj(problem_doc())
    fhat = stage_cost_tables(p, math.inf)
    value, policy, J = backward(p, fhat)
    assert isinstance(policy, Policy) and len(J) == 2
