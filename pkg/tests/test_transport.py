import numpy as np
import pytest

from causal_dro.instances import random_pair
from causal_dro.measures import ScenarioTree, to_path_measure
from causal_dro.oracles import CouplingConstraintSet, lp_transport
from causal_dro.simplex import CapExceededError
from causal_dro.transport import CostSpec, Coupling, ot_bicausal, ot_classic, validate_causal

C2 = CostSpec.sqeuclidean(2)


def test_info_leak_values(leak_pair):
    # [DERIVED] classic pairs (1,1)->(0,1): cost 1. Bicausal: Y2 independent of X given
    # step 1, so E[(X2-Y2)^2] = 2 on top of the step-1 cost 1.
    mu, nu = leak_pair
    A, B = to_path_measure(mu), to_path_measure(nu)
    assert ot_classic(A, B, C2)[0] == pytest.approx(1.0)
    v, pi = ot_bicausal(mu, nu, C2)
    assert v == pytest.approx(3.0)
    assert np.allclose(pi.weights, 0.25)
    assert lp_transport(CouplingConstraintSet("causal", A, B), C2)[0] == pytest.approx(1.0)
    assert lp_transport(CouplingConstraintSet("causal", B, A), C2)[0] == pytest.approx(3.0)


def test_classic_plan_is_anticipative(leak_pair):
    mu, nu = leak_pair
    A, B = to_path_measure(mu), to_path_measure(nu)
    _, pi = ot_classic(A, B, C2)
    assert validate_causal(pi, "forward")
    assert not validate_causal(pi, "backward")
    assert pi.is_feasible()


def test_validate_direction_checked(leak_pair):
    mu, nu = leak_pair
    _, pi = ot_bicausal(mu, nu, C2)
    with pytest.raises(ValueError, match="direction"):
        validate_causal(pi, "sideways")


def test_cost_specs():
    x, y = ((0.0,), (1.0,)), ((3.0,), (-1.0,))
    assert CostSpec.sqeuclidean(2).matrix([x], [y])[0, 0] == pytest.approx(9 + 4)
    assert CostSpec.euclidean(2).matrix([x], [y])[0, 0] == pytest.approx(3 + 2)
    tab = CostSpec.from_table({(x, y): 0.5, (x, x): 0.0})
    assert tab.matrix([x], [y, x]).tolist() == [[0.5, 0.0]]
    assert CostSpec.sqeuclidean(2).separable and not tab.separable
    with pytest.raises(KeyError):
        tab.matrix([y], [x])


def test_coupling_csv_and_shape(leak_pair):
    mu, nu = leak_pair
    _, pi = ot_bicausal(mu, nu, C2)
    lines = pi.to_csv().strip().splitlines()
    assert lines[0] == "mu_path_index,nu_path_index,weight" and len(lines) == 5
    with pytest.raises(ValueError, match="shape"):
        Coupling(np.ones((3, 3)), pi.mu, pi.nu)


def test_horizon_mismatch_and_cap(leak_pair):
    mu, _ = leak_pair
    with pytest.raises(ValueError, match="horizons"):
        ot_bicausal(mu, ScenarioTree.chain([(0.0,)]), C2)
    A = to_path_measure(mu)
    with pytest.raises(CapExceededError):
        ot_classic(A, A, C2, cap=1)


def test_identical_trees_have_zero_distance():
    for s in range(20):
        a, _ = random_pair(s)
        assert ot_bicausal(a, a, CostSpec.sqeuclidean(a.horizon))[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(0, 200, 7))
def test_bicausal_symmetry_and_lp(seed):
    a, b = random_pair(seed)
    c = CostSpec.sqeuclidean(a.horizon)
    v, pi = ot_bicausal(a, b, c)
    assert ot_bicausal(b, a, c)[0] == pytest.approx(v, abs=1e-12)
    assert pi.is_feasible()
    assert pi.cost(c) == pytest.approx(v, abs=1e-10)
    lp = lp_transport(CouplingConstraintSet("bicausal", to_path_measure(a), to_path_measure(b)), c)[0]
    assert lp == pytest.approx(v, abs=1e-8)


def test_info_leak_pair_small_shift():
    # [DERIVED] classic: pair (0, +-1) with (+-0.1, +-1), cost 0.01. Bicausal: the step-1 shift
    # costs 0.01 and, given y1, X2 = +-1 is fair while Y2 is fixed: 1/2 * 2^2 = 2 more.
    mu = ScenarioTree.from_paths([(0.0, 1.0), (0.0, -1.0)], [0.5, 0.5])
    nu = ScenarioTree.from_paths([(0.1, 1.0), (-0.1, -1.0)], [0.5, 0.5])
    A, B = to_path_measure(mu), to_path_measure(nu)
    classic, pi = ot_classic(A, B, C2)
    assert classic == pytest.approx(0.01)
    assert not validate_causal(pi, "forward")  # y1 reveals x2
    assert ot_bicausal(mu, nu, C2)[0] == pytest.approx(2.01)
    assert lp_transport(CouplingConstraintSet("bicausal", A, B), C2)[0] == pytest.approx(2.01)
