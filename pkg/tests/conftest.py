import numpy as np
import pytest

from causal_dro.measures import ScenarioTree

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture
def leak_pair():
    """mu: X1 = +-1 fair, X2 = X1; nu: Y1 = 0, Y2 = +-1 fair."""
    mu = ScenarioTree.from_paths([(1.0, 1.0), (-1.0, -1.0)], [0.5, 0.5])
    nu = ScenarioTree.from_paths([(0.0, 1.0), (0.0, -1.0)], [0.5, 0.5])
    return mu, nu


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record():
    """Store and print the one-line verdict for an acceptance criterion."""
    def put(k: int, ok: bool, detail: str):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[k] = line
        print(line)
    return put
