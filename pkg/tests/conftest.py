import numpy as np
import pytest

from epicontrol.incidence import IncidenceNet

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"CRITERION {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def random_inputs(rng, size):
    return np.column_stack([
        rng.uniform(0.2, 1.0, size),
        rng.uniform(1e-3, 0.3, size),
        rng.uniform(0.1, 1.0, size),
        rng.uniform(0.075, 0.9, size),
        np.exp(rng.uniform(np.log(0.1), np.log(10.0), size)),
    ])


@pytest.fixture(scope="session")
def small_net():
    """A quickly trained network with non-trivial weights (not a fidelity model)."""
    rng = np.random.default_rng(11)
    X = random_inputs(rng, 6000)
    y = X[:, 3] * (1.0 + 0.5 * X[:, 2]) / (1.0 + 0.2 * X[:, 4]) + 0.3 * X[:, 0] * X[:, 1]
    return IncidenceNet(epochs=3, random_state=3).fit(X, y)
