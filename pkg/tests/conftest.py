import numpy as np
import pytest

from tangency_forecast.frontier import MomentEstimate

# Two uncorrelated assets, 20% vol each, returns 10% and 20%, rf 5%.
R1_MEAN = np.array([0.10, 0.20])
R1_COV = np.diag([0.04, 0.04])
R1_RF = 0.05


@pytest.fixture
def r1():
    return MomentEstimate(R1_MEAN, R1_COV)


def random_instance(rng, n, scale=1.0):
    """Random positive-definite covariance and mean with a non-degenerate frontier."""
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    eig = rng.uniform(0.2, 2.0, n) * 0.04 * scale**2
    cov = (q * eig) @ q.T
    cov = 0.5 * (cov + cov.T)
    mean = rng.normal(0.1, 0.1, n) * scale
    return MomentEstimate(mean, cov)


_acceptance = []


def pytest_runtest_makereport(item, call):
    if call.when != "call" or "test_acceptance" not in item.nodeid:
        return
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    _acceptance.append((doc, call.excinfo is None))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for doc, ok in _acceptance:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {doc}")
