import numpy as np
import pytest
import scipy.sparse as sp

from softhad.graph import SimilarityGraph


def random_graph(rng, n, density=0.1, isolated=0):
    """Symmetric random graph with weights in (0, 1]; the last ``isolated``
    nodes get no edges."""
    A = sp.random(n, n, density=density, random_state=rng, data_rvs=lambda m: rng.uniform(0.01, 1.0, m))
    A = sp.triu(A, k=1)
    W = (A + A.T).tolil()
    for i in range(n - isolated, n):
        W[i, :] = 0
        W[:, i] = 0
    return SimilarityGraph(W.tocsr(), sigma=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}
DETAILS = {}


@pytest.fixture
def detail(request):
    """Record measured values shown next to the criterion's pass/fail line."""

    def note(text):
        DETAILS[request.node.name] = text

    return note


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in ACCEPTANCE.items():
        line = f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}"
        if name in DETAILS:
            line += f"  ({DETAILS[name]})"
        terminalreporter.write_line(line)
