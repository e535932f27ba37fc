import numpy as np
import pytest

from aaoreg.grid_pde import Grid1D, ProblemInstance

_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the verdict of an acceptance criterion for the end-of-run summary."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_instance(n=20, b=None):
    g = Grid1D(n)
    b = np.sin(np.pi * g.nodes) if b is None else b
    return ProblemInstance(g, 0.0, b, g.zeros())


def dense_laplacian(g):
    n = g.n_interior
    return (2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)) / g.h**2
