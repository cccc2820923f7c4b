import itertools

import numpy as np
import pytest

from fsvrptw.instance import bundled, build_time_grid, running_example, sample_customers
from fsvrptw.model import Variable

# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")


@pytest.fixture(scope="session")
def example():
    return running_example()


@pytest.fixture(scope="session")
def X(example):
    """Build variables of the running example from their small integer time labels."""
    sub, grid = example
    times = {}
    for (node, t), lab in grid.labels.items():
        times[(node, lab)] = t

    def make(i, s, j, t):
        i = sub.sink if i == "N" else i
        j = sub.sink if j == "N" else j
        return Variable(i, times[(i, s)], j, times[(j, t)])

    return make


@pytest.fixture(scope="session")
def r101():
    return bundled("R101")


@pytest.fixture(scope="session")
def r201():
    return bundled("R201")


def small_problem(name, n, seed):
    sub = sample_customers(bundled(name), n, seed)
    return sub, build_time_grid(sub)


def all_assignments(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.uint8)


def brute_energy(sub, variables, x, penalties):
    """Objective plus squared coverage and flow residuals, from first principles."""
    p_cov, p_flow = penalties
    ones = [v for v, b in zip(variables, x) if b]
    energy = sum(1 for v in ones if v.i == 0)
    for j in sub.customer_nodes:
        energy += p_cov * (sum(1 for v in ones if v.j == j) - 1) ** 2
    tuples = {v.head for v in variables if v.j in sub.customer_nodes}
    tuples |= {v.tail for v in variables if v.i in sub.customer_nodes}
    for node in tuples:
        inflow = sum(1 for v in ones if v.head == node)
        outflow = sum(1 for v in ones if v.tail == node)
        energy += p_flow * (inflow - outflow) ** 2
    return energy
