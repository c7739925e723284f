import numpy as np
import pytest

from ctmdp.average import vanishing_discount
from ctmdp.model import CtmdpModel, GeneratorRow
from ctmdp.models import UpgradeQueueParams, build_mm1, build_upgrade_queue, ps_policy

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def uq():
    return build_upgrade_queue(UpgradeQueueParams())


@pytest.fixture(scope="session")
def ps(uq):
    return ps_policy(uq)


@pytest.fixture(scope="session")
def uq_avg(uq):
    return vanishing_discount(uq)


@pytest.fixture(scope="session")
def mm1():
    return build_mm1(1.0, 2.0, 1.0, 60)


@pytest.fixture(scope="session")
def mm1_avg(mm1):
    return vanishing_discount(mm1)


def explicit_model(rates, costs, meta=None):
    """Model from ``rates[i][a] = [(j, rate), ...]`` and ``costs[i][a]``."""
    n = len(rates)
    gen, cost = {}, {}
    for i in range(n):
        for a, row in enumerate(rates[i]):
            gen[(i, a)] = GeneratorRow.from_entries(i, row)
            cost[(i, a)] = float(costs[i][a])
    actions = [list(range(len(rates[i]))) for i in range(n)]
    return CtmdpModel(np.arange(n).reshape(-1, 1), actions, gen, cost, meta or {"kind": "explicit"})


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
