import numpy as np
import pytest

from locality_jsq.core_model import SystemParams

from oracles import BENCH

ACCEPTANCE_LINES = []


@pytest.fixture
def bench():
    return SystemParams(**BENCH)


@pytest.fixture
def bench_complete():
    kw = dict(BENCH, p=np.ones((2, 3)))
    return SystemParams(**kw)


@pytest.fixture
def homog():
    return SystemParams(d=2, lam=0.7, xi=1.0, w=[1.0], v=[1.0], u=[1.0], p=[[1.0]])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
