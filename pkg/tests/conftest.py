import numpy as np
import pytest

from causalaid._resources import data_path
from causalaid.graph import load_dag


@pytest.fixture(scope="session")
def somalia_dag():
    return load_dag(data_path("somalia.dag"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line, then assert."""
    def check(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
