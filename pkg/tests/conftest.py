import numpy as np
import pytest
from hypothesis import settings

from mldfm.panel import GroupStructure, simulate_design

settings.register_profile("repo", max_examples=40, deadline=None)
settings.load_profile("repo")

ML2 = GroupStructure((25, 25), 1, (1, 1))


@pytest.fixture
def ml_structure():
    return ML2


@pytest.fixture
def noiseless_ml():
    return simulate_design(ML2, 50, c=0.0, seed=11)


@pytest.fixture
def noisy_ml():
    return simulate_design(ML2, 50, seed=5)


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
