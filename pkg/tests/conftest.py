import numpy as np
import pytest

from angular_lt.model import init_model

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_net(seed, d=4, m=3, hidden=(5, 3), bias=False, feature_activation="identity"):
    p = init_model(d, m, hidden, seed=seed, bias=bias, feature_activation=feature_activation)
    return p
