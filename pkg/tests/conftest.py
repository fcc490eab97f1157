import numpy as np
import pytest

from dktplus.data import InteractionSequence


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sequences(rng, n, M, t_min=2, t_max=8):
    out = []
    for _ in range(n):
        T = int(rng.integers(t_min, t_max + 1))
        out.append(InteractionSequence(rng.integers(0, M, T), rng.integers(0, 2, T)))
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
