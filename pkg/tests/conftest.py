import numpy as np
import pytest

from bclab.dynamics import random_points


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240611))


@pytest.fixture
def points(rng):
    return random_points(rng, 2000)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; all lines are echoed in the terminal summary."""
    def record(label, ok, detail=""):
        _VERDICTS.append(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
