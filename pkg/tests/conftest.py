import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

from freeshape.grid import make_grid


@pytest.fixture
def unit_line():
    return make_grid(1, [1.0], [129])


@pytest.fixture
def box2():
    return make_grid(2, [2.0, 2.0], [65, 65])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def emit(number: int, ok: bool, text: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
