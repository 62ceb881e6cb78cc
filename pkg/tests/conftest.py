from __future__ import annotations

import numpy as np
import pytest

from dromo.instances import random_instance
from dromo.mdp import TabularMDP, random_mdp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_mdp(rng) -> TabularMDP:
    return random_mdp(rng, 5, 3, 0.9)


@pytest.fixture
def instance():
    return random_instance(np.random.default_rng(7), 4, 3, f=0.5)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
