from __future__ import annotations

import numpy as np
import pytest

from folionet.synth import planted_market
from helpers import market_pipeline


@pytest.fixture(scope="session")
def planted_small():
    """3 groups x 60 investors; cheap enough for many unit tests."""
    return market_pipeline(planted_market(n_groups=3, group_size=60, stocks=20, pool_size=4, seed=11))


@pytest.fixture
def two_triangles():
    w = np.zeros((6, 6))
    for a, b in [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)]:
        w[a, b] = w[b, a] = 1.0
    return w


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for an acceptance criterion, then assert it."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> None:
        store[number] = (bool(ok), detail)
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        ok, detail = store[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
