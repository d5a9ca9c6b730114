import numpy as np
import pytest

from ctsp.model import build_instance, make_commuters


def small_instance(n, seed=0, spread=3000.0, n_work=2, capacity=4, delta=600, ratio=0.5, jitter=1800):
    """Compact random instance: homes in a square, a couple of workplaces nearby."""
    rng = np.random.default_rng(seed)
    homes = rng.uniform(0, spread, size=(n, 2))
    works = rng.uniform(spread, 1.5 * spread, size=(n_work, 2))
    work_index = rng.integers(0, n_work, size=n)
    arrivals = 8 * 3600 + rng.integers(-jitter, jitter + 1, size=n)
    departures = 17 * 3600 + rng.integers(-jitter, jitter + 1, size=n)
    commuters, points = make_commuters(homes, works, work_index, arrivals, departures)
    return build_instance(commuters, points, capacity=capacity, delta=delta, detour_ratio=ratio,
                          name=f"small-{n}-{seed}")


@pytest.fixture
def make_instance():
    return small_instance


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}
ACCEPTANCE_COUNT = 11


def pytest_terminal_summary(terminalreporter):
    ran = any(k.startswith("tests/test_acceptance.py") or "test_acceptance.py::" in k
              for k in (getattr(r, "nodeid", "") for v in terminalreporter.stats.values() for r in v))
    if not ran and not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, ACCEPTANCE_COUNT + 1):
        terminalreporter.write_line(ACCEPTANCE.get(k, f"criterion {k:2d}: FAIL - did not complete"))
