import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from ctsp.model import INBOUND, OUTBOUND, DirectionView
from ctsp.schedule import feasible, feasible_by_lp, is_feasible, is_valid
from conftest import small_instance


def valid_by_predicate(stops, driver, n, K):
    """Direct restatement of route validity, used as an oracle."""
    if len(set(stops)) != len(stops) or stops[0] != driver or stops[-1] != n + driver:
        return False
    riders = {u for u in stops if u < n}
    if {u - n for u in stops if u >= n} != riders:
        return False
    if any(stops.index(u) > stops.index(u + n) for u in riders):
        return False
    onboard = [sum(1 for u in stops[: k + 1] if u < n) - sum(1 for u in stops[: k + 1] if u >= n)
               for k in range(len(stops))]
    return max(onboard) <= K


def line_view(a, b, tau, s=0.0, L=None, dist=None):
    """View with n riders from explicit per-node windows and travel matrix."""
    n = len(a) // 2
    L = L or [float("inf")] * n
    return DirectionView(
        direction=INBOUND, n=n, a=list(a), b=list(b), s=[s] * (2 * n),
        L=list(L) + [float("inf")] * n, kappa=[1] * n + [0] * n,
        tau=[list(r) for r in tau], dist=[list(r) for r in tau], locations=list(range(2 * n)),
    )


def test_two_trip_route_valid():
    # nodes: 0,1 pickups; 2,3 drop-offs; driver is commuter 1
    assert is_valid([1, 0, 2, 3], driver=1, n=2, capacity=2)


def test_duplicate_visit_invalid():
    assert not is_valid([0, 2, 0, 2], driver=0, n=2, capacity=4)


def test_single_stop_invalid():
    assert not is_valid([0], driver=0, n=1, capacity=4)


def test_capacity_respected():
    assert not is_valid([0, 1, 2, 3, 4, 5], driver=0, n=3, capacity=2)
    assert is_valid([0, 1, 4, 2, 5, 3], driver=0, n=3, capacity=2)


@pytest.mark.parametrize("K", [1, 2, 3])
def test_validity_matches_predicate_on_all_permutations(K):
    n = 3
    for driver in range(n):
        for size in range(1, 7):
            for perm in itertools.permutations(range(2 * n), size):
                assert is_valid(list(perm), driver, n, K) == valid_by_predicate(list(perm), driver, n, K)


def test_single_trip_direct_time():
    view = line_view([0, 0], [5000, 9000], [[0, 1200], [1200, 0]])
    sch = feasible([0, 1], view)
    assert sch.duration == 1200
    # latest departure that still meets the drop-off deadline
    assert sch.times == (5000, 6200)


def test_single_trip_deadline_pulls_start():
    view = line_view([0, 0], [5000, 5800], [[0, 1200], [1200, 0]])
    sch = feasible([0, 1], view)
    assert sch.times == (4600, 5800)


def test_forced_wait_breaks_ride_limit():
    # driver 0 picks up 1 who is only available from t=1000, then both drop.
    tau = [[0, 100, 500, 500], [100, 0, 500, 500], [500, 500, 0, 0], [500, 500, 0, 0]]
    a = [0, 1000, 0, 0]
    b = [100, 2000, 5000, 5000]
    view = line_view(a, b, tau, L=[1000, 1000])
    stops = [0, 1, 3, 2]
    assert feasible(stops, view) is None
    assert feasible_by_lp(stops, view) is None
    # loosening the driver's ride limit restores feasibility
    view2 = line_view(a, b, tau, L=[2000, 1000])
    assert feasible(stops, view2) is not None
    assert feasible_by_lp(stops, view2) == pytest.approx(feasible(stops, view2).duration)


def random_valid_route(rng, n, K):
    k = int(rng.integers(1, min(K, n) + 1))
    members = [int(v) for v in rng.choice(n, size=k, replace=False)]
    driver = members[0]
    others = members[1:]
    while True:
        seq = others + [o + n for o in others]
        rng.shuffle(seq)
        stops = [driver] + seq + [driver + n]
        if is_valid(stops, driver, n, K):
            return stops


@pytest.mark.parametrize("seed", range(5))
def test_matches_lp_on_random_routes(seed):
    inst = small_instance(8, seed=seed, jitter=900)
    rng = np.random.default_rng(100 + seed)
    n_feasible = 0
    for trial in range(2000):
        view = inst.view(INBOUND if trial % 2 else OUTBOUND)
        stops = random_valid_route(rng, inst.n, 4)
        sch = feasible(stops, view)
        ref = feasible_by_lp(stops, view)
        assert (sch is None) == (ref is None)
        if sch is not None:
            n_feasible += 1
            assert sch.duration == pytest.approx(ref, abs=1e-6)
            assert is_feasible(stops, view)
    assert n_feasible > 50


def check_schedule(stops, view, sch):
    n = view.n
    T = sch.times
    for k, u in enumerate(stops):
        assert T[k] <= view.b[u] + 1e-6
        if u < n:
            assert T[k] >= view.a[u] - 1e-6
        if k:
            p = stops[k - 1]
            gap = T[k] - T[k - 1] - view.s[p] - view.tau[p][u]
            assert gap >= -1e-6
            if u >= n:
                assert abs(gap) <= 1e-6
    for u, ride in sch.ride_times.items():
        assert ride <= view.L[u] + 1e-6
        assert ride <= view.b[u + n] - view.a[u] + 1e-6
    assert sch.duration == pytest.approx(T[-1] - T[0])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from([INBOUND, OUTBOUND]), st.sampled_from([0.0, 30.0]))
def test_schedule_properties(seed, direction, service):
    inst = small_instance(6, seed=seed % 97, jitter=900).with_params(service=service)
    view = inst.view(direction)
    rng = np.random.default_rng(seed)
    stops = random_valid_route(rng, inst.n, 4)
    sch = feasible(stops, view)
    ref = feasible_by_lp(stops, view)
    assert (sch is None) == (ref is None)
    if sch is None:
        return
    assert sch.duration == pytest.approx(ref, abs=1e-6)
    check_schedule(stops, view, sch)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 900), st.floats(0, 1.0))
def test_widening_never_breaks_feasibility(seed, extra, ride_extra):
    inst = small_instance(6, seed=seed % 89, jitter=900)
    view = inst.inbound
    rng = np.random.default_rng(seed)
    stops = random_valid_route(rng, inst.n, 4)
    assume(feasible(stops, view) is not None)
    wide = DirectionView(
        direction=view.direction, n=view.n,
        a=[x - extra for x in view.a], b=[x + extra for x in view.b], s=view.s,
        L=[x * (1 + ride_extra) for x in view.L], kappa=view.kappa, tau=view.tau,
        dist=view.dist, locations=view.locations,
    )
    assert feasible(stops, wide) is not None
