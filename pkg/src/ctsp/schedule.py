"""Route validity and minimum-duration scheduling.

The scheduling constraints are all of the form ``T_v - T_u <= w``: window
bounds against a zero node, travel precedence (an equality when the next stop
is a drop-off, since the car never waits there), and ride limits.  Such a
system is feasible iff its constraint graph has no negative cycle, and the
shortest-path distances give the tightest bounds on every time difference.
That makes the optimum exact without a general LP: the minimum duration is
``-dist(last, first)``, and after fixing that duration the shortest distances
from the zero node are the latest schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lpmip import EQ, GE, LE, LinearProgram, solve_lp
from .model import DirectionView, Route

EPS = 1e-7
INF = float("inf")


@dataclass(frozen=True)
class Schedule:
    times: tuple[float, ...]
    duration: float
    ride_times: dict[int, float]

    def wait_at(self, stops: Sequence[int], view: DirectionView, k: int) -> float:
        """Idle time before serving stop ``k``."""
        if k == 0:
            return 0.0
        u, v = stops[k - 1], stops[k]
        return self.times[k] - (self.times[k - 1] + view.s[u] + view.tau[u][v])


def is_valid(stops: Sequence[int], driver: int, n: int, capacity: int) -> bool:
    """Pairing, precedence, driver endpoints and capacity."""
    if len(stops) < 2 or stops[0] != driver or stops[-1] != n + driver:
        return False
    seen = set()
    load = 0
    for k, u in enumerate(stops):
        if u in seen or not 0 <= u < 2 * n:
            return False
        seen.add(u)
        if u < n:
            load += 1
            if load > capacity:
                return False
        else:
            if u - n not in seen:
                return False
            if u == n + driver and k != len(stops) - 1:
                return False
            load -= 1
    return all((u + n) in seen for u in seen if u < n)


def route_is_valid(route: Route, n: int, capacity: int) -> bool:
    return is_valid(route.stops, route.driver, n, capacity)


def _earliest_pass(stops: Sequence[int], view: DirectionView) -> bool:
    """Cheap necessary check: leave as early as possible, never miss a deadline."""
    a, b, s, tau, n = view.a, view.b, view.s, view.tau, view.n
    u = stops[0]
    t = a[u]
    if t > b[u] + EPS:
        return False
    for v in stops[1:]:
        t = t + s[u] + tau[u][v]
        if v < n and t < a[v]:
            t = a[v]
        if t > b[v] + EPS:
            return False
        u = v
    return True


def _constraint_graph(stops: Sequence[int], view: DirectionView):
    """Dense weight matrix over [zero, stop_0, ..., stop_{k-1}]."""
    a, b, s, tau, L, n = view.a, view.b, view.s, view.tau, view.L, view.n
    k = len(stops)
    m = k + 1
    w = [[INF] * m for _ in range(m)]
    for i in range(m):
        w[i][i] = 0.0
    pos = {}
    for idx, u in enumerate(stops):
        p = idx + 1
        pos[u] = p
        w[0][p] = min(w[0][p], b[u])  # T_u <= b_u
        if u < n:
            w[p][0] = min(w[p][0], -a[u])  # T_u >= a_u
    for idx in range(k - 1):
        u, v = stops[idx], stops[idx + 1]
        g = s[u] + tau[u][v]
        pu, pv = idx + 1, idx + 2
        w[pv][pu] = min(w[pv][pu], -g)  # T_v - T_u >= g
        if v >= n:
            w[pu][pv] = min(w[pu][pv], g)  # and <= g at drop-offs
    for u, p in pos.items():
        if u < n and (u + n) in pos:
            q = pos[u + n]
            w[p][q] = min(w[p][q], L[u] + s[u])
    return w


def _floyd(w):
    m = len(w)
    for k in range(m):
        wk = w[k]
        for i in range(m):
            wik = w[i][k]
            if wik == INF:
                continue
            wi = w[i]
            for j in range(m):
                c = wik + wk[j]
                if c < wi[j]:
                    wi[j] = c
    return all(w[i][i] >= -EPS for i in range(m))


def feasible(stops: Sequence[int], view: DirectionView) -> Schedule | None:
    """Minimum-duration schedule of a valid stop sequence, or None if infeasible.

    Among schedules of minimum duration, the latest one is returned.
    """
    if not _earliest_pass(stops, view):
        return None
    w = _constraint_graph(stops, view)
    if not _floyd(w):
        return None
    k = len(stops)
    first, last = 1, k
    duration = -w[last][first]
    # pin T_last - T_first <= duration, then take latest times from the zero node
    times = []
    for p in range(1, k + 1):
        t = min(w[0][p], w[0][first] + duration + w[last][p])
        times.append(t)
    n = view.n
    pos = {u: i for i, u in enumerate(stops)}
    rides = {u: times[pos[u + n]] - (times[pos[u]] + view.s[u]) for u in stops if u < n}
    return Schedule(tuple(times), times[-1] - times[0], rides)


def is_feasible(stops: Sequence[int], view: DirectionView) -> bool:
    if not _earliest_pass(stops, view):
        return False
    return _floyd(_constraint_graph(stops, view))


def schedule_lp(stops: Sequence[int], view: DirectionView) -> LinearProgram:
    """The scheduling problem as a plain LP over one free time variable per stop."""
    a, b, s, tau, L, n = view.a, view.b, view.s, view.tau, view.L, view.n
    k = len(stops)
    c = np.zeros(k)
    c[-1], c[0] = 1.0, -1.0
    rows = []

    def row(coefs: dict[int, float], sense: str, rhs: float):
        r = np.zeros(k)
        for i, v in coefs.items():
            r[i] += v
        rows.append((r, sense, rhs))

    pos = {u: i for i, u in enumerate(stops)}
    for i, u in enumerate(stops):
        if u < n:
            row({i: 1.0}, GE, a[u])
        row({i: 1.0}, LE, b[u])
    for i in range(k - 1):
        u, v = stops[i], stops[i + 1]
        g = s[u] + tau[u][v]
        row({i + 1: 1.0, i: -1.0}, EQ if v >= n else GE, g)
    for u in stops:
        if u < n:
            row({pos[u + n]: 1.0, pos[u]: -1.0}, LE, L[u] + s[u])
    lb = np.full(k, -np.inf)
    return LinearProgram.from_rows(c, rows, lb=lb, ub=np.full(k, np.inf))


def feasible_by_lp(stops: Sequence[int], view: DirectionView) -> float | None:
    """Minimum duration by solving the LP directly (slow; used as a cross-check)."""
    sol = solve_lp(schedule_lp(stops, view))
    return sol.objective if sol.optimal else None
