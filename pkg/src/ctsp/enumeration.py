"""Exhaustive route enumeration: the cheapest feasible route per (rider set, driver).

Feasibility is hereditary when travel times satisfy the triangle inequality:
dropping a non-driver rider from a feasible route leaves a feasible route
(shift the drop-offs that follow the removed stop earlier, up to the next
pickup, which then absorbs the slack as waiting).  So a rider set ``q`` with
driver ``c`` is only searched when every ``q - {i}`` (``i != c``) is feasible
with driver ``c``, in the usual level-wise candidate generation style.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .model import DirectionView, Instance, Route
from .schedule import EPS, feasible

log = logging.getLogger(__name__)

INF = float("inf")


@dataclass
class RoutePool:
    direction: str
    n: int
    routes: list[Route] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.routes)

    def __iter__(self) -> Iterator[Route]:
        return iter(self.routes)

    def keys(self) -> set[tuple[int, frozenset]]:
        return {(r.driver, r.riders(self.n)) for r in self.routes}

    def by_key(self) -> dict[tuple[int, frozenset], Route]:
        out = {}
        for r in self.routes:
            k = (r.driver, r.riders(self.n))
            if k not in out or r.distance < out[k].distance:
                out[k] = r
        return out

    def count_by_size(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.routes:
            k = len(r.riders(self.n))
            out[k] = out.get(k, 0) + 1
        return dict(sorted(out.items()))

    def max_distance(self) -> int:
        return max((r.distance for r in self.routes), default=0)

    def to_jsonl(self, path: str | Path, append: bool = False) -> None:
        with open(path, "a" if append else "w") as fh:
            for r in self.routes:
                fh.write(json.dumps({
                    "direction": r.direction,
                    "driver": r.driver,
                    "stops": list(r.stops),
                    "riders": sorted(r.riders(self.n)),
                    "distance": r.distance,
                }) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def valid_orderings(members: Sequence[int], driver: int, n: int, capacity: int) -> Iterator[tuple[int, ...]]:
    """Every valid stop sequence over ``members`` with the given driver, in lexicographic order."""
    others = sorted(m for m in members if m != driver)
    stops = [driver]

    def rec(pending: list[int], onboard: list[int], load: int):
        if not pending and not onboard:
            yield tuple(stops) + (n + driver,)
            return
        for v in sorted(pending + [n + i for i in onboard]):
            if v < n:
                if load + 1 > capacity:
                    continue
                stops.append(v)
                yield from rec([p for p in pending if p != v], onboard + [v], load + 1)
            else:
                stops.append(v)
                yield from rec(pending, [o for o in onboard if o != v - n], load - 1)
            stops.pop()

    if capacity >= 1:
        yield from rec(others, [], 1)


def best_routes(members: Sequence[int], driver: int, view: DirectionView, capacity: int,
                keep_all: bool = False) -> list[Route]:
    """Depth-first search for the minimum-distance feasible ordering.

    Partial sequences are cut when their distance already reaches the best
    complete route, when the earliest possible arrival misses a deadline, or
    when a rider's wait-free ride time already exceeds the ride limit.
    With ``keep_all`` every feasible ordering is returned instead.
    """
    n = view.n
    a, b, s, tau, dist, L = view.a, view.b, view.s, view.tau, view.dist, view.L
    others = sorted(m for m in members if m != driver)
    if len(others) + 1 > capacity or a[driver] > b[driver] + EPS:
        return []
    last = n + driver
    stops = [driver]
    wait_free = {driver: 0.0}  # cumulative wait-free time at each pickup
    best = [INF]
    found: list[Route] = []

    def record(seq: list[int], d: int) -> None:
        sch = feasible(seq, view)
        if sch is None:
            return
        route = Route(view.direction, driver, tuple(seq), d, sch.times)
        if keep_all:
            found.append(route)
        elif d < best[0]:
            best[0] = d
            found[:] = [route]

    def rec(u: int, t: float, w: float, d: int, pending: list[int], onboard: list[int], load: int):
        if not pending and not onboard:
            d2 = d + dist[u][last]
            if not keep_all and d2 >= best[0]:
                return
            g = s[u] + tau[u][last]
            if t + g > b[last] + EPS or w + g - s[driver] > L[driver] + EPS:
                return
            stops.append(last)
            record(stops, d2)
            stops.pop()
            return
        for v in sorted(pending + [n + i for i in onboard]):
            d2 = d + dist[u][v]
            if not keep_all and d2 >= best[0]:
                continue
            g = s[u] + tau[u][v]
            t2 = t + g
            w2 = w + g
            if v < n:
                if load + 1 > capacity:
                    continue
                if t2 < a[v]:
                    t2 = a[v]
                if t2 > b[v] + EPS:
                    continue
                wait_free[v] = w2
                stops.append(v)
                rec(v, t2, w2, d2, [p for p in pending if p != v], onboard + [v], load + 1)
            else:
                i = v - n
                if t2 > b[v] + EPS or w2 - wait_free[i] - s[i] > L[i] + EPS:
                    continue
                stops.append(v)
                rec(v, t2, w2, d2, pending, [o for o in onboard if o != i], load - 1)
            stops.pop()

    rec(driver, a[driver], 0.0, 0, others, [], 1)
    return found


# -- level-wise driver -------------------------------------------------------

_WORKER: dict = {}


def _init_worker(view: DirectionView, capacity: int, keep_all: bool) -> None:
    _WORKER.update(view=view, capacity=capacity, keep_all=keep_all)


def _search_chunk(chunk: list[tuple[tuple[int, ...], int]]) -> list[tuple[tuple[int, ...], int, list[Route]]]:
    view, capacity, keep_all = _WORKER["view"], _WORKER["capacity"], _WORKER["keep_all"]
    return [(q, c, best_routes(q, c, view, capacity, keep_all)) for q, c in chunk]


def _candidates(prev: set[tuple[tuple[int, ...], int]], universe: Sequence[int]) -> list[tuple[tuple[int, ...], int]]:
    out = set()
    for q, c in prev:
        qs = set(q)
        for j in universe:
            if j in qs:
                continue
            new = tuple(sorted(qs | {j}))
            if all((tuple(x for x in new if x != i), c) in prev for i in new if i != c):
                out.add((new, c))
    return sorted(out)


def enumerate_routes(
    instance: Instance,
    direction: str,
    trips: Iterable[int] | None = None,
    capacity: int | None = None,
    keep_all_feasible: bool = False,
    workers: int = 1,
    chunk_size: int = 256,
) -> RoutePool:
    """All cheapest feasible routes with up to ``capacity`` riders."""
    view = instance.view(direction)
    K = instance.capacity if capacity is None else capacity
    n = view.n
    universe = sorted(range(n) if trips is None else set(trips))
    pool = RoutePool(direction, n)
    started = time.perf_counter()
    searched = {}

    level: set[tuple[tuple[int, ...], int]] = set()
    for i in universe:
        found = best_routes((i,), i, view, K, keep_all_feasible)
        if not found:
            log.warning("direct trip of commuter %d is infeasible in %s", i, direction)
            continue
        pool.routes.extend(found)
        level.add(((i,), i))
    searched[1] = len(universe)

    executor = ProcessPoolExecutor(workers, initializer=_init_worker,
                                   initargs=(view, K, keep_all_feasible)) if workers > 1 else None
    try:
        for k in range(2, K + 1):
            cand = _candidates(level, universe)
            searched[k] = len(cand)
            if not cand:
                break
            if executor is None:
                results = [(q, c, best_routes(q, c, view, K, keep_all_feasible)) for q, c in cand]
            else:
                chunks = [cand[i:i + chunk_size] for i in range(0, len(cand), chunk_size)]
                results = [r for part in executor.map(_search_chunk, chunks) for r in part]
            level = set()
            for q, c, found in results:
                if found:
                    pool.routes.extend(found)
                    level.add((q, c))
            log.debug("%s level %d: %d candidates, %d feasible", direction, k, len(cand), len(level))
    finally:
        if executor is not None:
            executor.shutdown()

    pool.routes.sort(key=lambda r: (len(r.stops), r.driver, tuple(sorted(r.riders(n))), r.stops))
    pool.stats = {
        "routes_by_size": pool.count_by_size(),
        "candidates_by_size": searched,
        "seconds": time.perf_counter() - started,
    }
    return pool


def enumerate_both(instance: Instance, capacity: int | None = None, **kw) -> dict[str, RoutePool]:
    from .model import DIRECTIONS

    return {d: enumerate_routes(instance, d, capacity=capacity, **kw) for d in DIRECTIONS}
