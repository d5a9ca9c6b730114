"""Column pricing: per-driver shortest paths with resource constraints.

For a driver ``d`` in one direction the graph has the usual ``2n`` nodes
(pickups ``0..n-1``, drop-offs ``n..2n-1``).  Edge costs are set so that a
``d -> n+d`` path costs exactly the reduced cost of the route it spells:

    out of d:          (w - nu) * (fixed + lam * dist) - pi_d -/+ sigma_d - mu [- phi_d]
    out of pickup i:   (w - nu) * lam * dist - pi_i
    out of a drop-off: (w - nu) * lam * dist

with ``w`` the cost weight (1, or 0 for a Farkas ray) and ``lam`` the
distance weight of the master.

A pickup is refused when the rider was already served, and a route carries at
most ``K`` riders in total, which is the route space exhaustive enumeration
covers.  ``SearchOptions(elementary=False)`` relaxes the first rule to "not
currently onboard", letting ride limits alone rule out repeat visits.

The labeling search ignores waiting when it checks ride limits, so its
answer can still be infeasible once waits are scheduled.  ``price_driver``
then forbids that exact path and searches again.  Because every path starts
at ``d`` and ``d`` is never re-entered, a forbidden path can only match a
label's path from its first edge on; the per-path progress counter is
therefore "path is a prefix of f" (with length implied), kept as a bitmask.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .master import Duals
from .model import INBOUND, OUTBOUND, DirectionView, Instance, Route
from .schedule import EPS, feasible

log = logging.getLogger(__name__)

INF = math.inf


@dataclass
class PricedRoute:
    route: Route
    reduced_cost: float
    feasible: bool = True


class Label:
    __slots__ = ("cost", "time", "node", "onboard", "picked", "load", "acc", "stamps", "live",
                 "parent", "alive", "nedges", "prior")

    def __init__(self, cost, time_, node, onboard, picked, load, acc, stamps, live, parent, nedges, prior=()):
        self.cost = cost
        self.time = time_
        self.node = node
        self.onboard = onboard  # bitmask of riders in the car
        self.picked = picked  # bitmask of riders picked up so far
        self.load = load
        self.acc = acc  # wait-free elapsed time since leaving the start
        self.stamps = stamps  # ((rider, acc at pickup), ...) for riders onboard
        self.live = live  # bitmask of forbidden paths this path is a prefix of
        self.parent = parent
        self.alive = True
        self.nedges = nedges
        self.prior = prior  # wait-free ride times of dropped riders (only kept for repeat visits)

    def wait_free(self, rider: int) -> float:
        for r, st in self.stamps:
            if r == rider:
                return self.acc - st
        raise KeyError(rider)

    def path(self) -> list[int]:
        out = []
        lab = self
        while lab is not None:
            out.append(lab.node)
            lab = lab.parent
        return out[::-1]

    def __repr__(self) -> str:
        return f"Label(node={self.node}, cost={self.cost:.3f}, time={self.time}, onboard={self.onboard:b})"


@dataclass
class PricingGraph:
    """Per (direction, driver) graph with tightened windows and surviving edges."""

    direction: str
    driver: int
    n: int
    capacity: int
    a: list[float]
    b: list[float]
    s: list[float]
    L: list[float]
    kappa: list[int]
    tau: list[list[int]]
    dist: list[list[int]]
    edges: set[tuple[int, int]]
    forbidden: list[tuple[int, ...]] = field(default_factory=list)
    removed: dict[str, int] = field(default_factory=dict)
    banned: frozenset = frozenset()
    node_term: list[float] = field(default_factory=list)
    coef: float = 1.0
    succ: list[list[tuple[int, float]]] = field(default_factory=list)
    view: DirectionView | None = None

    @property
    def source(self) -> int:
        return self.driver

    @property
    def sink(self) -> int:
        return self.n + self.driver

    def active_edges(self) -> set[tuple[int, int]]:
        return self.edges - self.banned if self.banned else self.edges

    def edge_cost(self, u: int, v: int) -> float:
        return self.coef * self.dist[u][v] + self.node_term[u]

    def path_cost(self, stops: Sequence[int]) -> float:
        return sum(self.edge_cost(u, v) for u, v in zip(stops[:-1], stops[1:]))

    def set_costs(self, duals: Duals, fixed: float, distance_weight: float = 1.0) -> "PricingGraph":
        n, d = self.n, self.driver
        scale = duals.cost_weight - duals.nu
        if scale <= 0 and not duals.farkas:
            log.debug("objective-cut dual %.6g makes distance costs non-positive", duals.nu)
        self.coef = scale * distance_weight
        pi = duals.pi_in if self.direction == INBOUND else duals.pi_out
        term = [0.0] * (2 * n)
        for i in range(n):
            term[i] = -float(pi[i])
        if self.direction == INBOUND:
            term[d] += scale * fixed - float(duals.sigma[d]) - duals.mu - float(duals.phi[d])
        else:
            term[d] += scale * fixed + float(duals.sigma[d]) - duals.mu
        self.node_term = term
        self._rebuild_succ()
        return self

    def set_banned(self, banned: Iterable[tuple[int, int]]) -> None:
        banned = frozenset(banned)
        if banned != self.banned:
            self.banned = banned
            if self.node_term:
                self._rebuild_succ()

    def _rebuild_succ(self) -> None:
        succ: list[list[tuple[int, float]]] = [[] for _ in range(2 * self.n)]
        for u, v in sorted(self.active_edges()):
            succ[u].append((v, self.edge_cost(u, v)))
        self.succ = succ

    def forbid(self, stops: Sequence[int]) -> None:
        stops = tuple(stops)
        if stops not in self.forbidden:
            self.forbidden.append(stops)

    def shortcut_safe(self) -> bool:
        """Whether skipping drop-offs can never make a completion costlier or unavailable.

        Needs non-negative distance costs and no edges removed beyond the
        rules that only use wait-free reasoning (the probe rule and branching
        can delete the shortcut edge itself).
        """
        return self.coef >= 0 and not self.banned and self.removed.get("probe", 0) == 0

    def dump(self) -> str:
        """Plain edge list: ``u v cost`` per line."""
        return "\n".join(f"{u} {v} {c:.6f}" for u in range(2 * self.n) for v, c in self.succ[u])


# -- construction ------------------------------------------------------------

def base_graph(view: DirectionView, driver: int, capacity: int) -> PricingGraph:
    """Complete graph with raw windows; drop-offs get no lower bound (they are never waited at)."""
    n = view.n
    a = [float(view.a[i]) for i in range(n)] + [-INF] * n
    edges = {(u, v) for u in range(2 * n) for v in range(2 * n) if u != v}
    return PricingGraph(view.direction, driver, n, capacity, a, [float(x) for x in view.b], list(view.s),
                        list(view.L), list(view.kappa), view.tau, view.dist, edges, view=view)


def tighten_windows(g: PricingGraph) -> PricingGraph:
    """Shrink windows in four sequential passes (drop-off and pickup deadlines, then starts)."""
    n, d = g.n, g.driver
    a, b, s, tau = g.a, g.b, g.s, g.tau
    sink = n + d
    for j in range(n, 2 * n):
        if j != sink:
            b[j] = min(b[j], b[sink] - s[j] - tau[j][sink])
    for i in range(n):
        if i != d:
            b[i] = min(b[i], b[n + i] - s[i] - tau[i][n + i])
    for i in range(n):
        if i != d:
            a[i] = max(a[i], a[d] + s[d] + tau[d][i])
    for j in range(n, 2 * n):
        if j != sink:
            a[j] = max(a[j], a[j - n] + s[j - n] + tau[j - n][j])
    return g


class ProbeCache:
    """Memoized full feasibility of four-stop probes (driver independent)."""

    def __init__(self, view: DirectionView):
        self.view = view
        self._memo: dict[tuple[int, ...], bool] = {}

    def __call__(self, stops: tuple[int, ...]) -> bool:
        r = self._memo.get(stops)
        if r is None:
            r = feasible(stops, self.view) is not None
            self._memo[stops] = r
        return r


def eliminate_edges(g: PricingGraph, probe: ProbeCache | None = None) -> PricingGraph:
    n, d, K = g.n, g.driver, g.capacity
    a, b, s, tau, L, kappa = g.a, g.b, g.s, g.tau, g.L, g.kappa
    E = g.edges
    removed = {}

    def drop(rule: str, pairs: Iterable[tuple[int, int]]) -> None:
        before = len(E)
        E.difference_update(pairs)
        removed[rule] = removed.get(rule, 0) + before - len(E)

    sink = n + d
    others = [i for i in range(n) if i != d]
    # (a) driver starts and ends the route
    drop("driver", [e for i in others for e in
                    ((d, n + i), (i, d), (i, sink), (n + i, d), (sink, i), (sink, n + i))])
    # (b) no drop-off before its own pickup
    drop("precedence", [(n + i, i) for i in range(n)])
    # (c) pairs that cannot share the car
    drop("capacity", [e for i in range(n) for j in range(n) if i != j and kappa[i] + kappa[j] > K
                      for e in ((i, j), (j, i), (i, n + j), (j, n + i), (n + i, n + j), (n + j, n + i))])
    # (d) windows, including nodes whose window became empty
    drop("window", [(u, v) for u, v in E if a[u] + s[u] + tau[u][v] > b[v] + EPS or a[v] > b[v] + EPS])
    # (e) ride limit through an intermediate stop
    bad = []
    for i in range(n):
        for j in range(2 * n):
            if j in (i, n + i):
                continue
            if tau[i][j] + s[j] + tau[j][n + i] > L[i] + EPS:
                bad.append((i, j))
                bad.append((j, n + i))
    drop("ride", bad)
    # (f) four-stop probes with waits scheduled
    if probe is not None:
        bad = []
        for u, v in list(E):
            if u < n and v >= n and v != n + u:  # (i, n+j)
                i, j = u, v - n
                if not probe((j, i, n + j, n + i)):
                    bad.append((u, v))
            elif u >= n and v < n and v != u - n:  # (n+i, j)
                i, j = u - n, v
                if not probe((i, n + i, j, n + j)):
                    bad.append((u, v))
            elif u < n and v < n:  # (i, j)
                i, j = u, v
                if not probe((i, j, n + i, n + j)) and not probe((i, j, n + j, n + i)):
                    bad.append((u, v))
            elif u >= n and v >= n:  # (n+i, n+j)
                i, j = u - n, v - n
                if not probe((i, j, n + i, n + j)) and not probe((j, i, n + i, n + j)):
                    bad.append((u, v))
        drop("probe", bad)
    for k, v in removed.items():
        g.removed[k] = g.removed.get(k, 0) + v
    return g


def build_graph(instance: Instance, driver: int, direction: str, duals: Duals | None = None,
                fixed: float | None = None, distance_weight: float = 1.0, tighten: bool = True,
                eliminate: bool = True, capacity: int | None = None,
                probe: ProbeCache | None = None) -> PricingGraph:
    view = instance.view(direction)
    K = instance.capacity if capacity is None else capacity
    g = base_graph(view, driver, K)
    if tighten:
        tighten_windows(g)
    if eliminate:
        eliminate_edges(g, probe if probe is not None else ProbeCache(view))
    if duals is None:
        duals = Duals.zeros(instance.n)
    if fixed is None:
        from .master import fixed_cost_bound

        fixed = fixed_cost_bound(instance)
    return g.set_costs(duals, fixed, distance_weight)


# -- labeling ----------------------------------------------------------------

@dataclass
class SearchOptions:
    dominance: bool = True
    prune: bool = True
    elementary: bool = True
    label_limit: int | None = None
    deadline: float | None = None


@dataclass
class SearchStats:
    created: int = 0
    dominated: int = 0
    pruned: int = 0
    extended: int = 0
    runs: int = 0
    forbidden: int = 0


def dominates(la: Label, lb: Label, graph: PricingGraph | None = None) -> bool:
    """Whether ``la`` can replace ``lb`` at the same node.

    Without a graph this is the plain rule: cost, time, onboard subset,
    wait-free ride times of ``la``'s riders, forbidden-path progress, and
    no more riders served than ``lb`` (the per-route rider cap).
    With a graph two extra guards keep the search exact: a rider ``la``
    already served must be out of reach for ``lb`` too, and a strict onboard
    subset is only accepted when skipping drop-offs is known to be safe.
    """
    if la.cost > lb.cost + 1e-9 or la.time > lb.time + EPS:
        return False
    if la.onboard & ~lb.onboard or la.picked.bit_count() > lb.picked.bit_count():
        return False
    if la.live & ~lb.live:
        return False
    for r, st in la.stamps:
        if la.acc - st > lb.wait_free(r) + EPS:
            return False
    if graph is None:
        return True
    if la.onboard != lb.onboard and not graph.shortcut_safe():
        return False
    return _served_unreachable(la, lb, graph)


def _served_unreachable(la: Label, lb: Label, graph: PricingGraph) -> bool:
    extra = la.picked & ~lb.picked
    if extra:
        l = lb.node
        t = lb.time + graph.s[l]
        j = 0
        while extra:
            if extra & 1 and t + graph.tau[l][j] <= graph.b[j] + EPS:
                return False
            extra >>= 1
            j += 1
    return True


def _reach(g: PricingGraph, node: int, t: float, acc: float, stamps, route: Sequence[int]) -> bool:
    """Wait-free check of visiting ``route`` from ``node``: deadlines and the dropped riders' limits."""
    n = g.n
    s, tau, b, L = g.s, g.tau, g.b, g.L
    u = node
    for v in route:
        step = s[u] + tau[u][v]
        t += step
        acc += step
        if t > b[v] + EPS:
            return False
        r = v - n
        for q, st in stamps:
            if q == r:
                if acc - st - s[r] > L[r] + EPS:
                    return False
                break
        u = v
    return True


def post_feasibility_prune(label: Label, g: PricingGraph) -> bool:
    """True to keep the label; drops it when its passengers cannot all be delivered.

    Checks each passenger alone and each pair in both orders, then the
    driver's own drop-off, using wait-free times only.
    """
    n, d = g.n, g.driver
    sink = n + d
    riders = [r for r, _ in label.stamps if r != d]
    if not riders:
        return True
    node, t, acc, stamps = label.node, label.time, label.acc, label.stamps
    for i in riders:
        if not _reach(g, node, t, acc, stamps, (n + i, sink)):
            return False
    for x in range(len(riders)):
        for y in range(x + 1, len(riders)):
            i, j = riders[x], riders[y]
            if not _reach(g, node, t, acc, stamps, (n + i, n + j, sink)) and \
                    not _reach(g, node, t, acc, stamps, (n + j, n + i, sink)):
                return False
    return True


def _extend(g: PricingGraph, lab: Label, v: int, cost: float, elementary: bool = True) -> Label | None:
    n = g.n
    u = lab.node
    step = g.s[u] + g.tau[u][v]
    t = lab.time + step
    acc = lab.acc + step
    L, s = g.L, g.s
    for r, st in lab.stamps:
        if acc - st - s[r] > L[r] + EPS:
            return None
    prior = lab.prior
    if v < n:
        bit = 1 << v
        if lab.onboard & bit or (elementary and lab.picked & bit):
            return None
        if t < g.a[v]:
            t = g.a[v]
        if t > g.b[v] + EPS:
            return None
        load = lab.load + g.kappa[v]
        if load > g.capacity or (lab.picked | bit).bit_count() > g.capacity:
            return None
        onboard = lab.onboard | bit
        picked = lab.picked | bit
        stamp = acc
        if lab.picked & bit:  # repeat pickup: its wait-free time keeps accumulating
            stamp = acc - dict(prior)[v]
        stamps = lab.stamps + ((v, stamp),)
    else:
        r = v - n
        bit = 1 << r
        if not lab.onboard & bit:
            return None
        if t > g.b[v] + EPS:
            return None
        onboard = lab.onboard & ~bit
        if v == n + g.driver and onboard:
            return None
        picked = lab.picked
        load = lab.load - g.kappa[r]
        stamps = tuple(x for x in lab.stamps if x[0] != r)
        if not elementary:
            prior = tuple(x for x in prior if x[0] != r) + tuple((q, acc - st) for q, st in lab.stamps if q == r)
    live = lab.live
    if live:
        k = lab.nedges + 1
        new_live = 0
        f_id = 0
        m = live
        forb = g.forbidden
        while m:
            if m & 1:
                f = forb[f_id]
                if len(f) > k and f[k] == v:
                    if len(f) == k + 1:
                        return None  # would complete a forbidden path
                    new_live |= 1 << f_id
            m >>= 1
            f_id += 1
        live = new_live
    return Label(lab.cost + cost, t, v, onboard, picked, load, acc, stamps, live, lab, lab.nedges + 1, prior)


def _dominates_fast(la: Label, lb: Label, g: PricingGraph) -> bool:
    """``dominates`` with the onboard-subset and shortcut checks done by the caller."""
    if la.cost > lb.cost + 1e-9 or la.time > lb.time + EPS:
        return False
    if la.picked.bit_count() > lb.picked.bit_count() or la.live & ~lb.live:
        return False
    for r, st in la.stamps:
        if la.acc - st > lb.wait_free(r) + EPS:
            return False
    return _served_unreachable(la, lb, g)


def _beaten(new: Label, groups: dict[int, list[Label]], ob: int, g: PricingGraph, subset_ok: bool) -> bool:
    if not subset_ok:
        return any(_dominates_fast(old, new, g) for old in groups.get(ob, ()))
    for key, labs in groups.items():
        if key & ~ob:
            continue
        for old in labs:
            if _dominates_fast(old, new, g):
                return True
    return False


class SearchTimeout(Exception):
    pass


def rcsp_labels(g: PricingGraph, options: SearchOptions | None = None,
                stats: SearchStats | None = None) -> list[Label]:
    """All surviving labels at the sink (wait times relaxed)."""
    opts = options or SearchOptions()
    st = stats if stats is not None else SearchStats()
    n, d = g.n, g.driver
    sink = n + d
    if not g.node_term:
        raise ValueError("graph has no edge costs; call set_costs first")
    if g.a[d] > g.b[d] + EPS or g.kappa[d] > g.capacity:
        return []
    live0 = (1 << len(g.forbidden)) - 1
    start = Label(0.0, g.a[d], d, 1 << d, 1 << d, g.kappa[d], 0.0, ((d, 0.0),), live0, None, 0)
    # labels per node, grouped by onboard set; across groups only when shortcuts are safe
    buckets: list[dict[int, list[Label]]] = [{} for _ in range(2 * n)]
    buckets[d][start.onboard] = [start]
    subset_ok = g.shortcut_safe()
    heap = [(start.time, 0, start)]
    seq = 1
    done: list[Label] = []
    succ = g.succ
    while heap:
        _, _, lab = heapq.heappop(heap)
        if not lab.alive:
            continue
        st.extended += 1
        if opts.deadline is not None and st.extended % 256 == 0 and time.perf_counter() > opts.deadline:
            raise SearchTimeout()
        for v, c in succ[lab.node]:
            new = _extend(g, lab, v, c, opts.elementary)
            if new is None:
                continue
            st.created += 1
            if v == sink:
                done.append(new)
                continue
            if opts.prune and not post_feasibility_prune(new, g):
                st.pruned += 1
                continue
            if opts.dominance:
                groups = buckets[v]
                ob = new.onboard
                if _beaten(new, groups, ob, g, subset_ok):
                    st.dominated += 1
                    continue
                for key in list(groups) if subset_ok else ((ob,) if ob in groups else ()):
                    if ob & ~key:
                        continue
                    keep = []
                    for old in groups[key]:
                        if _dominates_fast(new, old, g):
                            old.alive = False
                            st.dominated += 1
                        else:
                            keep.append(old)
                    groups[key] = keep
                groups.setdefault(ob, []).append(new)
            heapq.heappush(heap, (new.time, seq, new))
            seq += 1
            if opts.label_limit is not None and seq > opts.label_limit:
                raise SearchTimeout()
    return done


def _route_of(g: PricingGraph, stops: Sequence[int]) -> Route:
    return Route(g.direction, g.driver, tuple(stops), sum(g.dist[u][v] for u, v in zip(stops[:-1], stops[1:])))


def rcsp_min_path(g: PricingGraph, options: SearchOptions | None = None,
                  stats: SearchStats | None = None) -> PricedRoute | None:
    """Cheapest wait-relaxed path from the driver's pickup to their drop-off.

    Ties go to the lexicographically smallest stop sequence.  The result is
    not checked against waiting; see ``price_driver``.
    """
    done = rcsp_labels(g, options, stats)
    if stats is not None:
        stats.runs += 1
    if not done:
        return None
    best = min(lab.cost for lab in done)
    cands = sorted(lab.path() for lab in done if lab.cost <= best + 1e-9)
    stops = cands[0]
    return PricedRoute(_route_of(g, stops), g.path_cost(stops), feasible=False)


def price_driver(g: PricingGraph, view: DirectionView | Instance | None = None,
                 options: SearchOptions | None = None, stats: SearchStats | None = None,
                 relax_forbidden: bool = False, max_rounds: int | None = None) -> PricedRoute | None:
    """Cheapest route for this driver that is feasible with waits scheduled.

    Candidates that fail the full schedule check are added to the graph's
    forbidden list and the search is repeated.  With ``relax_forbidden`` the
    first candidate is returned as is, flagged when infeasible.
    """
    if isinstance(view, Instance):
        view = view.view(g.direction)
    view = view or g.view
    rounds = 0
    while True:
        cand = rcsp_min_path(g, options, stats)
        if cand is None:
            return None
        stops = cand.route.stops
        assert stops not in g.forbidden, "forbidden path returned"
        sch = feasible(stops, view)
        if sch is not None:
            r = cand.route
            return PricedRoute(Route(r.direction, r.driver, r.stops, r.distance, sch.times), cand.reduced_cost)
        if relax_forbidden:
            return cand
        g.forbid(stops)
        if stats is not None:
            stats.forbidden += 1
        rounds += 1
        if max_rounds is not None and rounds >= max_rounds:
            return None


# -- all drivers ---------------------------------------------------------------

class Pricer:
    """Keeps one graph per (direction, driver) across column generation rounds."""

    def __init__(self, instance: Instance, fixed: float, distance_weight: float = 1.0,
                 tighten: bool = True, eliminate: bool = True, dominance: bool = True,
                 prune: bool = True, capacity: int | None = None):
        self.instance = instance
        self.fixed = float(fixed)
        self.distance_weight = float(distance_weight)
        self.tighten = tighten
        self.eliminate = eliminate
        self.options = SearchOptions(dominance=dominance, prune=prune)
        self.capacity = instance.capacity if capacity is None else capacity
        self.stats = SearchStats()
        self._probes = {d: ProbeCache(instance.view(d)) for d in (INBOUND, OUTBOUND)}
        self._graphs: dict[tuple[str, int], PricingGraph] = {}

    def graph(self, direction: str, driver: int) -> PricingGraph:
        key = (direction, driver)
        g = self._graphs.get(key)
        if g is None:
            view = self.instance.view(direction)
            g = base_graph(view, driver, self.capacity)
            if self.tighten:
                tighten_windows(g)
            if self.eliminate:
                eliminate_edges(g, self._probes[direction])
            self._graphs[key] = g
        return g

    def edge_counts(self) -> dict[str, int]:
        out = {INBOUND: 0, OUTBOUND: 0}
        for (direction, _), g in self._graphs.items():
            out[direction] += len(g.edges)
        return out

    def price(self, duals: Duals, drivers: Iterable[int] | None = None,
              banned: dict[str, Iterable[tuple[int, int]]] | None = None,
              relax_forbidden: bool = False, deadline: float | None = None,
              directions: Sequence[str] = (INBOUND, OUTBOUND),
              skip: Iterable[tuple[str, int]] = ()) -> list[PricedRoute]:
        """Best route per (direction, driver); raises SearchTimeout past the deadline."""
        drivers = range(self.instance.n) if drivers is None else sorted(drivers)
        banned = banned or {}
        skip = set(skip)
        opts = SearchOptions(self.options.dominance, self.options.prune, self.options.elementary,
                             deadline=deadline)
        out = []
        for direction in directions:
            ban = frozenset(banned.get(direction, ()))
            for d in drivers:
                if (direction, d) in skip:
                    continue
                if deadline is not None and time.perf_counter() > deadline:
                    raise SearchTimeout()
                g = self.graph(direction, d)
                g.banned = ban & g.edges if ban else ban
                g.set_costs(duals, self.fixed, self.distance_weight)
                pr = price_driver(g, None, opts, self.stats, relax_forbidden=relax_forbidden)
                if pr is not None:
                    out.append(pr)
        return out
