"""Branch-and-price over the route master problem.

Column generation at every node, a route-parity cut and an objective
rounding cut, then two-level branching: first on who drives (``V_i``), then
on edge flows per direction.  Fixings are enforced by masking columns in the
master and by banning edges or skipping whole pricing graphs.

An edge fixed to one means: the tail's only successor is the head and the
head's only predecessor is the tail.  Since every node is visited exactly
once in an integer plan, a route that starts at the head or ends at the tail
also contradicts the fixing, so those (direction, driver) graphs are skipped
and such columns masked; otherwise a fractional plan mixing them could
survive in the child unchanged.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .enumeration import enumerate_routes
from .lpmip import ceil_tol
from .master import Column, Cuts, Duals, MasterProblem, Plan, parity_rhs
from .model import DIRECTIONS, INBOUND, OUTBOUND, Instance, Route
from .pricing import PricedRoute, Pricer, SearchTimeout
from .schedule import feasible

log = logging.getLogger(__name__)

FRAC_TOL = 1e-6


class BpaError(RuntimeError):
    def __init__(self, message: str, bound: float | None = None):
        super().__init__(message)
        self.bound = bound


@dataclass
class BranchNode:
    V: dict[int, int] = field(default_factory=dict)
    F: dict[tuple[str, tuple[int, int]], int] = field(default_factory=dict)
    cuts: Cuts = field(default_factory=Cuts)
    depth: int = 0
    bound: float = -math.inf
    z: float | None = None
    status: str = "open"
    lp_z: float | None = None
    hint: object = None
    parent_z: float | None = None  # parent's converged LP value, for the monotonicity check

    def child(self, V=None, F=None) -> "BranchNode":
        v = dict(self.V)
        f = dict(self.F)
        for k, val in (V or {}).items():
            if v.get(k, val) != val:
                raise ValueError(f"conflicting fixing for V[{k}]")
            v[k] = val
        for k, val in (F or {}).items():
            if f.get(k, val) != val:
                raise ValueError(f"conflicting fixing for F{k}")
            f[k] = val
        cuts = self.cuts.copy()
        for i, val in v.items():
            if val == 1:
                cuts.driver[i] = 1.0
        kid = BranchNode(v, f, cuts, self.depth + 1, self.bound if self.z is None else self.z, hint=self.hint)
        kid.parent_z = self.lp_z
        return kid

    def banned_edges(self, n: int) -> dict[str, set[tuple[int, int]]]:
        out: dict[str, set[tuple[int, int]]] = {d: set() for d in DIRECTIONS}
        for (direction, (i, j)), val in self.F.items():
            if val == 0:
                out[direction].add((i, j))
            else:
                for w in range(2 * n):
                    if w != j and w != i:
                        out[direction].add((i, w))
                    if w != i and w != j:
                        out[direction].add((w, j))
        return out

    def skipped(self, n: int) -> set[tuple[str, int]]:
        out = set()
        for i, val in self.V.items():
            if val == 0:
                out.update((d, i) for d in DIRECTIONS)
        for (direction, (i, j)), val in self.F.items():
            if val == 1:
                if j < n:
                    out.add((direction, j))
                if i >= n:
                    out.add((direction, i - n))
        return out

    def allows(self, col: Column, n: int) -> bool:
        r = col.route
        if self.V.get(r.driver) == 0:
            return False
        if not self.F:
            return True
        edges = set(r.edges)
        for (direction, (i, j)), val in self.F.items():
            if direction != r.direction:
                continue
            if val == 0:
                if (i, j) in edges:
                    return False
            else:
                if r.stops[0] == j or r.stops[-1] == i:
                    return False
                for u, v in edges:
                    if (u == i) != (v == j):
                        return False
        return True


@dataclass
class Bounds:
    z_rmp: float = math.inf
    z_lb: float = -math.inf
    chi_rmp: float = math.inf
    chi_lb: float = -math.inf
    z_mip: float = math.inf
    z_min: float = -math.inf


@dataclass
class CgResult:
    status: str  # optimal, infeasible, pruned, timeout
    z: float | None = None
    z_lb: float = -math.inf
    x: np.ndarray | None = None
    duals: Duals | None = None
    converged: bool = False
    iterations: int = 0
    rc_min: float | None = None
    farley: float = -math.inf


_POOL: dict = {}


def _init_pricing_worker(instance, fixed, distance_weight, flags) -> None:
    _POOL["pricer"] = Pricer(instance, fixed, distance_weight, **flags)


def _price_chunk(args):
    duals, drivers, banned, skip, relax, deadline = args
    try:
        return _POOL["pricer"].price(duals, drivers=drivers, banned=banned, skip=skip,
                                     relax_forbidden=relax, deadline=deadline)
    except SearchTimeout:
        return None


def seed_routes(instance: Instance, workers: int = 1) -> list[Route]:
    """Every single-rider route plus every feasible two-rider route."""
    K = min(2, instance.capacity)
    return [r for d in DIRECTIONS for r in enumerate_routes(instance, d, capacity=K, workers=workers)]


def longest_route_bound(instance: Instance) -> float:
    """Upper bound on any route's distance: 2K - 1 legs of the longest hop."""
    longest = max(max(max(row) for row in instance.view(d).dist) for d in DIRECTIONS)
    return float((2 * instance.capacity - 1) * longest)


class BranchAndPrice:
    def __init__(self, instance: Instance, fixed: float | None = None, distance_weight: float = 1.0,
                 threads: int = 1, tighten: bool = True, eliminate: bool = True, dominance: bool = True,
                 prune: bool = True, use_cuts: bool = True, mip_every: int = 1000,
                 mip_time: float | None = 60.0, relax_forbidden: bool = False,
                 seed: list[Route] | None = None, partial_target: int | None = 4):
        self.instance = instance
        self.n = instance.n
        started = time.perf_counter()
        pool = seed if seed is not None else seed_routes(instance)
        if fixed is None:
            fixed = instance.fixed_cost_multiplier * max((r.distance for r in pool), default=1)
        self.fixed = float(fixed)
        self.distance_weight = float(distance_weight)
        self.master = MasterProblem(instance, self.fixed, self.distance_weight)
        self.master.add_many(pool)
        flags = dict(tighten=tighten, eliminate=eliminate, dominance=dominance, prune=prune)
        self.pricer = Pricer(instance, self.fixed, self.distance_weight, **flags)
        self.threads = max(1, int(threads))
        self._executor = None
        if self.threads > 1:
            self._executor = ProcessPoolExecutor(self.threads, initializer=_init_pricing_worker,
                                                 initargs=(instance, self.fixed, self.distance_weight, flags))
        self.use_cuts = use_cuts
        self.mip_every = mip_every
        self.mip_time = mip_time
        self.relax_forbidden = relax_forbidden
        self.infeasible_cols: set[int] = set()
        self.partial_target = partial_target
        self._cursor = 0
        self.longest = longest_route_bound(instance)
        self.per_route_max = self.fixed + self.distance_weight * self.longest
        self.rc_tol = max(1e-9 * max(1.0, self.fixed), 0.1 / (2 * self.n))
        self.bounds = Bounds()
        self.incumbent: list[int] | None = None
        self.stats: dict = {"seed_columns": len(self.master), "t_seed": time.perf_counter() - started,
                            "cg_iterations": 0, "lp_time": 0.0, "pricing_time": 0.0, "tree_nodes": 0}
        self._start = started

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    # -- helpers -------------------------------------------------------------

    def mask(self, node: BranchNode) -> np.ndarray:
        cols = self.master.columns
        return np.array([node.allows(c, self.n) for c in cols], dtype=bool)

    def _price(self, duals: Duals, node: BranchNode, deadline: float | None,
               partial: bool = True) -> tuple[list[PricedRoute], bool]:
        """Priced routes and whether every graph was searched.

        Sequential pricing visits graphs round-robin from where the last call
        stopped and quits early once ``partial_target`` improving routes are
        found; bounds are only derived from complete rounds.
        """
        banned = node.banned_edges(self.n)
        skip = node.skipped(self.n)
        t0 = time.perf_counter()
        try:
            if self._executor is None:
                if not partial or self.partial_target is None:
                    return self.pricer.price(duals, banned=banned, skip=skip,
                                             relax_forbidden=self.relax_forbidden, deadline=deadline), True
                pairs = [(dr, d) for dr in DIRECTIONS for d in range(self.n) if (dr, d) not in skip]
                out = []
                found = 0
                start = self._cursor % max(1, len(pairs))
                for k in range(len(pairs)):
                    dr, d = pairs[(start + k) % len(pairs)]
                    got = self.pricer.price(duals, drivers=[d], directions=(dr,), banned=banned,
                                            relax_forbidden=self.relax_forbidden, deadline=deadline)
                    out.extend(got)
                    found += sum(p.reduced_cost < -self.rc_tol for p in got)
                    if found >= self.partial_target and k + 1 < len(pairs):
                        self._cursor = start + k + 1
                        return out, False
                return out, True
            chunks = [list(range(k, self.n, self.threads)) for k in range(self.threads)]
            tasks = [(duals, c, banned, skip, self.relax_forbidden, deadline) for c in chunks if c]
            out = []
            for part in self._executor.map(_price_chunk, tasks):
                if part is None:
                    raise SearchTimeout()
                out.extend(part)
            return sorted(out, key=lambda p: (p.route.direction != INBOUND, p.route.driver)), True
        finally:
            self.stats["pricing_time"] += time.perf_counter() - t0

    def _add(self, priced: list[PricedRoute], duals: Duals) -> int:
        added = 0
        scale = max(1.0, self.fixed)
        tol = self.rc_tol
        if duals.farkas:  # a ray has no cost scale; any negative value repairs infeasibility
            tol = 1e-9 * max(1.0, float(np.abs(duals.as_vector()).max(initial=0.0)))
        for p in priced:
            if p.reduced_cost >= -tol:
                continue
            check = self.master.reduced_cost(p.route, duals)
            if abs(check - p.reduced_cost) > 1e-6 * scale:
                raise AssertionError(f"priced cost {p.reduced_cost} disagrees with closed form {check}")
            j = self.master.add(p.route)
            if j is not None:
                added += 1
                if not p.feasible:
                    self.infeasible_cols.add(j)
        return added

    def chi_lb(self, z_lb: float) -> float:
        return z_lb / self.per_route_max if self.per_route_max > 0 else 0.0

    # -- column generation ---------------------------------------------------------

    def column_generation(self, node: BranchNode, deadline: float | None = None) -> CgResult:
        n = self.n
        lam = 2 * n
        best_lb = node.bound
        farley = -math.inf
        stage = 0 if self.use_cuts else 2
        it = 0
        hint = node.hint
        while True:
            if deadline is not None and time.perf_counter() > deadline:
                return CgResult("timeout", z_lb=best_lb, farley=farley, iterations=it)
            it += 1
            self.stats["cg_iterations"] += 1
            t0 = time.perf_counter()
            res = self.master.solve(node.cuts, self.mask(node), hint=hint)
            self.stats["lp_time"] += time.perf_counter() - t0
            if not res.feasible:
                try:
                    priced, _ = self._price(res.duals, node, deadline, partial=False)
                except SearchTimeout:
                    return CgResult("timeout", z_lb=best_lb, farley=farley, iterations=it)
                if self._add(priced, res.duals) == 0:
                    return CgResult("infeasible", iterations=it)
                hint = None
                continue
            hint = res.basis
            node.hint = hint
            z = res.objective
            try:
                priced, complete = self._price(res.duals, node, deadline)
            except SearchTimeout:
                return CgResult("timeout", z, best_lb, res.x, res.duals, iterations=it, farley=farley)
            rc_min = None
            if complete:
                rc_min = min(min((p.reduced_cost for p in priced), default=0.0), 0.0)
                best_lb = max(best_lb, z + rc_min * lam)
                if self.distance_weight == 0 and self.fixed > 0 and rc_min < 1.0:
                    farley = max(farley, z / (1.0 - rc_min / self.fixed))
                self.bounds.z_rmp, self.bounds.z_lb = z, best_lb
                if self.incumbent is not None and ceil_tol(best_lb) >= self.bounds.z_mip - 1e-9:
                    return CgResult("pruned", z, best_lb, res.x, res.duals, iterations=it, rc_min=rc_min,
                                    farley=farley)
            added = self._add(priced, res.duals)
            changed = False
            if stage == 0:
                chi_rmp = float(res.x.sum())
                chi_lb = self.chi_lb(best_lb)
                self.bounds.chi_rmp, self.bounds.chi_lb = chi_rmp, chi_lb
                target = 2 * ceil_tol(chi_rmp / 2)
                if target - chi_lb < 2 or added == 0:
                    rhs = parity_rhs(best_lb, self.fixed, self.longest, self.distance_weight)
                    if rhs > node.cuts.parity + 1e-9:
                        node.cuts.parity = rhs
                        changed = True
                    stage = 1
            elif stage == 1:
                if ceil_tol(z) - best_lb < 1 or added == 0:
                    rhs = float(ceil_tol(best_lb))
                    if rhs > node.cuts.objective + 1e-9:
                        node.cuts.objective = rhs
                        changed = True
                    stage = 2
            if added == 0 and not changed and stage == 2:
                # columns above -rc_tol were not added, so keep the Lubbecke bound rather than z
                return CgResult("optimal", z, min(best_lb, z), res.x, res.duals, converged=True,
                                iterations=it, rc_min=rc_min, farley=farley)

    # -- branching -------------------------------------------------------------------

    def driver_flows(self, x: np.ndarray) -> np.ndarray:
        V = np.zeros(self.n)
        for j in np.flatnonzero(x > FRAC_TOL):
            col = self.master.columns[j]
            if col.direction == INBOUND:
                V[col.driver] += x[j]
        return V

    def edge_flows(self, x: np.ndarray) -> dict[str, dict[tuple[int, int], float]]:
        out: dict[str, dict[tuple[int, int], float]] = {d: {} for d in DIRECTIONS}
        for j in np.flatnonzero(x > FRAC_TOL):
            col = self.master.columns[j]
            flows = out[col.direction]
            for e in col.route.edges:
                flows[e] = flows.get(e, 0.0) + x[j]
        return out

    @staticmethod
    def _most_fractional(items):
        best, key = None, None
        for k, v in items:
            f = min(v - math.floor(v), math.ceil(v) - v)
            if f <= FRAC_TOL:
                continue
            cand = (-f, k)
            if key is None or cand < key:
                best, key = k, cand
        return best

    def branch(self, node: BranchNode, x: np.ndarray) -> list[BranchNode]:
        """Children in exploration order (fix-to-one first)."""
        V = self.driver_flows(x)
        i = self._most_fractional(enumerate(V))
        if i is not None:
            return [node.child(V={i: 1}), node.child(V={i: 0})]
        flows = self.edge_flows(x)
        e_in = self._most_fractional(sorted(flows[INBOUND].items()))
        e_out = self._most_fractional(sorted(flows[OUTBOUND].items()))
        if e_in is not None and e_out is not None:
            a, b = (INBOUND, e_in), (OUTBOUND, e_out)
            return [node.child(F={a: fa, b: fb}) for fa, fb in ((1, 1), (1, 0), (0, 1), (0, 0))]
        if e_in is not None or e_out is not None:
            key = (INBOUND, e_in) if e_in is not None else (OUTBOUND, e_out)
            return [node.child(F={key: 1}), node.child(F={key: 0})]
        return []

    # -- incumbents ------------------------------------------------------------------

    def _usable(self) -> np.ndarray | None:
        if not self.infeasible_cols:
            return None
        m = np.ones(len(self.master), dtype=bool)
        m[list(self.infeasible_cols)] = False
        return m

    def _offer(self, chosen: list[int], objective: float) -> bool:
        if objective < self.bounds.z_mip - 1e-9:
            self.bounds.z_mip = objective
            self.incumbent = list(chosen)
            self.stats["t_best"] = time.perf_counter() - self._start
            return True
        return False

    def solve_pool_mip(self, cuts: Cuts, budget: float | None) -> None:
        t0 = time.perf_counter()
        warm = self.incumbent if self.incumbent is not None else self.master.singles_solution()
        chosen, res = self.master.solve_mip(cuts, mask=self._usable(), time_budget=budget, warm_start=warm)
        self.stats["mip_time"] = self.stats.get("mip_time", 0.0) + time.perf_counter() - t0
        if res.x is not None:
            self._offer(chosen, float(self.master.costs()[chosen].sum()))

    def _integral(self, x: np.ndarray) -> list[int] | None:
        frac = np.minimum(x, 1 - x)
        if (np.abs(frac[x > 0.5]) > FRAC_TOL).any() or ((x > FRAC_TOL) & (x < 1 - FRAC_TOL)).any():
            return None
        chosen = [int(j) for j in np.flatnonzero(x > 0.5)]
        if any(j in self.infeasible_cols for j in chosen):
            return None
        return chosen

    def plan(self, status: str, gap: float) -> Plan:
        if self.incumbent is None:
            raise BpaError("no integer solution found", self.bounds.z_min)
        routes = []
        for j in self.incumbent:
            r = self.master.columns[j].route
            if r.schedule is None:
                sch = feasible(r.stops, self.instance.view(r.direction))
                if sch is None:
                    raise BpaError(f"selected route {r.key()} has no feasible schedule")
                r = Route(r.direction, r.driver, r.stops, r.distance, sch.times)
            routes.append(r)
        return Plan(routes, self.bounds.z_mip, gap, status, dict(self.stats))

    # -- search ------------------------------------------------------------------------

    def solve(self, time_limit: float | None = None) -> Plan:
        deadline = None if time_limit is None else self._start + time_limit
        root = BranchNode()
        stack = [root]
        nodes = 0
        status = "optimal"
        unresolved = False
        try:
            while stack:
                z_min = min(nd.bound for nd in stack)
                self.bounds.z_min = z_min
                if self.incumbent is not None and self.bounds.z_mip - z_min < 1 - 1e-9:
                    break
                if deadline is not None and time.perf_counter() > deadline:
                    status = "time_limit"
                    break
                node = stack.pop()
                if self.incumbent is not None and ceil_tol(node.bound) >= self.bounds.z_mip - 1e-9:
                    continue
                nodes += 1
                self.stats["tree_nodes"] = nodes
                res = self.column_generation(node, deadline)
                if node is root:
                    self.stats["t_root_lp"] = time.perf_counter() - self._start
                    self.stats["root_z"] = res.z
                    self.stats["root_lb"] = res.z_lb
                    self.root_cuts = root.cuts.copy()
                if res.status == "timeout":
                    stack.append(node)
                    node.bound = max(node.bound, res.z_lb)
                    status = "time_limit"
                    break
                if res.status in ("infeasible", "pruned"):
                    node.status = res.status
                    continue
                node.lp_z = res.z
                if node.parent_z is not None and res.z < node.parent_z - 1e-6 * max(1.0, abs(node.parent_z)):
                    self.stats["bound_drops"] = self.stats.get("bound_drops", 0) + 1
                    log.warning("child LP %.6f fell below parent LP %.6f", res.z, node.parent_z)
                node.z = max(res.z_lb if res.z_lb > -math.inf else res.z, node.bound)
                chosen = self._integral(res.x)
                if chosen is not None:
                    self._offer(chosen, float(self.master.costs()[chosen].sum()))
                    node.status = "integral"
                elif ceil_tol(node.z) < self.bounds.z_mip - 1e-9:
                    kids = self.branch(node, res.x)
                    if not kids:
                        log.warning("fractional master with integral flows; node left unresolved")
                        unresolved = True
                    for kid in reversed(kids):
                        kid.bound = node.z
                        stack.append(kid)
                    node.status = "branched"
                if (nodes - 1) % self.mip_every == 0:
                    budget = self.mip_time
                    if deadline is not None:
                        budget = max(0.0, min(budget if budget is not None else math.inf,
                                              deadline - time.perf_counter()))
                    self.solve_pool_mip(getattr(self, "root_cuts", Cuts()), budget)
                    if node is root:
                        self.stats["t_root_mip"] = time.perf_counter() - self._start
            else:
                self.bounds.z_min = self.bounds.z_mip
            if self.incumbent is None:
                self.solve_pool_mip(Cuts(), 1.0)  # the singles plan at worst
        finally:
            self.close()
        if not stack:
            self.bounds.z_min = self.bounds.z_mip
        z_mip, z_min = self.bounds.z_mip, self.bounds.z_min
        gap = 0.0 if z_mip - z_min < 1 - 1e-9 else (z_mip - z_min) / z_mip
        if unresolved and status == "optimal" and gap > 0:
            status = "unresolved"
        if status == "optimal" and gap > 0:
            status = "feasible"
        self.stats.update(self._summary())
        return self.plan(status, gap)

    def _summary(self) -> dict:
        edges = self.pricer.edge_counts()
        return {
            "columns": len(self.master),
            "in_edges": edges[INBOUND],
            "out_edges": edges[OUTBOUND],
            "t_total": time.perf_counter() - self._start,
            "forbidden_paths": self.pricer.stats.forbidden,
            "z_mip": self.bounds.z_mip,
            "z_min": self.bounds.z_min,
        }


def solve_bpa(instance: Instance, time_limit: float | None = None, threads: int = 1, **kw) -> Plan:
    """Exact solve by branch-and-price; ``kw`` passes search switches to ``BranchAndPrice``."""
    return BranchAndPrice(instance, threads=threads, **kw).solve(time_limit)


def root_heuristic(instance: Instance, t_rmp: float = 480.0, t_mip: float = 120.0,
                   relax_forbidden: bool = False, threads: int = 1, **kw) -> Plan:
    """Column generation at the root under unit route costs, then one budgeted MIP.

    The reported gap is ``(z_MIP - z_LB) / z_MIP`` with ``z_LB`` the converged
    root bound, or Farley's bound ``z_RMP / (1 - rc*)`` when the budget runs out.
    """
    kw.setdefault("partial_target", None)  # complete rounds keep the Farley bound current
    bp = BranchAndPrice(instance, fixed=1.0, distance_weight=0.0, threads=threads,
                        relax_forbidden=relax_forbidden, **kw)
    start = time.perf_counter()
    try:
        root = BranchNode()
        res = CgResult("timeout")
        if t_rmp > 0:
            res = bp.column_generation(root, start + t_rmp)
        t_cg = time.perf_counter() - start
        mip_start = time.perf_counter()
        bp.solve_pool_mip(root.cuts, t_mip)
        t_mip_used = time.perf_counter() - mip_start
    finally:
        bp.close()
    converged = res.status == "optimal" and res.converged
    if converged:
        z_lb = res.z_lb
    else:
        z_lb = max(res.farley, 0.0)
    z_mip = bp.bounds.z_mip
    if bp.incumbent is None:
        raise BpaError("no integer solution found", z_lb)
    z_lb = min(z_lb, z_mip)
    gap = (z_mip - z_lb) / z_mip if z_mip > 0 else 0.0
    bp.stats.update(bp._summary())
    bp.stats.update({"converged": converged, "z_lb": z_lb, "z_rmp": res.z, "root_z": res.z, "farley": res.farley,
                     "t_rmp_used": t_cg, "t_mip_used": t_mip_used,
                     "infeasible_columns": len(bp.infeasible_cols)})
    status = "optimal" if gap == 0 else "feasible"
    return bp.plan(status, gap)
