"""Set-partitioning master problem over inbound and outbound routes.

Row layout of the restricted master (``n`` commuters):

    [0, n)          inbound coverage, = 1
    [n, 2n)         outbound coverage, = 1
    [2n, 3n)        driver balance: +1 inbound driver, -1 outbound driver, = 0
    3n              route count (parity cut), >= rhs
    3n + 1          total cost (objective cut), >= rhs
    [3n+2, 4n+2)    inbound routes driven by commuter i (driver cut), >= rhs

Cut rows are always present; their right-hand sides start at zero so the dual
vector keeps a fixed shape.  Route cost is ``fixed + distance``; with a fixed
charge larger than any plan's total distance, fewer routes always win.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lpmip import EQ, GE, BasisHint, LinearProgram, MipResult, ceil_tol, solve_binary_mip, solve_lp
from .model import INBOUND, OUTBOUND, Instance, Route

log = logging.getLogger(__name__)


def fixed_cost(routes: Iterable[Route], multiplier: float) -> float:
    """Fixed per-route charge: multiplier times the longest known route."""
    return float(multiplier) * max((r.distance for r in routes), default=0)


def fixed_cost_bound(instance: Instance, multiplier: float | None = None) -> float:
    """Pre-enumeration variant: multiplier * n * largest distance entry."""
    m = instance.fixed_cost_multiplier if multiplier is None else multiplier
    return float(m) * instance.n * float(instance.dist.max(initial=0))


@dataclass(frozen=True)
class Column:
    route: Route
    cost: float
    riders: frozenset

    @property
    def direction(self) -> str:
        return self.route.direction

    @property
    def driver(self) -> int:
        return self.route.driver


@dataclass
class Cuts:
    parity: float = 0.0
    objective: float = 0.0
    driver: dict[int, float] = field(default_factory=dict)

    def copy(self) -> "Cuts":
        return Cuts(self.parity, self.objective, dict(self.driver))


@dataclass
class Duals:
    pi_in: np.ndarray
    pi_out: np.ndarray
    sigma: np.ndarray
    mu: float
    nu: float
    phi: np.ndarray
    farkas: bool = False

    @classmethod
    def from_vector(cls, y: np.ndarray, n: int, farkas: bool = False) -> "Duals":
        y = np.asarray(y, dtype=float)
        return cls(y[:n].copy(), y[n:2 * n].copy(), y[2 * n:3 * n].copy(), float(y[3 * n]),
                   float(y[3 * n + 1]), y[3 * n + 2:4 * n + 2].copy(), farkas)

    @classmethod
    def zeros(cls, n: int) -> "Duals":
        return cls.from_vector(np.zeros(4 * n + 2), n)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.pi_in, self.pi_out, self.sigma, [self.mu, self.nu], self.phi])

    @property
    def cost_weight(self) -> float:
        """Multiplier on true route cost in a reduced cost (zero for a Farkas ray)."""
        return 0.0 if self.farkas else 1.0


@dataclass
class RmpResult:
    status: str
    objective: float | None
    x: np.ndarray | None
    duals: Duals | None
    basis: BasisHint | None = None
    iterations: int = 0

    @property
    def feasible(self) -> bool:
        return self.status == "optimal"


class MasterProblem:
    def __init__(self, instance: Instance, fixed: float, distance_weight: float = 1.0):
        self.instance = instance
        self.n = instance.n
        self.fixed = float(fixed)
        self.distance_weight = float(distance_weight)
        self.columns: list[Column] = []
        self._index: dict[tuple, int] = {}
        self._vectors: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    @property
    def n_rows(self) -> int:
        return 4 * self.n + 2

    def __len__(self) -> int:
        return len(self.columns)

    def route_cost(self, route: Route) -> float:
        return self.fixed + self.distance_weight * route.distance

    def column_vector(self, route: Route, cost: float) -> np.ndarray:
        n = self.n
        v = np.zeros(self.n_rows)
        riders = route.riders(n)
        base = 0 if route.direction == INBOUND else n
        for i in riders:
            v[base + i] = 1.0
        if route.direction == INBOUND:
            v[2 * n + route.driver] = 1.0
            v[3 * n + 2 + route.driver] = 1.0
        else:
            v[2 * n + route.driver] = -1.0
        v[3 * n] = 1.0
        v[3 * n + 1] = cost
        return v

    def add(self, route: Route) -> int | None:
        """Add a route; returns its column index, or None when already present."""
        key = route.key()
        if key in self._index:
            return None
        cost = self.route_cost(route)
        col = Column(route, cost, route.riders(self.n))
        self._index[key] = len(self.columns)
        self.columns.append(col)
        self._vectors.append(self.column_vector(route, cost))
        self._matrix = None
        return len(self.columns) - 1

    def add_many(self, routes: Iterable[Route]) -> int:
        return sum(1 for r in routes if self.add(r) is not None)

    def has(self, route: Route) -> bool:
        return route.key() in self._index

    def index_of(self, route: Route) -> int | None:
        return self._index.get(route.key())

    def matrix(self) -> np.ndarray:
        if self._matrix is None or self._matrix.shape[1] != len(self._vectors):
            self._matrix = (np.column_stack(self._vectors) if self._vectors
                            else np.zeros((self.n_rows, 0)))
        return self._matrix

    def costs(self) -> np.ndarray:
        return np.array([c.cost for c in self.columns], dtype=float)

    def rhs(self, cuts: Cuts) -> tuple[list[str], np.ndarray]:
        n = self.n
        senses = [EQ] * (3 * n) + [GE, GE] + [GE] * n
        b = np.zeros(self.n_rows)
        b[: 2 * n] = 1.0
        b[3 * n] = cuts.parity
        b[3 * n + 1] = cuts.objective
        for i, v in cuts.driver.items():
            b[3 * n + 2 + i] = v
        return senses, b

    def build_lp(self, cuts: Cuts | None = None, mask: np.ndarray | None = None) -> tuple[LinearProgram, np.ndarray]:
        """LP relaxation over the unmasked columns; also returns their indices."""
        cuts = cuts or Cuts()
        idx = np.arange(len(self.columns)) if mask is None else np.flatnonzero(mask)
        A = self.matrix()[:, idx]
        senses, b = self.rhs(cuts)
        c = self.costs()[idx]
        return LinearProgram(c, A, senses, b, lb=np.zeros(idx.size), ub=np.full(idx.size, np.inf)), idx

    def solve(self, cuts: Cuts | None = None, mask: np.ndarray | None = None,
              hint: BasisHint | None = None) -> RmpResult:
        """LP relaxation; ``hint`` is a basis from an earlier solve, in column indices."""
        lp, idx = self.build_lp(cuts, mask)
        local = None
        if hint is not None:
            local = hint.remap({int(j): k for k, j in enumerate(idx)})
        sol = solve_lp(lp, hint=local)
        if sol.status == "infeasible":
            return RmpResult("infeasible", None, None, Duals.from_vector(sol.farkas, self.n, farkas=True),
                             iterations=sol.iterations)
        if sol.status != "optimal":
            raise RuntimeError(f"restricted master is {sol.status}")
        x = np.zeros(len(self.columns))
        x[idx] = sol.x
        basis = sol.basis.remap({k: int(j) for k, j in enumerate(idx)}) if sol.basis is not None else None
        return RmpResult("optimal", sol.objective, x, Duals.from_vector(sol.duals, self.n), basis,
                         sol.iterations)

    def reduced_cost(self, route: Route, duals: Duals, cost: float | None = None) -> float:
        """Closed-form reduced cost (Farkas duals use a zero cost weight)."""
        cost = self.route_cost(route) if cost is None else cost
        w = duals.cost_weight
        riders = route.riders(self.n)
        d = route.driver
        if route.direction == INBOUND:
            return (w - duals.nu) * cost - sum(duals.pi_in[i] for i in riders) - duals.sigma[d] \
                - duals.mu - duals.phi[d]
        return (w - duals.nu) * cost - sum(duals.pi_out[i] for i in riders) + duals.sigma[d] - duals.mu

    def solve_mip(self, cuts: Cuts | None = None, mask: np.ndarray | None = None,
                  time_budget: float | None = None, warm_start: Sequence[int] | None = None,
                  integral_objective: bool = True, node_order: str = "best") -> tuple[list[int], MipResult]:
        """Binary program over the unmasked columns; returns chosen column indices."""
        lp, idx = self.build_lp(cuts, mask)
        lp.ub = np.ones(idx.size)
        ws = None
        if warm_start is not None:
            pos = {int(j): k for k, j in enumerate(idx)}
            ws = np.zeros(idx.size)
            for j in warm_start:
                if j in pos:
                    ws[pos[j]] = 1.0
        integral = integral_objective and all(float(c).is_integer() for c in lp.c)
        res = solve_binary_mip(lp, time_budget=time_budget, warm_start=ws, integral_objective=integral,
                               node_order=node_order)
        chosen = [] if res.x is None else [int(idx[k]) for k in np.flatnonzero(res.x > 0.5)]
        return chosen, res

    def singles_solution(self) -> list[int]:
        """Indices of the everyone-drives-alone plan, when all of it is in the pool."""
        out = []
        for c in self.columns:
            if len(c.route.stops) == 2:
                out.append(self._index[c.route.key()])
        return out


@dataclass
class Plan:
    routes: list[Route]
    objective: float
    gap: float = 0.0
    status: str = "optimal"
    stats: dict = field(default_factory=dict)

    @property
    def vehicle_count(self) -> int:
        return sum(1 for r in self.routes if r.direction == INBOUND)

    @property
    def route_count(self) -> int:
        return len(self.routes)

    @property
    def total_distance(self) -> int:
        return int(sum(r.distance for r in self.routes))

    def key(self) -> tuple[int, int]:
        return (self.vehicle_count, self.total_distance)

    def to_dict(self) -> dict:
        return {
            "routes": [
                {"driver": r.driver, "direction": r.direction, "stops": list(r.stops),
                 "schedule": list(r.schedule) if r.schedule is not None else None, "distance": r.distance}
                for r in sorted(self.routes, key=lambda r: (r.direction != INBOUND, r.driver))
            ],
            "vehicle_count": self.vehicle_count,
            "total_distance": self.total_distance,
            "objective": self.objective,
            "gap": self.gap,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def parity_rhs(lower_bound: float, fixed: float, longest: float, distance_weight: float = 1.0) -> float:
    """Even lower bound on the number of routes in any plan of cost >= lower_bound.

    Every route costs at most ``fixed + distance_weight * longest``, so a plan
    needs at least ``lower_bound`` over that many routes, and route counts are
    always even (each vehicle drives one inbound and one outbound route).
    """
    per_route = fixed + distance_weight * longest
    if per_route <= 0:
        return 0.0
    k = ceil_tol(lower_bound / per_route)
    return float(k + (k % 2))


def lexicographic_safe(n: int, fixed: float, longest: float) -> bool:
    """True when one extra route always costs more than any plan's total distance."""
    return 2.0 * fixed > 2.0 * n * longest


def solve_rea(instance: Instance, time_budget: float | None = None, workers: int = 1,
              pools: dict | None = None) -> Plan:
    """Exact solve: enumerate every route, then pick the best set by binary programming."""
    import time

    from .enumeration import enumerate_routes
    from .schedule import feasible

    start = time.perf_counter()
    if pools is None:
        pools = {d: enumerate_routes(instance, d, workers=workers) for d in (INBOUND, OUTBOUND)}
    t_enum = time.perf_counter() - start
    routes = [r for d in (INBOUND, OUTBOUND) for r in pools[d]]
    fixed = fixed_cost(routes, instance.fixed_cost_multiplier)
    if not lexicographic_safe(instance.n, fixed, max(r.distance for r in routes)):
        log.warning("fixed cost too small to guarantee fewest-vehicles-first ordering")
    master = MasterProblem(instance, fixed)
    master.add_many(routes)
    cuts = Cuts()
    relaxed = master.solve()
    if relaxed.feasible:
        cuts.parity = parity_rhs(relaxed.objective, fixed, max(r.distance for r in routes))
    chosen, res = master.solve_mip(cuts, time_budget=time_budget, warm_start=master.singles_solution())
    if res.x is None:
        raise RuntimeError("no feasible plan found within the budget")
    plan_routes = []
    for j in chosen:
        r = master.columns[j].route
        if r.schedule is None:
            sch = feasible(r.stops, instance.view(r.direction))
            r = Route(r.direction, r.driver, r.stops, r.distance, sch.times)
        plan_routes.append(r)
    stats = {
        "columns": len(master),
        "columns_inbound": len(pools[INBOUND]),
        "columns_outbound": len(pools[OUTBOUND]),
        "enumeration_seconds": t_enum,
        "mip_nodes": res.nodes,
        "root_lp": relaxed.objective,
        "parity_rhs": cuts.parity,
        "fixed_cost": fixed,
        "seconds": time.perf_counter() - start,
    }
    return Plan(plan_routes, res.objective, res.gap, res.status, stats)
