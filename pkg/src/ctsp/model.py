"""Domain types for commute trip sharing instances.

Node numbering used everywhere downstream: for a direction with ``n`` commuters,
node ``i`` is commuter ``i``'s pickup and node ``n + i`` is the drop-off.
Inbound trips run home -> workplace, outbound trips workplace -> home.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

INBOUND = "inbound"
OUTBOUND = "outbound"
DIRECTIONS = (INBOUND, OUTBOUND)

DEFAULT_SPEED = 10.0  # m/s


class InstanceError(ValueError):
    """Raised for inconsistent instance data."""


@dataclass(frozen=True)
class Trip:
    origin: int
    destination: int
    desired_departure: int | None
    desired_arrival: int | None
    direction: str


@dataclass(frozen=True)
class Commuter:
    id: int
    inbound: Trip
    outbound: Trip
    home: tuple[float, float]

    def trip(self, direction: str) -> Trip:
        return self.inbound if direction == INBOUND else self.outbound


@dataclass(frozen=True)
class Location:
    """A pickup or drop-off node with its time window and ride limit."""

    node: int
    location: int
    window_start: float
    window_end: float
    service: float = 0.0
    demand: int = 0
    ride_limit: float | None = None


@dataclass(frozen=True)
class Route:
    direction: str
    driver: int
    stops: tuple[int, ...]
    distance: int
    schedule: tuple[float, ...] | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.stops)

    def riders(self, n: int) -> frozenset[int]:
        return frozenset(s for s in self.stops if s < n)

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.stops[:-1], self.stops[1:]))

    def key(self) -> tuple[str, int, tuple[int, ...]]:
        return (self.direction, self.driver, self.stops)


@dataclass
class DirectionView:
    """Flat per-direction node data (plain lists, for fast scalar access)."""

    direction: str
    n: int
    a: list[float]
    b: list[float]
    s: list[float]
    L: list[float]
    kappa: list[int]
    tau: list[list[int]]
    dist: list[list[int]]
    locations: list[int]

    def route_distance(self, stops: Sequence[int]) -> int:
        d = self.dist
        return sum(d[u][v] for u, v in zip(stops[:-1], stops[1:]))

    def nodes(self) -> list[Location]:
        n = self.n
        return [
            Location(
                node=u,
                location=self.locations[u],
                window_start=self.a[u],
                window_end=self.b[u],
                service=self.s[u],
                demand=self.kappa[u],
                ride_limit=self.L[u] if u < n else None,
            )
            for u in range(2 * n)
        ]


def derive_time_windows(
    commuter: Commuter,
    delta: float,
    detour_ratio: float,
    tau: np.ndarray | Sequence[Sequence[int]],
    service: float = 0.0,
    n: int | None = None,
) -> tuple[Location, Location, Location, Location]:
    """Windows for (inbound pickup, inbound drop-off, outbound pickup, outbound drop-off).

    The commuter fixes the inbound arrival and the outbound departure; the other
    two windows follow from the direct travel time and the ride limit
    ``(1 + R) * tau``.
    """
    if delta < 0 or detour_ratio < 0:
        raise InstanceError("delta and detour ratio must be non-negative")
    n = commuter.id + 1 if n is None else n
    i = commuter.id
    s = float(service)

    tin = commuter.inbound
    direct_in = float(tau[tin.origin][tin.destination])
    limit_in = (1.0 + detour_ratio) * direct_in
    at = tin.desired_arrival
    d_a, d_b = at - delta, at + delta
    o_a, o_b = d_a - s - limit_in, d_b - s - direct_in

    tout = commuter.outbound
    direct_out = float(tau[tout.origin][tout.destination])
    limit_out = (1.0 + detour_ratio) * direct_out
    dt = tout.desired_departure
    p_a, p_b = dt - delta, dt + delta
    q_a, q_b = p_a + s + direct_out, p_b + s + limit_out

    for lo, hi in ((o_a, o_b), (d_a, d_b), (p_a, p_b), (q_a, q_b)):
        if lo > hi:
            raise InstanceError(f"empty time window [{lo}, {hi}] for commuter {i}")

    return (
        Location(i, tin.origin, o_a, o_b, s, 1, limit_in),
        Location(n + i, tin.destination, d_a, d_b, s, 0, None),
        Location(i, tout.origin, p_a, p_b, s, 1, limit_out),
        Location(n + i, tout.destination, q_a, q_b, s, 0, None),
    )


def shortest_path_closure(m: np.ndarray) -> np.ndarray:
    """Floyd-Warshall closure; keeps the dtype of ``m``."""
    d = np.array(m, copy=True)
    for k in range(d.shape[0]):
        np.minimum(d, d[:, k, None] + d[None, k, :], out=d)
    return d


def triangle_violations(m: np.ndarray) -> int:
    m = np.asarray(m)
    count = 0
    for k in range(m.shape[0]):
        count += int(np.count_nonzero(m[:, k, None] + m[None, k, :] < m))
    return count


@dataclass(frozen=True)
class EuclideanTravelModel:
    """Straight-line travel: ceil for seconds, nearest integer for meters."""

    speed: float = DEFAULT_SPEED

    def matrices(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        eu = np.sqrt(((p[:, None, :] - p[None, :, :]) ** 2).sum(axis=-1))
        # guard against 1e-13 noise pushing exact multiples over the ceiling
        tau = np.ceil(np.round(eu / self.speed, 9)).astype(np.int64)
        dist = np.rint(eu).astype(np.int64)
        return shortest_path_closure(tau), shortest_path_closure(dist)


@dataclass
class Instance:
    commuters: list[Commuter]
    points: np.ndarray
    tau: np.ndarray
    dist: np.ndarray
    capacity: int = 4
    delta: float = 600.0
    detour_ratio: float = 0.5
    fixed_cost_multiplier: float = 1000.0
    service: float = 0.0
    name: str = ""
    _views: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.int64)
        self.dist = np.asarray(self.dist, dtype=np.int64)
        for idx, c in enumerate(self.commuters):
            if c.id != idx:
                raise InstanceError("commuter ids must be 0..n-1 in order")
        self._build_views()

    @property
    def n(self) -> int:
        return len(self.commuters)

    def _build_views(self) -> None:
        n = self.n
        tau_l = self.tau.tolist()
        per_dir = {INBOUND: [None] * (2 * n), OUTBOUND: [None] * (2 * n)}
        for c in self.commuters:
            io, idn, oo, od = derive_time_windows(
                c, self.delta, self.detour_ratio, tau_l, self.service, n
            )
            per_dir[INBOUND][c.id], per_dir[INBOUND][n + c.id] = io, idn
            per_dir[OUTBOUND][c.id], per_dir[OUTBOUND][n + c.id] = oo, od
        for direction, locs in per_dir.items():
            ids = np.array([loc.location for loc in locs], dtype=np.int64)
            sub_tau = self.tau[np.ix_(ids, ids)] if n else np.zeros((0, 0), np.int64)
            sub_dist = self.dist[np.ix_(ids, ids)] if n else np.zeros((0, 0), np.int64)
            self._views[direction] = DirectionView(
                direction=direction,
                n=n,
                a=[loc.window_start for loc in locs],
                b=[loc.window_end for loc in locs],
                s=[loc.service for loc in locs],
                L=[loc.ride_limit if loc.ride_limit is not None else math.inf for loc in locs],
                kappa=[loc.demand for loc in locs],
                tau=sub_tau.tolist(),
                dist=sub_dist.tolist(),
                locations=ids.tolist(),
            )

    def view(self, direction: str) -> DirectionView:
        return self._views[direction]

    @property
    def inbound(self) -> DirectionView:
        return self._views[INBOUND]

    @property
    def outbound(self) -> DirectionView:
        return self._views[OUTBOUND]

    def with_params(self, **changes) -> "Instance":
        """Copy with different K / delta / R / M / service; windows re-derived."""
        allowed = {"capacity", "delta", "detour_ratio", "fixed_cost_multiplier", "service", "name"}
        bad = set(changes) - allowed
        if bad:
            raise TypeError(f"cannot change {sorted(bad)}")
        return replace(self, **changes)

    def subset(self, commuter_ids: Iterable[int], name: str = "") -> "Instance":
        """Sub-instance over the given commuters, renumbered 0..k-1."""
        chosen = [self.commuters[i] for i in commuter_ids]
        used = sorted({loc for c in chosen for loc in (c.inbound.origin, c.inbound.destination,
                                                       c.outbound.origin, c.outbound.destination)})
        remap = {old: new for new, old in enumerate(used)}

        def _trip(t: Trip) -> Trip:
            return replace(t, origin=remap[t.origin], destination=remap[t.destination])

        commuters = [
            Commuter(k, _trip(c.inbound), _trip(c.outbound), c.home) for k, c in enumerate(chosen)
        ]
        idx = np.array(used, dtype=np.int64)
        return Instance(
            commuters=commuters,
            points=self.points[idx] if len(idx) else np.zeros((0, 2)),
            tau=self.tau[np.ix_(idx, idx)],
            dist=self.dist[np.ix_(idx, idx)],
            capacity=self.capacity,
            delta=self.delta,
            detour_ratio=self.detour_ratio,
            fixed_cost_multiplier=self.fixed_cost_multiplier,
            service=self.service,
            name=name or self.name,
        )

    # -- serialization ---------------------------------------------------

    def to_dict(self, include_matrices: bool = True) -> dict:
        def _trip(t: Trip) -> dict:
            return {"o": t.origin, "dt": t.desired_departure, "d": t.destination, "at": t.desired_arrival}

        out = {
            "name": self.name,
            "capacity": self.capacity,
            "delta_s": self.delta,
            "detour_ratio": self.detour_ratio,
            "fixed_cost_multiplier": self.fixed_cost_multiplier,
            "service_s": self.service,
            "commuters": [
                {"id": c.id, "home": list(c.home), "inbound": _trip(c.inbound), "outbound": _trip(c.outbound)}
                for c in self.commuters
            ],
            "locations": [{"id": i, "x": float(p[0]), "y": float(p[1])} for i, p in enumerate(self.points)],
        }
        if include_matrices:
            out["tau"] = self.tau.tolist()
            out["delta"] = self.dist.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict, travel_model: EuclideanTravelModel | None = None) -> "Instance":
        def _trip(d: dict, direction: str) -> Trip:
            return Trip(int(d["o"]), int(d["d"]), d.get("dt"), d.get("at"), direction)

        commuters = [
            Commuter(int(c["id"]), _trip(c["inbound"], INBOUND), _trip(c["outbound"], OUTBOUND),
                     tuple(c.get("home", (0.0, 0.0))))
            for c in data["commuters"]
        ]
        locs = sorted(data.get("locations", []), key=lambda r: r["id"])
        points = np.array([[r["x"], r["y"]] for r in locs], dtype=float).reshape(-1, 2)
        return build_instance(
            commuters,
            points,
            travel_model=travel_model,
            capacity=int(data.get("capacity", 4)),
            delta=float(data.get("delta_s", 600)),
            detour_ratio=float(data.get("detour_ratio", 0.5)),
            fixed_cost_multiplier=float(data.get("fixed_cost_multiplier", 1000)),
            service=float(data.get("service_s", 0)),
            tau=data.get("tau"),
            dist=data.get("delta"),
            name=data.get("name", ""),
        )

    def save(self, path: str | Path, include_matrices: bool = True) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_matrices)))

    @classmethod
    def load(cls, path: str | Path) -> "Instance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_instance(
    commuters: Sequence[Commuter],
    points: np.ndarray | Sequence[Sequence[float]],
    travel_model: EuclideanTravelModel | None = None,
    capacity: int = 4,
    delta: float = 600.0,
    detour_ratio: float = 0.5,
    fixed_cost_multiplier: float = 1000.0,
    service: float = 0.0,
    tau=None,
    dist=None,
    name: str = "",
) -> Instance:
    """Assemble and validate an instance.

    ``points`` holds the coordinates of every location id referenced by the
    trips. Matrices not supplied are produced by ``travel_model``.
    """
    if not commuters:
        raise InstanceError("an instance needs at least one commuter")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if tau is None or dist is None:
        model = travel_model or EuclideanTravelModel()
        gen_tau, gen_dist = model.matrices(pts)
        tau = gen_tau if tau is None else tau
        dist = gen_dist if dist is None else dist
    tau_a = np.asarray(tau, dtype=float)
    dist_a = np.asarray(dist, dtype=float)
    for label, m in (("travel time", tau_a), ("distance", dist_a)):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InstanceError(f"{label} matrix must be square")
        if (m < 0).any():
            raise InstanceError(f"{label} matrix has negative entries")
    if not np.array_equal(dist_a, np.round(dist_a)):
        raise InstanceError("distances must be integral")
    if not np.array_equal(tau_a, np.round(tau_a)):
        raise InstanceError("travel times must be integral seconds")
    for label, m in (("travel time", tau_a), ("distance", dist_a)):
        if triangle_violations(m):
            raise InstanceError(f"{label} matrix violates the triangle inequality")
    return Instance(
        commuters=[_fill_trip_times(c, tau_a) for c in commuters],
        points=pts,
        tau=tau_a.astype(np.int64),
        dist=dist_a.astype(np.int64),
        capacity=int(capacity),
        delta=float(delta),
        detour_ratio=float(detour_ratio),
        fixed_cost_multiplier=float(fixed_cost_multiplier),
        service=float(service),
        name=name,
    )


def _fill_trip_times(c: Commuter, tau: np.ndarray) -> Commuter:
    """Complete unset desired times with the direct travel time."""
    tin, tout = c.inbound, c.outbound
    if tin.desired_departure is None and tin.desired_arrival is not None:
        tin = replace(tin, desired_departure=int(tin.desired_arrival - tau[tin.origin, tin.destination]))
    if tout.desired_arrival is None and tout.desired_departure is not None:
        tout = replace(tout, desired_arrival=int(tout.desired_departure + tau[tout.origin, tout.destination]))
    return replace(c, inbound=tin, outbound=tout)


def make_commuters(
    homes: Sequence[Sequence[float]],
    workplaces: Sequence[Sequence[float]],
    work_index: Sequence[int],
    arrivals: Sequence[int],
    departures: Sequence[int],
) -> tuple[list[Commuter], np.ndarray]:
    """Commuters plus the location table (homes first, then workplaces).

    Desired inbound departure and outbound arrival are left unset here and
    filled in from direct travel times by ``build_instance``; only the inbound
    arrival and outbound departure drive the time windows.
    """
    n = len(homes)
    points = np.vstack([np.asarray(homes, float).reshape(-1, 2), np.asarray(workplaces, float).reshape(-1, 2)])
    commuters = []
    for i in range(n):
        w = n + int(work_index[i])
        commuters.append(
            Commuter(
                id=i,
                inbound=Trip(i, w, None, int(arrivals[i]), INBOUND),
                outbound=Trip(w, i, int(departures[i]), None, OUTBOUND),
                home=(float(homes[i][0]), float(homes[i][1])),
            )
        )
    return commuters, points
