"""Synthetic populations, plan checks, experiment grids and solver cross-checks.

Arrival and departure times follow two-component truncated-normal mixtures
with a morning and an evening peak.  The default parameters are made up to
give that shape; they are not fitted to any data set.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import truncnorm

from .bnp import root_heuristic, solve_bpa
from .cluster import cluster_commuters
from .enumeration import valid_orderings
from .master import Plan, solve_rea
from .model import DIRECTIONS, INBOUND, OUTBOUND, Instance, build_instance, make_commuters
from .schedule import feasible, is_valid

log = logging.getLogger(__name__)

HOUR = 3600.0
ALGORITHMS = ("rea", "bpa", "heuristic")


# -- populations -------------------------------------------------------------------


@dataclass(frozen=True)
class Component:
    weight: float
    mean: float  # seconds after midnight
    sd: float
    low: float
    high: float


def _h(hh: float, mm: float = 0.0) -> float:
    return hh * HOUR + mm * 60.0


ARRIVAL_MIX = (Component(0.7, _h(8), 40 * 60.0, _h(6), _h(10)),
               Component(0.3, _h(9, 30), 90 * 60.0, _h(5), _h(13)))
DEPARTURE_MIX = (Component(0.7, _h(17, 15), 45 * 60.0, _h(15), _h(20)),
                 Component(0.3, _h(16), 120 * 60.0, _h(13, 30), _h(23)))


def _dist(c: Component):
    return truncnorm((c.low - c.mean) / c.sd, (c.high - c.mean) / c.sd, loc=c.mean, scale=c.sd)


def mixture_cdf(mix: Sequence[Component], t: float | np.ndarray) -> np.ndarray:
    total = sum(c.weight for c in mix)
    return sum(c.weight / total * _dist(c).cdf(t) for c in mix)


def sample_mixture(mix: Sequence[Component], size: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Integer-second samples and the component each came from."""
    w = np.array([c.weight for c in mix], float)
    labels = rng.choice(len(mix), size=size, p=w / w.sum())
    out = np.empty(size)
    for k, c in enumerate(mix):
        idx = np.flatnonzero(labels == k)
        if idx.size:
            out[idx] = _dist(c).rvs(size=idx.size, random_state=rng)
    return np.clip(np.round(out), 0, 24 * HOUR - 1).astype(np.int64), labels


@dataclass
class PopulationSpec:
    count: int
    extent: float = 12_000.0
    workplaces: list[tuple[float, float]] | None = None  # default: a few near the middle
    arrivals: tuple[Component, ...] = ARRIVAL_MIX
    departures: tuple[Component, ...] = DEPARTURE_MIX
    seed: int = 0
    capacity: int = 4
    delta: float = 600.0
    detour_ratio: float = 0.5
    name: str = ""

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("commuter count must be non-negative")
        for mix in (self.arrivals, self.departures):
            for c in mix:
                if not (0 <= c.low < c.high <= 24 * HOUR) or c.weight < 0 or c.sd <= 0:
                    raise ValueError(f"bad mixture component {c}")
        if max(c.high for c in self.arrivals) >= min(c.low for c in self.departures):
            raise ValueError("arrival support must end before departure support starts")

    def workplace_points(self) -> np.ndarray:
        if self.workplaces is not None:
            return np.asarray(self.workplaces, float).reshape(-1, 2)
        m = self.extent / 2
        off = self.extent / 10
        return np.array([[m, m], [m + off, m], [m - off, m + off], [m, m - off]])

    @classmethod
    def from_dict(cls, data: dict) -> "PopulationSpec":
        data = dict(data)
        for key in ("arrivals", "departures"):
            if key in data:
                data[key] = tuple(Component(**c) for c in data[key])
        if "workplaces" in data and data["workplaces"] is not None:
            data["workplaces"] = [tuple(p) for p in data["workplaces"]]
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arrivals"] = [asdict(c) for c in self.arrivals]
        out["departures"] = [asdict(c) for c in self.departures]
        return out


@dataclass
class Population:
    homes: np.ndarray
    workplaces: np.ndarray
    work_index: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    spec: PopulationSpec

    def __len__(self) -> int:
        return len(self.homes)

    def to_instance(self, **params) -> Instance:
        if len(self) == 0:
            raise ValueError("empty population")
        commuters, points = make_commuters(self.homes, self.workplaces, self.work_index,
                                           self.arrivals, self.departures)
        kw = dict(capacity=self.spec.capacity, delta=self.spec.delta, detour_ratio=self.spec.detour_ratio,
                  name=self.spec.name or f"pop-{len(self)}-{self.spec.seed}")
        kw.update(params)
        return build_instance(commuters, points, **kw)


def generate_population(spec: PopulationSpec) -> Population:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.count
    works = spec.workplace_points()
    homes = np.round(rng.uniform(0, spec.extent, size=(n, 2)), 1)
    work_index = rng.integers(0, len(works), size=n)
    arrivals, _ = sample_mixture(spec.arrivals, n, rng)
    departures, _ = sample_mixture(spec.departures, n, rng)
    return Population(homes, works, work_index, arrivals, departures, spec)


# -- plan checks ---------------------------------------------------------------------


class PlanError(AssertionError):
    pass


def validate_plan(instance: Instance, plan: Plan) -> None:
    """Coverage, driver balance, even route count and per-route feasibility."""
    n = instance.n
    drivers = {}
    for direction in DIRECTIONS:
        routes = [r for r in plan.routes if r.direction == direction]
        covered = sorted(i for r in routes for i in r.riders(n))
        if covered != list(range(n)):
            raise PlanError(f"{direction} routes cover {covered}, expected every commuter once")
        view = instance.view(direction)
        for r in routes:
            if not is_valid(r.stops, r.driver, n, instance.capacity):
                raise PlanError(f"malformed route {r.stops}")
            if feasible(r.stops, view) is None:
                raise PlanError(f"route {r.stops} ({direction}) has no feasible schedule")
            if r.distance != view.route_distance(r.stops):
                raise PlanError(f"route {r.stops} reports distance {r.distance}")
        drivers[direction] = sorted(r.driver for r in routes)
    if drivers[INBOUND] != drivers[OUTBOUND]:
        raise PlanError("inbound and outbound driver sets differ")
    if plan.route_count % 2:
        raise PlanError("odd number of routes")


def ride_stats(instance: Instance, plan: Plan) -> tuple[float, float]:
    """(average ride time, average direct travel time) over all 2n trips."""
    n = instance.n
    rides, direct = [], []
    for r in plan.routes:
        view = instance.view(r.direction)
        sch = feasible(r.stops, view)
        for i in r.riders(n):
            rides.append(sch.ride_times[i])
            direct.append(view.tau[i][n + i])
    if not rides:
        return 0.0, 0.0
    return float(np.mean(rides)), float(np.mean(direct))


def no_sharing(instance: Instance) -> dict:
    n = instance.n
    dist = sum(instance.view(d).dist[i][n + i] for d in DIRECTIONS for i in range(n))
    direct = np.mean([instance.view(d).tau[i][n + i] for d in DIRECTIONS for i in range(n)])
    return {"vehicles": n, "distance": int(dist), "avg_ride": float(direct)}


# -- brute force ---------------------------------------------------------------------------


def _group_costs(instance: Instance, direction: str) -> dict[tuple[int, int], int]:
    """(driver, member bitmask) -> cheapest feasible distance, by trying every ordering."""
    view = instance.view(direction)
    n, K = instance.n, instance.capacity
    out = {}
    for size in range(1, K + 1):
        for members in itertools.combinations(range(n), size):
            mask = sum(1 << i for i in members)
            for d in members:
                best = None
                for stops in valid_orderings(members, d, n, K):
                    dist = view.route_distance(stops)
                    if (best is None or dist < best) and feasible(stops, view) is not None:
                        best = dist
                if best is not None:
                    out[(d, mask)] = best
    return out


def brute_force_key(instance: Instance) -> tuple[int, int]:
    """Lexicographic (vehicles, distance) optimum by dynamic programming over partitions."""
    n = instance.n
    if n > 8:
        raise ValueError("brute force is limited to 8 commuters")
    full = (1 << n) - 1
    tables = {}
    for direction in DIRECTIONS:
        groups = _group_costs(instance, direction)
        by_low: dict[int, list[tuple[int, int, int]]] = {}
        for (d, mask), dist in groups.items():
            low = (mask & -mask).bit_length() - 1
            by_low.setdefault(low, []).append((mask, d, dist))
        # state: covered mask -> {driver mask: distance}
        states: dict[int, dict[int, int]] = {0: {0: 0}}
        for covered in sorted(range(full + 1), key=lambda m: m.bit_count()):
            if covered not in states or covered == full:
                continue
            free = ~covered & full
            low = (free & -free).bit_length() - 1
            for mask, d, dist in by_low.get(low, ()):
                if mask & covered:
                    continue
                nxt = states.setdefault(covered | mask, {})
                for dm, val in states[covered].items():
                    key = dm | (1 << d)
                    if val + dist < nxt.get(key, math.inf):
                        nxt[key] = val + dist
        tables[direction] = states.get(full, {})
    best = None
    for dm, d_in in tables[INBOUND].items():
        d_out = tables[OUTBOUND].get(dm)
        if d_out is not None:
            key = (dm.bit_count(), d_in + d_out)
            if best is None or key < best:
                best = key
    if best is None:
        raise ValueError("no plan: some commuter cannot even drive alone")
    return best


@dataclass
class CrossReport:
    rea: tuple[int, int]
    bpa: tuple[int, int]
    brute: tuple[int, int] | None
    rea_plan: Plan
    bpa_plan: Plan

    @property
    def ok(self) -> bool:
        return self.rea == self.bpa and (self.brute is None or self.brute == self.rea)


def cross_validate(instance: Instance, brute_limit: int = 6, time_limit: float | None = None) -> CrossReport:
    """REA vs BPA (and brute force on small instances), both plans validated."""
    rea = solve_rea(instance, time_budget=time_limit)
    bpa = solve_bpa(instance, time_limit=time_limit)
    validate_plan(instance, rea)
    validate_plan(instance, bpa)
    brute = brute_force_key(instance) if instance.n <= brute_limit else None
    report = CrossReport(rea.key(), bpa.key(), brute, rea, bpa)
    if not report.ok:
        log.error("solver disagreement on %s: rea %s bpa %s brute %s", instance.name, rea.key(), bpa.key(), brute)
    return report


# -- experiments -------------------------------------------------------------------------------


@dataclass
class RunRecord:
    cluster: int
    cluster_size: int
    K: int
    N: int
    delta_s: float
    detour_ratio: float
    algorithm: str
    status: str = ""
    columns: int = 0
    in_edges: int = 0
    out_edges: int = 0
    tree_nodes: int = 0
    vehicles: int = 0
    distance: int = 0
    avg_ride: float = 0.0
    avg_direct: float = 0.0
    gap: float = 0.0
    integrality_gap: float = 0.0
    t_rmp: float = 0.0
    t_root: float = 0.0
    t_best: float = 0.0
    t_total: float = 0.0
    error: str = ""


RECORD_FIELDS = [f.name for f in fields(RunRecord)]


def solve(instance: Instance, algorithm: str, time_limit: float | None = None, threads: int = 1,
          t_rmp: float = 480.0, t_mip: float = 120.0) -> Plan:
    if algorithm == "rea":
        return solve_rea(instance, time_budget=time_limit, workers=threads)
    if algorithm == "bpa":
        return solve_bpa(instance, time_limit=time_limit, threads=threads)
    if algorithm == "heuristic":
        return root_heuristic(instance, t_rmp=t_rmp, t_mip=t_mip, threads=threads)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def record(instance: Instance, plan: Plan, base: RunRecord, seconds: float) -> RunRecord:
    """Validate ``plan`` and fill the record; raises PlanError on a bad plan."""
    validate_plan(instance, plan)
    st = plan.stats
    rec = RunRecord(**asdict(base))
    rec.status = plan.status
    rec.vehicles = plan.vehicle_count
    rec.distance = plan.total_distance
    rec.avg_ride, rec.avg_direct = ride_stats(instance, plan)
    rec.gap = float(min(1.0, max(0.0, plan.gap)))
    rec.columns = int(st.get("columns", 0))
    rec.in_edges = int(st.get("in_edges", st.get("columns_inbound", 0)))
    rec.out_edges = int(st.get("out_edges", st.get("columns_outbound", 0)))
    rec.tree_nodes = int(st.get("tree_nodes", st.get("mip_nodes", 0)))
    root = st.get("root_z", st.get("root_lp"))
    if root is not None and plan.objective > 0:
        rec.integrality_gap = float(min(1.0, max(0.0, (plan.objective - root) / plan.objective)))
    rec.t_rmp = float(st.get("t_root_lp", st.get("t_rmp_used", 0.0)))
    rec.t_root = float(st.get("t_root_mip", st.get("enumeration_seconds", 0.0)))
    rec.t_best = float(st.get("t_best", seconds))
    rec.t_total = seconds
    return rec


def _run_cell(args) -> list[RunRecord]:
    subs, K, N, delta, ratio, algorithm, opts = args
    out = []
    for u, sub in subs:
        inst = sub.with_params(capacity=K, delta=delta, detour_ratio=ratio)
        base = RunRecord(u, inst.n, K, N, delta, ratio, algorithm)
        start = time.perf_counter()
        try:
            if K == 1:
                plan = _singles_plan(inst)
            else:
                plan = solve(inst, algorithm, opts.get("time_limit"), 1, opts.get("t_rmp", 480.0),
                             opts.get("t_mip", 120.0))
            out.append(record(inst, plan, base, time.perf_counter() - start))
        except Exception as exc:  # recorded, not fatal
            base.status = "error"
            base.error = f"{type(exc).__name__}: {exc}"
            base.t_total = time.perf_counter() - start
            log.debug("run failed: %s", traceback.format_exc())
            out.append(base)
    return out


def _singles_plan(instance: Instance) -> Plan:
    """No sharing: everyone drives alone (the only plan when K = 1)."""
    from .model import Route

    n = instance.n
    routes = []
    for d in DIRECTIONS:
        view = instance.view(d)
        for i in range(n):
            sch = feasible((i, n + i), view)
            if sch is None:
                raise PlanError(f"commuter {i} cannot drive alone ({d})")
            routes.append(Route(d, i, (i, n + i), view.dist[i][n + i], sch.times))
    return Plan(routes, float(len(routes)), 0.0, "optimal", {"columns": len(routes)})


@dataclass
class ExperimentConfig:
    population: str | dict  # instance file, or a PopulationSpec dict
    algorithms: list[str] = field(default_factory=lambda: ["rea"])
    K: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    N: list[int] = field(default_factory=lambda: [20])
    delta_min: list[float] = field(default_factory=lambda: [5, 10, 15])
    ratio: list[float] = field(default_factory=lambda: [0.25, 0.5, 0.75])
    time_limit: float | None = None
    t_rmp: float = 480.0
    t_mip: float = 120.0
    restarts: int = 100
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return cls(**data)

    def instance(self, base: Path | None = None) -> Instance:
        if isinstance(self.population, dict):
            return generate_population(PopulationSpec.from_dict(self.population)).to_instance()
        path = Path(self.population)
        if base is not None and not path.is_absolute():
            path = base / path
        return Instance.load(path)


@dataclass
class Experiment:
    records: list[RunRecord]
    summary: list[dict]


SUMMARY_FIELDS = ["algorithm", "N", "K", "delta_s", "detour_ratio", "runs", "failed", "vehicles", "distance",
                  "avg_ride", "vehicles_pct", "distance_pct", "avg_ride_pct"]


def summarize(records: Sequence[RunRecord], baseline: dict) -> list[dict]:
    cells: dict[tuple, list[RunRecord]] = {}
    for r in records:
        cells.setdefault((r.algorithm, r.N, r.K, r.delta_s, r.detour_ratio), []).append(r)
    out = []
    for (alg, N, K, delta, ratio), recs in sorted(cells.items()):
        ok = [r for r in recs if r.status != "error"]
        vehicles = sum(r.vehicles for r in ok)
        distance = sum(r.distance for r in ok)
        trips = sum(2 * r.cluster_size for r in ok)
        avg_ride = sum(r.avg_ride * 2 * r.cluster_size for r in ok) / trips if trips else 0.0
        row = {"algorithm": alg, "N": N, "K": K, "delta_s": delta, "detour_ratio": ratio, "runs": len(recs),
               "failed": len(recs) - len(ok), "vehicles": vehicles, "distance": distance, "avg_ride": avg_ride}
        row["vehicles_pct"] = 100.0 * vehicles / baseline["vehicles"] if baseline["vehicles"] else 0.0
        row["distance_pct"] = 100.0 * distance / baseline["distance"] if baseline["distance"] else 0.0
        row["avg_ride_pct"] = 100.0 * avg_ride / baseline["avg_ride"] if baseline["avg_ride"] else 0.0
        out.append(row)
    return out


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None,
                   instance: Instance | None = None) -> Experiment:
    """Cluster once per N (homes only), then solve every cluster for each grid cell."""
    inst = instance if instance is not None else config.instance()
    opts = {"time_limit": config.time_limit, "t_rmp": config.t_rmp, "t_mip": config.t_mip}
    tasks = []
    for N in config.N:
        clustering = cluster_commuters(inst, N, config.restarts, config.seed)
        subs = [(u, inst.subset(ids, name=f"{inst.name}-N{N}-c{u}"))
                for u, ids in enumerate(clustering.members()) if ids]
        for alg, K, dmin, ratio in itertools.product(config.algorithms, config.K, config.delta_min, config.ratio):
            tasks.append((subs, K, N, float(dmin) * 60.0, float(ratio), alg, opts))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            parts = list(ex.map(_run_cell, tasks))
    else:
        parts = [_run_cell(t) for t in tasks]
    records = [r for part in parts for r in part]
    summary = summarize(records, no_sharing(inst))
    if out_dir is not None:
        write_csv(Path(out_dir) / "runs.csv", [asdict(r) for r in records], RECORD_FIELDS)
        write_csv(Path(out_dir) / "summary.csv", summary, SUMMARY_FIELDS)
        for axis, col in (("delta", "delta_s"), ("ratio", "detour_ratio"), ("capacity", "K")):
            write_csv(Path(out_dir) / f"trend_{axis}.csv",
                      sorted(summary, key=lambda r: (r["algorithm"], r["N"], r[col])), SUMMARY_FIELDS)
    return Experiment(records, summary)


def write_csv(path: Path, rows: Sequence[dict], columns: Sequence[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in columns})


def monotone_violations(summary: Sequence[dict]) -> list[str]:
    """Cells where relaxing one of delta, ratio or K raised the vehicle count."""
    by_key = {(r["algorithm"], r["N"], r["K"], r["delta_s"], r["detour_ratio"]): r for r in summary}
    bad = []
    for (alg, N, K, delta, ratio), row in by_key.items():
        if row["failed"]:
            continue
        for pos in (2, 3, 4):
            axis = sorted({k[pos] for k in by_key if k[:pos] == (alg, N, K, delta, ratio)[:pos]
                           and k[pos + 1:] == (alg, N, K, delta, ratio)[pos + 1:]})
            idx = axis.index((alg, N, K, delta, ratio)[pos])
            if idx + 1 < len(axis):
                nxt = list((alg, N, K, delta, ratio))
                nxt[pos] = axis[idx + 1]
                other = by_key[tuple(nxt)]
                if not other["failed"] and other["vehicles"] > row["vehicles"]:
                    bad.append(f"{tuple(nxt)} uses {other['vehicles']} > {row['vehicles']} at "
                               f"{(alg, N, K, delta, ratio)}")
    return bad


def save_population(pop: Population, path: str | Path) -> Instance:
    inst = pop.to_instance()
    inst.save(path)
    Path(str(path) + ".spec.json").write_text(json.dumps(pop.spec.to_dict(), indent=1))
    return inst
