"""Command line entry point: ``ctsp <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .bnp import BpaError, root_heuristic, solve_bpa
from .cluster import DEFAULT_RESTARTS, cluster_commuters, write_clusters
from .enumeration import enumerate_routes
from .harness import (RECORD_FIELDS, ExperimentConfig, PopulationSpec, RunRecord, generate_population,
                      monotone_violations, record, run_experiment, save_population)
from .master import Plan, solve_rea
from .model import DIRECTIONS, Instance


def _emit(plan: Plan, inst: Instance, args, algorithm: str, seconds: float) -> None:
    rec = record(inst, plan, RunRecord(0, inst.n, inst.capacity, 0, inst.delta, inst.detour_ratio, algorithm),
                 seconds)
    text = json.dumps(plan.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    if args.stats:
        path = Path(args.stats)
        new = not path.exists()
        with path.open("a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RECORD_FIELDS)
            if new:
                w.writeheader()
            w.writerow(asdict(rec))
    logging.info("%s: %d vehicles, distance %d, gap %.4f, %.1fs", algorithm, plan.vehicle_count,
                 plan.total_distance, plan.gap, seconds)


def _load(args) -> Instance:
    inst = Instance.load(args.instance)
    changes = {}
    if getattr(args, "capacity", None) is not None:
        changes["capacity"] = args.capacity
    if getattr(args, "delta", None) is not None:
        changes["delta"] = args.delta
    if getattr(args, "ratio", None) is not None:
        changes["detour_ratio"] = args.ratio
    return inst.with_params(**changes) if changes else inst


def cmd_gen(args) -> int:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    if args.count is not None:
        data["count"] = args.count
    if args.seed is not None:
        data["seed"] = args.seed
    spec = PopulationSpec.from_dict(data)
    pop = generate_population(spec)
    if len(pop) == 0:
        print("empty population, nothing written", file=sys.stderr)
        return 0
    save_population(pop, args.out)
    return 0


def cmd_bench(args) -> int:
    grid_path = Path(args.grid)
    cfg = ExperimentConfig.from_dict(json.loads(grid_path.read_text()))
    if args.workers is not None:
        cfg.workers = args.workers
    inst = cfg.instance(grid_path.parent)
    exp = run_experiment(cfg, args.out, inst)
    bad = monotone_violations(exp.summary)
    for line in bad:
        logging.warning("trend violation: %s", line)
    failed = sum(r.status == "error" for r in exp.records)
    print(f"{len(exp.records)} runs, {failed} failed, {len(bad)} trend violations; results in {args.out}")
    return 0


def cmd_enumerate(args) -> int:
    inst = _load(args)
    out = Path(args.out)
    if out.exists():
        out.unlink()
    total = 0
    for d in DIRECTIONS if args.direction == "both" else (args.direction,):
        pool = enumerate_routes(inst, d, workers=args.workers)
        pool.to_jsonl(out, append=True)
        total += len(pool)
    print(f"{total} routes written to {out}")
    return 0


def cmd_cluster(args) -> int:
    inst = Instance.load(args.instance)
    c = cluster_commuters(inst, args.max_size, args.restarts, args.seed, args.workers)
    manifest = write_clusters(inst, c, args.out_dir)
    print(f"{c.k} clusters, sizes {c.sizes()}, objective {c.objective:.1f}; manifest {manifest}")
    return 0


def cmd_solve_rea(args) -> int:
    inst = _load(args)
    start = time.perf_counter()
    plan = solve_rea(inst, time_budget=args.time_limit, workers=args.threads)
    _emit(plan, inst, args, "rea", time.perf_counter() - start)
    return 0


def cmd_solve_bpa(args) -> int:
    inst = _load(args)
    start = time.perf_counter()
    try:
        plan = solve_bpa(inst, time_limit=args.time_limit, threads=args.threads)
    except BpaError as exc:
        print(f"error: {exc} (bound {exc.bound})", file=sys.stderr)
        return 2
    _emit(plan, inst, args, "bpa", time.perf_counter() - start)
    return 0


def cmd_heuristic(args) -> int:
    inst = _load(args)
    start = time.perf_counter()
    plan = root_heuristic(inst, t_rmp=args.t_rmp, t_mip=args.t_mip, relax_forbidden=args.relax_forbidden,
                          threads=args.threads)
    _emit(plan, inst, args, "heuristic", time.perf_counter() - start)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctsp", description="Commute trip sharing solvers")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic population instance")
    g.add_argument("--spec", help="population spec JSON (PopulationSpec fields)")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    b = sub.add_parser("bench", help="run an experiment grid")
    b.add_argument("--grid", required=True, help="ExperimentConfig JSON")
    b.add_argument("--out", required=True, help="output directory for CSV files")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bench)

    def instance_args(q, solver=True):
        q.add_argument("--instance", required=True)
        q.add_argument("--capacity", type=int, help="override K")
        q.add_argument("--delta", type=float, help="override the time-window shift (seconds)")
        q.add_argument("--ratio", type=float, help="override the ride-time ratio")
        if solver:
            q.add_argument("--out", help="solution JSON path (default stdout)")
            q.add_argument("--stats", help="append a stats CSV row here")

    e = sub.add_parser("enumerate", help="dump every feasible route as JSON lines")
    instance_args(e, solver=False)
    e.add_argument("--direction", choices=("inbound", "outbound", "both"), default="both")
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enumerate)

    c = sub.add_parser("cluster", help="split an instance by capacity-constrained k-means")
    c.add_argument("--instance", required=True)
    c.add_argument("--max-size", type=int, required=True)
    c.add_argument("--restarts", type=int, default=DEFAULT_RESTARTS)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--workers", type=int, default=1)
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_cluster)

    r = sub.add_parser("solve-rea", help="route enumeration plus binary program")
    instance_args(r)
    r.add_argument("--time-limit", type=float)
    r.add_argument("--threads", type=int, default=1)
    r.set_defaults(func=cmd_solve_rea)

    s = sub.add_parser("solve-bpa", help="branch-and-price")
    instance_args(s)
    s.add_argument("--time-limit", type=float)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_solve_bpa)

    h = sub.add_parser("heuristic", help="root-node column generation plus one MIP")
    instance_args(h)
    h.add_argument("--t-rmp", type=float, default=480.0)
    h.add_argument("--t-mip", type=float, default=120.0)
    h.add_argument("--relax-forbidden", action="store_true")
    h.add_argument("--threads", type=int, default=1)
    h.set_defaults(func=cmd_heuristic)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
