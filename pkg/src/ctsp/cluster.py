"""Capacity-constrained k-means over commuter homes.

Each Lloyd step assigns points to centers by an exact generalized-assignment
program (every point once, at most ``N`` points per center, minimum total
Euclidean distance), then moves each center to the mean of its points.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .lpmip import EQ, LE, LinearProgram, solve_binary_mip
from .model import Instance

log = logging.getLogger(__name__)

MAX_ITERATIONS = 500
DEFAULT_RESTARTS = 100


class ClusterError(ValueError):
    pass


@dataclass
class Clustering:
    centers: np.ndarray
    assignment: np.ndarray  # center index per point
    objective: float
    max_size: int
    seed: int | None = None
    restarts: int = 1
    iterations: int = 0
    cycled: bool = False
    trace: list[float] = field(default_factory=list)  # assignment objective per iteration

    @property
    def k(self) -> int:
        return len(self.centers)

    def members(self) -> list[list[int]]:
        return [np.flatnonzero(self.assignment == u).tolist() for u in range(self.k)]

    def sizes(self) -> list[int]:
        return np.bincount(self.assignment, minlength=self.k).tolist()

    def to_dict(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "assignment": self.assignment.tolist(),
            "objective": self.objective,
            "max_size": self.max_size,
            "seed": self.seed,
            "restarts": self.restarts,
            "iterations": self.iterations,
            "cycled": self.cycled,
        }


def distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=2)


def kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to squared distance."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if k > len(pts):
        raise ClusterError(f"cannot pick {k} centers from {len(pts)} points")
    if k < 1:
        raise ClusterError("need at least one center")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.Generator(np.random.PCG64(rng))
    chosen = [int(rng.integers(len(pts)))]
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total <= 0:
            # remaining points all coincide with centers; pick among unchosen ones
            rest = np.setdiff1d(np.arange(len(pts)), chosen)
            nxt = int(rng.choice(rest))
        else:
            nxt = int(rng.choice(len(pts), p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return pts[chosen].copy()


def gap_program(cost: np.ndarray, max_size: int) -> LinearProgram:
    """Assignment LP: variable (c, u) at c * k + u."""
    m, k = cost.shape
    A = np.zeros((m + k, m * k))
    for c in range(m):
        A[c, c * k:(c + 1) * k] = 1.0
    for u in range(k):
        A[m + u, u::k] = 1.0
    senses = [EQ] * m + [LE] * k
    b = np.concatenate([np.ones(m), np.full(k, float(max_size))])
    return LinearProgram(cost.ravel().astype(float), A, senses, b, np.zeros(m * k), np.ones(m * k))


def assign(points: np.ndarray, centers: np.ndarray, max_size: int,
           method: str = "slots") -> tuple[np.ndarray, float]:
    """Exact capacitated assignment; returns (center per point, total distance).

    ``method="slots"`` copies every center ``max_size`` times and solves the
    resulting linear assignment problem; ``"lp"`` solves the assignment
    program with the in-house simplex (its relaxation is a transportation
    problem, so the LP optimum is already integral).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ctr = np.asarray(centers, dtype=float).reshape(-1, 2)
    m, k = len(pts), len(ctr)
    if m == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if k * max_size < m:
        raise ClusterError(f"{k} centers of size {max_size} cannot hold {m} points")
    S = distances(pts, ctr)
    if max_size >= m:
        out = S.argmin(axis=1)
    elif method == "slots":
        slots = min(max_size, m)
        rows, cols = linear_sum_assignment(np.repeat(S, slots, axis=1))
        out = np.empty(m, dtype=np.int64)
        out[rows] = cols // slots
    elif method == "lp":
        res = solve_binary_mip(gap_program(S, max_size))
        if res.x is None:
            raise ClusterError("assignment program has no solution")
        out = res.x.reshape(m, k).argmax(axis=1)
    else:
        raise ValueError(f"unknown assignment method {method!r}")
    return out, float(S[np.arange(m), out].sum())


def update_centers(points: np.ndarray, assignment: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Mean of each cluster; an empty cluster keeps its old center."""
    new = np.array(centers, dtype=float, copy=True)
    for u in range(len(new)):
        mine = points[assignment == u]
        if len(mine):
            new[u] = mine.mean(axis=0)
    return new


def lloyd(points: np.ndarray, centers: np.ndarray, max_size: int,
          max_iterations: int = MAX_ITERATIONS, monotone: bool = True) -> Clustering:
    """Alternate assignment and mean update until the assignment repeats.

    Moving a center to the mean does not always lower the summed (unsquared)
    distance, so with ``monotone`` the run also stops, keeping the previous
    iterate, when a new assignment would cost more than the last one.
    """
    seen: dict[bytes, int] = {}
    trace: list[float] = []
    history: list[tuple[np.ndarray, np.ndarray, float]] = []
    cycled = False
    for it in range(max_iterations):
        a, obj = assign(points, centers, max_size)
        if monotone and history and obj > history[-1][2] + 1e-9 * max(1.0, history[-1][2]):
            log.debug("stopping: mean update raised the assignment objective")
            c_prev, a_prev, obj_prev = history[-1]
            return Clustering(c_prev, a_prev, obj_prev, max_size, iterations=len(trace), trace=trace)
        trace.append(obj)
        if history and np.array_equal(history[-1][1], a):
            history.append((centers, a, obj))
            break
        key = a.tobytes()
        if key in seen:
            cycled = True
            log.info("assignment cycle of length %d after %d iterations", it - seen[key], it)
            history.append((centers, a, obj))
            break
        seen[key] = it
        history.append((centers, a, obj))
        centers = update_centers(points, a, centers)
    else:
        log.warning("capacitated k-means hit the %d iteration cap", max_iterations)
    if cycled:
        c_best, a_best, obj_best = min(history, key=lambda h: h[2])
        return Clustering(c_best, a_best, obj_best, max_size, iterations=len(trace), cycled=True, trace=trace)
    c_last, a_last, obj_last = history[-1]
    return Clustering(c_last, a_last, obj_last, max_size, iterations=len(trace), trace=trace)


def _one_run(args) -> Clustering:
    points, k, max_size, seed_seq, monotone = args
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    return lloyd(points, kmeanspp_init(points, k, rng), max_size, monotone=monotone)


def cluster_points(points: np.ndarray, max_size: int, restarts: int = DEFAULT_RESTARTS,
                   seed: int | None = 0, workers: int = 1, monotone: bool = True) -> Clustering:
    """Best of ``restarts`` seeded runs with k = ceil(|points| / max_size)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if max_size < 1:
        raise ClusterError("cluster size limit must be at least 1")
    if len(pts) == 0:
        return Clustering(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), 0.0, max_size, seed, 0)
    k = math.ceil(len(pts) / max_size)
    seqs = np.random.SeedSequence(seed).spawn(max(1, restarts))
    tasks = [(pts, k, max_size, s, monotone) for s in seqs]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_one_run, tasks))
    else:
        runs = [_one_run(t) for t in tasks]
    best = min(enumerate(runs), key=lambda r: (r[1].objective, r[0]))[1]
    best.seed = seed
    best.restarts = len(runs)
    return best


def cluster_commuters(instance: Instance, max_size: int, restarts: int = DEFAULT_RESTARTS,
                      seed: int | None = 0, workers: int = 1, monotone: bool = True) -> Clustering:
    homes = np.array([c.home for c in instance.commuters], dtype=float).reshape(-1, 2)
    return cluster_points(homes, max_size, restarts, seed, workers, monotone)


def split_instance(instance: Instance, clustering: Clustering) -> list[Instance]:
    """One sub-instance per non-empty cluster, commuters renumbered."""
    base = instance.name or "instance"
    return [instance.subset(ids, name=f"{base}-c{u}") for u, ids in enumerate(clustering.members()) if ids]


def write_clusters(instance: Instance, clustering: Clustering, out_dir: str | Path) -> Path:
    """Write each cluster's instance and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for u, ids in enumerate(clustering.members()):
        if not ids:
            continue
        sub = instance.subset(ids, name=f"{instance.name or 'instance'}-c{u}")
        path = out / f"cluster_{u:03d}.json"
        sub.save(path)
        entries.append({"cluster": u, "file": path.name, "size": len(ids), "commuters": ids,
                        "center": clustering.centers[u].tolist()})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"source": instance.name, "clustering": clustering.to_dict(),
                                    "clusters": entries}, indent=1))
    return manifest
