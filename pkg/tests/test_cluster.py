import json
import math

import numpy as np
import pytest
from conftest import small_instance
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import best_two_split, exhaustive_gap

from ctsp.cluster import (ClusterError, assign, cluster_commuters, cluster_points, kmeanspp_init, lloyd,
                          split_instance, update_centers, write_clusters)
from ctsp.model import Instance

coords = st.floats(0, 1000, allow_nan=False, allow_infinity=False)


def test_kmeanspp_all_points_become_centers():
    pts = np.array([[0, 0], [1, 0], [5, 5], [9, 1]], float)
    c = kmeanspp_init(pts, 4, 3)
    assert sorted(map(tuple, c)) == sorted(map(tuple, pts))


def test_kmeanspp_single_center_is_a_point():
    pts = np.random.default_rng(0).uniform(0, 10, (7, 2))
    c = kmeanspp_init(pts, 1, 11)
    assert any(np.array_equal(c[0], p) for p in pts)


def test_kmeanspp_rejects_too_many_centers():
    with pytest.raises(ClusterError):
        kmeanspp_init(np.zeros((2, 2)), 3, 0)


def test_kmeanspp_follows_squared_distance_law():
    pts = np.array([[0, 0], [1, 0], [0, 3], [4, 4]], float)
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    want = np.zeros((4, 4))
    for i in range(4):
        want[i] = 0.25 * d2[i] / d2[i].sum()
    runs = 10_000
    seqs = np.random.SeedSequence(123).spawn(runs)
    counts = np.zeros((4, 4))
    for s in seqs:
        c = kmeanspp_init(pts, 2, np.random.Generator(np.random.PCG64(s)))
        i = next(k for k in range(4) if np.array_equal(pts[k], c[0]))
        j = next(k for k in range(4) if np.array_equal(pts[k], c[1]))
        counts[i, j] += 1
    freq = counts / runs
    sigma = np.sqrt(want * (1 - want) / runs)
    assert np.all(np.abs(freq - want) <= 3 * sigma + 1e-12)


def test_assign_identity():
    pts = np.array([[0, 0], [10, 10]], float)
    a, obj = assign(pts, pts.copy(), 1)
    assert a.tolist() == [0, 1] and obj == 0


def test_assign_four_points_matches_enumeration():
    pts = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], float)
    ctr = np.array([[0, 0], [0.5, 0]], float)
    a, obj = assign(pts, ctr, 2)
    assert obj == pytest.approx(exhaustive_gap(pts, ctr, 2))
    assert np.bincount(a, minlength=2).max() <= 2


def test_assign_without_binding_capacity_is_nearest():
    rng = np.random.default_rng(1)
    pts, ctr = rng.uniform(0, 10, (9, 2)), rng.uniform(0, 10, (3, 2))
    a, _ = assign(pts, ctr, 9)
    d = np.linalg.norm(pts[:, None] - ctr[None], axis=2)
    assert a.tolist() == d.argmin(axis=1).tolist()


def test_assign_infeasible_capacity():
    with pytest.raises(ClusterError):
        assign(np.zeros((5, 2)), np.zeros((2, 2)), 2)


@pytest.mark.parametrize("method", ["slots", "lp"])
def test_assign_matches_exhaustive_gap_on_random_trials(method):
    rng = np.random.default_rng(2024)
    for _ in range(100):
        m = int(rng.integers(2, 9))
        pts = rng.uniform(0, 100, (m, 2))
        ctr = rng.uniform(0, 100, (2, 2))
        N = int(rng.integers(math.ceil(m / 2), m + 1))
        a, obj = assign(pts, ctr, N, method=method)
        assert np.bincount(a, minlength=2).max() <= N
        assert obj == pytest.approx(exhaustive_gap(pts, ctr, N), abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=2, max_size=7), st.integers(1, 3), st.integers(0, 2 ** 16))
def test_assign_property(points, k, seed):
    pts = np.array(points, float)
    k = min(k, len(pts))
    N = math.ceil(len(pts) / k)
    ctr = kmeanspp_init(pts, k, seed)
    a1, o1 = assign(pts, ctr, N)
    a2, o2 = assign(pts, ctr, N, method="lp")
    assert o1 == pytest.approx(o2, rel=1e-9, abs=1e-6)
    assert np.bincount(a1, minlength=k).max() <= N


def test_cluster_one_point_everyone():
    pts = np.tile([[3.0, 4.0]], (6, 1))
    c = cluster_points(pts, 10, restarts=3, seed=0)
    assert c.k == 1 and c.objective == 0
    assert c.centers[0].tolist() == [3.0, 4.0]


def test_two_blobs_recovered():
    rng = np.random.default_rng(5)
    a = rng.normal([0, 0], 5, (5, 2))
    b = rng.normal([1000, 1000], 5, (5, 2))
    pts = np.vstack([a, b])
    c = cluster_points(pts, 5, restarts=10, seed=1)
    want, split = best_two_split(pts, 5)
    assert c.objective == pytest.approx(want, rel=1e-9)
    groups = {frozenset(g) for g in c.members()}
    assert groups == {frozenset(np.flatnonzero(split).tolist()), frozenset(np.flatnonzero(~split).tolist())}


def test_cluster_count_and_determinism():
    pts = np.random.default_rng(9).uniform(0, 12000, (47, 2))
    c1 = cluster_points(pts, 10, restarts=8, seed=4)
    c2 = cluster_points(pts, 10, restarts=8, seed=4)
    assert c1.k == 5
    assert c1.assignment.tolist() == c2.assignment.tolist() and c1.objective == c2.objective
    assert max(c1.sizes()) <= 10 and sum(c1.sizes()) == 47
    assert c1.restarts == 8 and c1.seed == 4


def test_parallel_restarts_match_sequential():
    pts = np.random.default_rng(3).uniform(0, 100, (20, 2))
    c1 = cluster_points(pts, 6, restarts=6, seed=2)
    c2 = cluster_points(pts, 6, restarts=6, seed=2, workers=2)
    assert c1.assignment.tolist() == c2.assignment.tolist()


def test_empty_population():
    c = cluster_points(np.zeros((0, 2)), 5)
    assert c.k == 0 and c.objective == 0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(coords, coords), min_size=1, max_size=30), st.integers(1, 8), st.integers(0, 999))
def test_lloyd_invariants(points, N, seed):
    pts = np.array(points, float)
    k = math.ceil(len(pts) / N)
    run = lloyd(pts, kmeanspp_init(pts, k, seed), N)
    assert max(np.bincount(run.assignment, minlength=k)) <= N
    assert all(b <= a + 1e-9 * max(1.0, a) for a, b in zip(run.trace, run.trace[1:]))
    d = np.linalg.norm(pts - run.centers[run.assignment], axis=1).sum()
    assert run.objective == pytest.approx(d, rel=1e-9, abs=1e-6)


def test_update_moves_centers_to_means():
    pts = np.array([[0, 0], [2, 0], [10, 10], [12, 14]], float)
    c = update_centers(pts, np.array([0, 0, 1, 1]), np.zeros((3, 2)))
    assert c.tolist() == [[1, 0], [11, 12], [0, 0]]


def test_plain_loop_keeps_capacity():
    pts = np.random.default_rng(8).uniform(0, 100, (25, 2))
    run = lloyd(pts, kmeanspp_init(pts, 3, 1), 9, monotone=False)
    assert max(np.bincount(run.assignment, minlength=3)) <= 9


def test_split_and_write(tmp_path):
    inst = small_instance(9, seed=0)
    c = cluster_commuters(inst, 4, restarts=3, seed=0)
    subs = split_instance(inst, c)
    assert sorted(s.n for s in subs) == sorted(x for x in c.sizes() if x)
    manifest = write_clusters(inst, c, tmp_path)
    data = json.loads(manifest.read_text())
    assert sum(e["size"] for e in data["clusters"]) == 9
    first = Instance.load(tmp_path / data["clusters"][0]["file"])
    assert first.n == data["clusters"][0]["size"]
    assert data["clustering"]["seed"] == 0
