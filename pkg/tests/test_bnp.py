import numpy as np
import pytest
from conftest import small_instance
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_plan
from test_pricing import waiting_instance

from ctsp.bnp import BranchAndPrice, BranchNode, root_heuristic, seed_routes, solve_bpa
from ctsp.enumeration import enumerate_routes
from ctsp.master import Column, solve_rea
from ctsp.model import DIRECTIONS, INBOUND, OUTBOUND
from ctsp.schedule import feasible


def assert_valid_plan(inst, plan):
    n = inst.n
    for direction in DIRECTIONS:
        routes = [r for r in plan.routes if r.direction == direction]
        covered = sorted(i for r in routes for i in r.riders(n))
        assert covered == list(range(n))
        for r in routes:
            assert r.stops[0] == r.driver and r.stops[-1] == n + r.driver
            assert feasible(r.stops, inst.view(direction)) is not None
    drivers_in = {r.driver for r in plan.routes if r.direction == INBOUND}
    drivers_out = {r.driver for r in plan.routes if r.direction == OUTBOUND}
    assert drivers_in == drivers_out
    assert plan.route_count % 2 == 0


@pytest.mark.parametrize("n,seed", [(n, s) for n in (2, 3, 4, 5) for s in range(3)])
def test_bpa_matches_brute_force(n, seed):
    inst = small_instance(n, seed=seed)
    plan = solve_bpa(inst)
    assert plan.status == "optimal"
    assert plan.key() == brute_force_plan(inst)
    assert_valid_plan(inst, plan)


@pytest.mark.parametrize("seed", range(3))
def test_bpa_matches_rea_mid_size(seed):
    inst = small_instance(9, seed=seed)
    plan = solve_bpa(inst)
    assert plan.key() == solve_rea(inst).key()
    assert_valid_plan(inst, plan)


def test_bpa_capacity_one_is_everyone_alone():
    inst = small_instance(5, seed=1, capacity=1)
    plan = solve_bpa(inst)
    assert plan.vehicle_count == 5
    assert all(len(r.stops) == 2 for r in plan.routes)


def test_root_bound_below_optimum():
    inst = small_instance(8, seed=3)
    bp = BranchAndPrice(inst)
    res = bp.column_generation(BranchNode())
    bp.close()
    opt = solve_bpa(inst).objective
    assert res.status == "optimal" and res.converged
    assert res.z_lb <= opt + 1e-6


@pytest.mark.parametrize("kw", [{"dominance": False}, {"prune": False}, {"eliminate": False},
                                {"use_cuts": False}, {"partial_target": None}])
def test_search_switches_keep_objective(kw):
    inst = small_instance(8, seed=2)
    assert solve_bpa(inst, **kw).key() == solve_bpa(inst).key()


def test_threaded_pricing_agrees():
    inst = small_instance(6, seed=4)
    assert solve_bpa(inst, threads=2).key() == solve_bpa(inst).key()


def test_zero_time_limit_still_returns_a_plan():
    inst = small_instance(6, seed=0)
    plan = solve_bpa(inst, time_limit=0)
    assert plan.status == "time_limit"
    assert_valid_plan(inst, plan)


def test_seed_pool_has_singles_and_pairs():
    inst = small_instance(5, seed=0)
    pool = seed_routes(inst)
    assert {len(r.riders(5)) for r in pool} <= {1, 2}
    assert sum(len(r.stops) == 2 for r in pool) == 2 * 5


# -- branching ---------------------------------------------------------------------


def test_child_fixings_and_driver_cut():
    root = BranchNode()
    kid = root.child(V={2: 1})
    assert kid.V == {2: 1} and kid.cuts.driver == {2: 1.0}
    assert root.cuts.driver == {}
    with pytest.raises(ValueError):
        kid.child(V={2: 0})


def test_edge_fix_one_bans_other_arcs_and_skips_graphs():
    n = 3
    node = BranchNode(F={(INBOUND, (0, 1)): 1, (OUTBOUND, (4, 2)): 0})
    banned = node.banned_edges(n)
    assert (0, 1) not in banned[INBOUND]
    assert {(0, 2), (0, 3), (2, 1), (5, 1)} <= banned[INBOUND]
    assert banned[OUTBOUND] == {(4, 2)}
    assert node.skipped(n) == {(INBOUND, 1)}
    node = BranchNode(V={0: 0}, F={(OUTBOUND, (3, 1)): 1})
    assert node.skipped(n) == {(INBOUND, 0), (OUTBOUND, 0), (OUTBOUND, 1)}


def _columns(inst):
    return [Column(r, 0.0, r.riders(inst.n)) for d in DIRECTIONS for r in enumerate_routes(inst, d)]


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_mask_agrees_with_pricing_restrictions(data):
    inst = small_instance(4, seed=7)
    n = inst.n
    cols = _columns(inst)
    nodes = list(range(2 * n))
    F = {}
    for _ in range(data.draw(st.integers(0, 3))):
        direction = data.draw(st.sampled_from(DIRECTIONS))
        u, v = data.draw(st.lists(st.sampled_from(nodes), min_size=2, max_size=2, unique=True))
        F[(direction, (u, v))] = data.draw(st.integers(0, 1))
    V = {i: data.draw(st.integers(0, 1)) for i in data.draw(st.sets(st.integers(0, n - 1), max_size=2))}
    node = BranchNode(V=V, F=F)
    banned = node.banned_edges(n)
    skipped = node.skipped(n)
    for c in cols:
        r = c.route
        want = (r.direction, r.driver) not in skipped and not set(r.edges) & banned[r.direction]
        assert node.allows(c, n) == want


def test_driver_branch_gives_two_children_one_first():
    inst = small_instance(4, seed=0)
    bp = BranchAndPrice(inst)
    bp.close()
    x = np.zeros(len(bp.master))
    bp.driver_flows = lambda x: np.array([1.0, 0.5, 0.3, 1.0])
    kids = bp.branch(BranchNode(), x)
    assert [k.V for k in kids] == [{1: 1}, {1: 0}]


def test_edge_branch_child_counts():
    inst = small_instance(4, seed=0)
    bp = BranchAndPrice(inst)
    bp.close()
    bp.driver_flows = lambda x: np.ones(4)
    x = np.zeros(len(bp.master))
    bp.edge_flows = lambda x: {INBOUND: {(0, 1): 0.5, (1, 4): 1.0}, OUTBOUND: {(2, 6): 0.4}}
    kids = bp.branch(BranchNode(), x)
    assert [(k.F[(INBOUND, (0, 1))], k.F[(OUTBOUND, (2, 6))]) for k in kids] == [(1, 1), (1, 0), (0, 1), (0, 0)]
    bp.edge_flows = lambda x: {INBOUND: {}, OUTBOUND: {(2, 6): 0.4, (1, 5): 0.5}}
    kids = bp.branch(BranchNode(), x)
    assert [k.F for k in kids] == [{(OUTBOUND, (1, 5)): 1}, {(OUTBOUND, (1, 5)): 0}]
    bp.edge_flows = lambda x: {INBOUND: {}, OUTBOUND: {}}
    assert bp.branch(BranchNode(), x) == []


def test_most_fractional_breaks_ties_lexicographically():
    items = [((2, 3), 0.5), ((0, 4), 0.5), ((1, 1), 0.9)]
    assert BranchAndPrice._most_fractional(items) == (0, 4)
    assert BranchAndPrice._most_fractional([((0, 1), 1.0)]) is None


# -- root heuristic ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def unit_case():
    inst = small_instance(10, seed=2)
    exact = BranchAndPrice(inst, fixed=1.0, distance_weight=0.0).solve()
    return inst, exact


def test_heuristic_converged_bound(unit_case):
    inst, exact = unit_case
    h = root_heuristic(inst, t_rmp=120, t_mip=60)
    assert h.stats["converged"]
    assert h.stats["z_lb"] <= exact.objective + 1e-6 <= h.objective + 1e-6
    true_gap = (h.objective - exact.objective) / h.objective
    assert h.gap >= true_gap - 1e-9
    assert h.stats["farley"] <= exact.objective + 1e-6
    assert_valid_plan(inst, h)


@pytest.mark.parametrize("t_rmp", [0.0, 0.05, 0.3])
def test_heuristic_short_budget_is_still_valid(unit_case, t_rmp):
    inst, exact = unit_case
    h = root_heuristic(inst, t_rmp=t_rmp, t_mip=2)
    assert h.stats["z_lb"] <= exact.objective + 1e-6
    assert h.gap >= (h.objective - exact.objective) / h.objective - 1e-9
    assert h.stats["t_rmp_used"] <= t_rmp + 5 and h.stats["t_mip_used"] <= 2 + 5
    assert_valid_plan(inst, h)


def test_relaxed_heuristic_filters_wait_infeasible_columns():
    inst = waiting_instance()
    h = root_heuristic(inst, relax_forbidden=True)
    assert h.stats["infeasible_columns"] >= 1
    assert_valid_plan(inst, h)
    assert h.objective == root_heuristic(inst).objective


def test_heuristic_counts_vehicles():
    inst = small_instance(6, seed=1)
    h = root_heuristic(inst)
    assert h.objective == h.route_count
    assert h.vehicle_count == solve_bpa(inst).vehicle_count


def test_brute_force_oracle_self_check():
    inst = small_instance(3, seed=0)
    key = brute_force_plan(inst)
    # three commuters: either all alone or at least one shared car
    assert key[0] in (1, 2, 3)
    assert key == solve_rea(inst).key()



def test_infeasible_node_is_repaired_by_farkas_pricing():
    # fix every arc of a three-rider route: no seed column (at most two riders) can cover those riders
    for seed in range(40):
        inst = small_instance(6, seed=seed)
        big = [r for r in solve_rea(inst).routes if len(r.riders(inst.n)) >= 3]
        if big:
            break
    else:
        pytest.skip("no three-rider route in the sampled instances")
    route = big[0]
    bp = BranchAndPrice(inst)
    node = BranchNode(F={(route.direction, e): 1 for e in route.edges})
    assert not bp.master.solve(node.cuts, bp.mask(node)).feasible
    res = bp.column_generation(node)
    bp.close()
    assert res.status == "optimal"
    used = [bp.master.columns[j].route for j in np.flatnonzero(res.x > 1e-6)]
    assert any(r.direction == route.direction and set(route.edges) <= set(r.edges) for r in used)
