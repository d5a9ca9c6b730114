import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctsp.lpmip import (
    EQ, GE, LE, LinearProgram, LpError, ceil_tol, solve_binary_mip, solve_lp,
)


def vertex_oracle(lp):
    """Best objective over all basic solutions of a box-bounded LP."""
    n = lp.n_vars
    rows = [(lp.A[i], lp.senses[i], lp.b[i]) for i in range(lp.n_rows)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        rows.append((e, GE, lp.lb[j]))
        rows.append((e, LE, lp.ub[j]))
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        M = np.array([rows[k][0] for k in combo])
        if abs(np.linalg.det(M)) < 1e-9:
            continue
        x = np.linalg.solve(M, np.array([rows[k][2] for k in combo]))
        if lp.is_feasible(x, tol=1e-7):
            v = lp.objective(x)
            if best is None or v < best:
                best = v
    return best


def check_certificate(lp, sol):
    """Primal feasibility, dual sign conditions, complementary slackness, zero gap."""
    x, y = sol.x, sol.duals
    assert lp.is_feasible(x)
    sgn = 1.0 if not lp.maximize else -1.0
    for i, s in enumerate(lp.senses):
        if s == GE:
            assert sgn * y[i] >= -1e-7
        elif s == LE:
            assert sgn * y[i] <= 1e-7
        slack = lp.A[i] @ x - lp.b[i]
        assert abs(y[i] * slack) <= 1e-6 * (1 + abs(sol.objective))
    rc = sgn * (lp.c - lp.A.T @ y)
    for j in range(lp.n_vars):
        at_lb = abs(x[j] - lp.lb[j]) <= 1e-7
        at_ub = abs(x[j] - lp.ub[j]) <= 1e-7
        if not at_lb:
            assert rc[j] <= 1e-6 * (1 + abs(sol.objective))
        if not at_ub:
            assert rc[j] >= -1e-6 * (1 + abs(sol.objective))


def test_single_variable_max():
    lp = LinearProgram.from_rows([1.0], [([1.0], LE, 3.0)], maximize=True)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.duals[0] == pytest.approx(1.0)
    assert sol.objective == pytest.approx(3.0)


def test_redundant_equalities_degenerate():
    lp = LinearProgram.from_rows(
        [1.0, 2.0, 3.0],
        [([1, 1, 1], EQ, 1), ([2, 2, 2], EQ, 2), ([1, 1, 0], EQ, 1), ([0, 0, 1], LE, 0)],
    )
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0)
    check_certificate(lp, sol)


def test_infeasible_has_farkas_ray():
    lp = LinearProgram.from_rows([1.0, 1.0], [([1, 1], GE, 2), ([1, 1], LE, 1)])
    sol = solve_lp(lp)
    assert sol.status == "infeasible"
    y = sol.farkas
    # y.b > 0 while y.A <= 0 on every column (x >= 0)
    assert y @ lp.b > 1e-9
    assert (lp.A.T @ y <= 1e-9).all()


def test_unbounded():
    lp = LinearProgram.from_rows([-1.0, 0.0], [([1, -1], LE, 1)])
    assert solve_lp(lp).status == "unbounded"


def test_free_and_shifted_bounds():
    lp = LinearProgram.from_rows(
        [1.0, -1.0], [([1, 1], GE, -3), ([1, -1], LE, 4)],
        lb=[-np.inf, -2.0], ub=[np.inf, 5.0],
    )
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(vertex_oracle(lp))
    check_certificate(lp, sol)


def test_dimension_mismatch():
    with pytest.raises(LpError):
        LinearProgram(np.ones(2), np.ones((2, 2)), [LE], np.ones(2))


@pytest.mark.parametrize("seed", range(100))
def test_random_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    m = int(rng.integers(1, 5))
    A = rng.integers(-4, 5, size=(m, n)).astype(float)
    x0 = rng.uniform(0, 5, size=n)
    senses = list(rng.choice([LE, GE, EQ], size=m, p=[0.45, 0.45, 0.1]))
    b = A @ x0
    for i, s in enumerate(senses):
        if s == LE:
            b[i] += rng.uniform(0, 3)
        elif s == GE:
            b[i] -= rng.uniform(0, 3)
    if seed % 5 == 0:
        b = b + rng.integers(-6, 7, size=m)  # sometimes infeasible
    lp = LinearProgram(rng.integers(-5, 6, size=n).astype(float), A, senses, b,
                       lb=np.zeros(n), ub=np.full(n, 10.0), maximize=bool(seed % 3 == 0))
    sol = solve_lp(lp)
    if lp.maximize:
        flipped = LinearProgram(-lp.c, lp.A, lp.senses, lp.b, lp.lb, lp.ub)
        best = vertex_oracle(flipped)
        best = None if best is None else -best
    else:
        best = vertex_oracle(lp)
    if best is None:
        assert sol.status == "infeasible"
    else:
        assert sol.optimal
        assert sol.objective == pytest.approx(best, abs=1e-6)
        check_certificate(lp, sol)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_strong_duality_random(seed):
    rng = np.random.default_rng(seed)
    n, m = 8, 5
    A = rng.uniform(0, 1, size=(m, n))
    b = rng.uniform(1, 2, size=m)
    lp = LinearProgram(rng.uniform(0.5, 2, size=n), A, [GE] * m, b)
    sol = solve_lp(lp)
    assert sol.optimal
    # dual objective equals primal objective
    assert sol.duals @ b == pytest.approx(sol.objective, rel=1e-6)
    check_certificate(lp, sol)


def exhaustive_binary(lp):
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=lp.n_vars):
        x = np.array(bits)
        if lp.is_feasible(x):
            v = lp.objective(x)
            if best is None or v < best:
                best = v
    return best


def test_set_partition_three_elements():
    cols = [[1, 0, 0], [0, 1, 1], [1, 1, 0], [0, 0, 1], [1, 1, 1]]
    cost = [2.0, 3.0, 3.0, 1.5, 5.5]
    A = np.array(cols, dtype=float).T
    lp = LinearProgram(cost, A, [EQ] * 3, np.ones(3), ub=np.ones(5))
    res = solve_binary_mip(lp)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(exhaustive_binary(lp))
    assert res.gap == 0.0


@pytest.mark.parametrize("seed", range(30))
def test_random_set_cover_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    m, n = 5, 9
    A = (rng.uniform(size=(m, n)) < 0.4).astype(float)
    sense = EQ if seed % 2 else GE
    lp = LinearProgram(rng.integers(1, 10, size=n).astype(float), A, [sense] * m, np.ones(m))
    res = solve_binary_mip(lp, integral_objective=True)
    best = exhaustive_binary(lp)
    if best is None:
        assert res.status == "infeasible"
    else:
        assert res.objective == pytest.approx(best)
        assert lp.is_feasible(res.x)


def test_lp_integral_no_branching():
    lp = LinearProgram([1.0, 2.0], np.array([[1.0, 1.0]]), [GE], [1.0])
    res = solve_binary_mip(lp)
    assert res.nodes == 0
    assert res.objective == pytest.approx(res.root.objective)


def test_zero_budget_returns_warm_start():
    # odd cycle cover: LP optimum is 1.5 with all halves, integer optimum 2
    A = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=float)
    lp = LinearProgram(np.ones(3), A, [GE] * 3, np.ones(3))
    warm = np.array([1.0, 1.0, 1.0])
    res = solve_binary_mip(lp, time_budget=0.0, warm_start=warm)
    assert np.array_equal(res.x, warm)
    assert res.objective == 3.0
    assert res.bound == pytest.approx(1.5)
    assert res.gap == pytest.approx((3.0 - 1.5) / 3.0)


def test_warm_start_never_worsened():
    A = np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=float)
    lp = LinearProgram(np.ones(3), A, [GE] * 3, np.ones(3))
    res = solve_binary_mip(lp, warm_start=np.array([1.0, 1.0, 0.0]))
    assert res.objective == 2.0


def test_infeasible_mip():
    lp = LinearProgram([1.0, 1.0], np.array([[1.0, 1.0]]), [EQ], [1.5])
    assert solve_binary_mip(lp).status == "infeasible"


def test_ceil_tol():
    assert ceil_tol(3.0000000001) == 3
    assert ceil_tol(3.2) == 4
    assert ceil_tol(12000000.000001) == 12000000
    assert ceil_tol(-0.5) == 0


def test_write_lp(tmp_path):
    lp = LinearProgram.from_rows([1.0, -2.0], [([1, 1], LE, 4)], ub=[1, np.inf])
    path = tmp_path / "m.lp"
    lp.write_lp(path)
    text = path.read_text()
    assert text.startswith("Minimize")
    assert "r0: + 1 x0 + 1 x1 <= 4" in text


def random_covering(seed, m=6, n=14):
    rng = np.random.default_rng(seed)
    A = (rng.uniform(size=(m, n)) < 0.45).astype(float)
    A[:, 0] = 1.0  # keeps the program feasible
    senses = [GE] * (m - 2) + [EQ, LE]
    b = np.array([1.0] * (m - 2) + [1.0, 3.0])
    return LinearProgram(rng.uniform(1, 9, size=n), A, senses, b, ub=np.ones(n))


@pytest.mark.parametrize("seed", range(40))
def test_warm_start_after_bound_change(seed):
    lp = random_covering(seed)
    base = solve_lp(lp)
    assert base.optimal and base.basis is not None
    rng = np.random.default_rng(seed)
    lo, hi = lp.lb.copy(), lp.ub.copy()
    j = int(rng.integers(1, lp.n_vars))
    if rng.uniform() < 0.5:
        hi[j] = 0.0
    else:
        lo[j] = 1.0
    child = LinearProgram(lp.c, lp.A, lp.senses, lp.b, lo, hi)
    cold = solve_lp(child)
    warm = solve_lp(child, hint=base.basis)
    assert warm.status == cold.status
    if cold.optimal:
        assert warm.objective == pytest.approx(cold.objective, abs=1e-7)
        check_certificate(child, warm)


@pytest.mark.parametrize("seed", range(20))
def test_warm_start_after_adding_columns(seed):
    lp = random_covering(seed)
    k = lp.n_vars - 4
    small = LinearProgram(lp.c[:k], lp.A[:, :k], lp.senses, lp.b, lp.lb[:k], lp.ub[:k])
    first = solve_lp(small)
    grown = solve_lp(lp, hint=first.basis)
    assert grown.objective == pytest.approx(solve_lp(lp).objective, abs=1e-7)
    assert grown.objective <= first.objective + 1e-9


def test_bad_hint_falls_back():
    lp = random_covering(1)
    from ctsp.lpmip import BasisHint
    sol = solve_lp(lp, hint=BasisHint((0, 0), (), ()))
    assert sol.objective == pytest.approx(solve_lp(lp).objective)
