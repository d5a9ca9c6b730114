"""Dense revised simplex with row duals, and depth-first branch-and-bound for binaries.

Dual values are reported as the sensitivity of the optimal objective to each
row's right-hand side (``d obj / d rhs``), for both minimisation and
maximisation.  For a minimisation, a ``>=`` row therefore has a non-negative
dual and a ``<=`` row a non-positive one, and reduced costs are ``c - A^T y``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

LE, EQ, GE = "<=", "==", ">="
_FLIP = {LE: GE, GE: LE, EQ: EQ}

FEAS_TOL = 1e-7
DUAL_TOL = 1e-9  # on the internally scaled objective
PIVOT_TOL = 1e-9
INT_TOL = 1e-6
REFACTOR_EVERY = 50


class LpError(RuntimeError):
    """Malformed program or numerical breakdown."""


@dataclass
class LinearProgram:
    c: np.ndarray
    A: np.ndarray
    senses: list[str]
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        self.check()

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size

    def check(self) -> None:
        m, n = self.A.shape
        if self.b.size != m or len(self.senses) != m:
            raise LpError("row count mismatch between A, b and senses")
        if self.lb.size != n or self.ub.size != n:
            raise LpError("bound vectors must match the number of variables")
        if any(s not in _FLIP for s in self.senses):
            raise LpError(f"unknown row sense in {set(self.senses)}")
        if not (np.isfinite(self.c).all() and np.isfinite(self.A).all() and np.isfinite(self.b).all()):
            raise LpError("coefficients must be finite")
        if (self.lb > self.ub).any():
            raise LpError("lower bound above upper bound")

    @classmethod
    def from_rows(cls, c, rows: Iterable[tuple[Sequence[float], str, float]], lb=None, ub=None,
                  maximize: bool = False) -> "LinearProgram":
        rows = list(rows)
        n = len(c)
        A = np.array([r[0] for r in rows], dtype=float).reshape(len(rows), n)
        return cls(c, A, [r[1] for r in rows], [r[2] for r in rows], lb, ub, maximize)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """Per-row violation (positive means violated)."""
        ax = self.A @ x
        out = np.zeros(self.n_rows)
        for i, s in enumerate(self.senses):
            if s == LE:
                out[i] = ax[i] - self.b[i]
            elif s == GE:
                out[i] = self.b[i] - ax[i]
            else:
                out[i] = abs(ax[i] - self.b[i])
        return out

    def is_feasible(self, x: np.ndarray, tol: float = FEAS_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if (x < self.lb - tol).any() or (x > self.ub + tol).any():
            return False
        return bool((self.residuals(x) <= tol * (1.0 + np.abs(self.b))).all())

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x)

    def write_lp(self, path: str | Path) -> None:
        """CPLEX-style LP text, for handing the program to an external solver."""
        def term(coef: float, j: int) -> str:
            return f"{'+' if coef >= 0 else '-'} {abs(coef):.12g} x{j}"

        lines = ["Maximize" if self.maximize else "Minimize"]
        lines.append(" obj: " + (" ".join(term(v, j) for j, v in enumerate(self.c) if v) or "0 x0"))
        lines.append("Subject To")
        for i in range(self.n_rows):
            lhs = " ".join(term(v, j) for j, v in enumerate(self.A[i]) if v) or "0 x0"
            op = {LE: "<=", GE: ">=", EQ: "="}[self.senses[i]]
            lines.append(f" r{i}: {lhs} {op} {self.b[i]:.12g}")
        lines.append("Bounds")
        for j in range(self.n_vars):
            lo = "-inf" if np.isneginf(self.lb[j]) else f"{self.lb[j]:.12g}"
            hi = "+inf" if np.isposinf(self.ub[j]) else f"{self.ub[j]:.12g}"
            lines.append(f" {lo} <= x{j} <= {hi}")
        lines.append("End")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class LpSolution:
    status: str
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    objective: float | None = None
    iterations: int = 0
    farkas: np.ndarray | None = None
    basis: "BasisHint | None" = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class BasisHint:
    """A basis in problem terms, for warm-starting a related LP.

    ``vars`` are basic variable indices, ``slack_rows`` / ``art_rows`` the rows
    whose slack or artificial is basic, ``upper`` nonbasic variables sitting at
    their upper bound.
    """

    vars: tuple[int, ...]
    slack_rows: tuple[int, ...]
    art_rows: tuple[int, ...]
    upper: tuple[int, ...] = ()

    def remap(self, mapping: dict[int, int]) -> "BasisHint | None":
        """Rename variables; None when a basic variable has no image."""
        if any(v not in mapping for v in self.vars):
            return None
        return BasisHint(tuple(mapping[v] for v in self.vars), self.slack_rows, self.art_rows,
                         tuple(mapping[v] for v in self.upper if v in mapping))


class _StandardForm:
    """min c'x', A'x' = b', 0 <= x' <= u' built from a LinearProgram.

    When every variable has a finite lower bound (the common case) structural
    column ``j`` is variable ``j`` shifted by its lower bound, fixed variables
    included, so bases carry over between programs that differ only in bounds.
    """

    def __init__(self, lp: LinearProgram):
        m, n = lp.A.shape
        self.simple = bool(np.isfinite(lp.lb).all())
        if self.simple:
            A = lp.A.copy()
            costs = lp.c.copy()
            caps = lp.ub - lp.lb
            offset = lp.lb.copy()
            self.recover = None
        else:
            cols, cost_l, cap_l, self.recover = [], [], [], []
            offset = np.zeros(n)
            for j in range(n):
                lo, hi = lp.lb[j], lp.ub[j]
                col, cj = lp.A[:, j], lp.c[j]
                if np.isfinite(lo):
                    offset[j] = lo
                    self.recover.append((j, [(len(cols), 1.0)], lo))
                    cols.append(col)
                    cost_l.append(cj)
                    cap_l.append(hi - lo)
                elif np.isfinite(hi):
                    offset[j] = hi
                    self.recover.append((j, [(len(cols), -1.0)], hi))
                    cols.append(-col)
                    cost_l.append(-cj)
                    cap_l.append(np.inf)
                else:
                    k = len(cols)
                    cols.extend([col, -col])
                    cost_l.extend([cj, -cj])
                    cap_l.extend([np.inf, np.inf])
                    self.recover.append((j, [(k, 1.0), (k + 1, -1.0)], 0.0))
            A = np.column_stack(cols) if cols else np.zeros((m, 0))
            costs = np.array(cost_l, dtype=float)
            caps = np.array(cap_l, dtype=float)
        n_struct = A.shape[1]
        b = lp.b - lp.A @ np.where(np.isfinite(offset), offset, 0.0)
        senses = list(lp.senses)
        self.offset = offset

        # row scaling, then make every rhs non-negative
        scale = np.abs(A).max(axis=1) if n_struct else np.ones(m)
        scale[scale == 0] = 1.0
        sign = np.where(b < 0, -1.0, 1.0)
        factor = sign / scale
        A = A * factor[:, None]
        b = b * factor
        senses = [(_FLIP[s] if sg < 0 else s) for s, sg in zip(senses, sign)]
        self.row_factor = factor  # multiply internal duals by this

        slack_of = np.full(m, -1, dtype=np.int64)
        art_of = np.full(m, -1, dtype=np.int64)
        slack_sign = []
        for i, s in enumerate(senses):
            if s != EQ:
                slack_of[i] = n_struct + len(slack_sign)
                slack_sign.append((i, 1.0 if s == LE else -1.0))
        n_slack = len(slack_sign)
        k = n_struct + n_slack
        for i, s in enumerate(senses):
            if s != LE:
                art_of[i] = k
                k += 1
        full = np.zeros((m, k))
        full[:, :n_struct] = A
        for t, (i, v) in enumerate(slack_sign):
            full[i, n_struct + t] = v
        arts = np.flatnonzero(art_of >= 0)
        full[arts, art_of[arts]] = 1.0
        self.A = full
        self.b = b
        self.c = np.zeros(k)
        self.c[:n_struct] = costs
        self.ub = np.full(k, np.inf)
        self.ub[:n_struct] = caps
        self.n_struct = n_struct
        self.first_art = n_struct + n_slack
        self.slack_of = slack_of
        self.art_of = art_of
        self.basis = np.where(art_of >= 0, art_of, slack_of).astype(np.int64)
        self.n_orig = n

    def x_original(self, xs: np.ndarray) -> np.ndarray:
        if self.recover is None:
            return self.offset + xs[: self.n_struct]
        x = np.zeros(self.n_orig)
        for j, parts, off in self.recover:
            x[j] = off + sum(sgn * xs[k] for k, sgn in parts)
        return x

    def hint_to_basis(self, hint: BasisHint):
        if not self.simple:
            return None
        m = self.A.shape[0]
        cols = list(hint.vars)
        if any(not 0 <= v < self.n_struct for v in cols):
            return None
        for i in hint.slack_rows:
            if not 0 <= i < m or self.slack_of[i] < 0:
                return None
            cols.append(int(self.slack_of[i]))
        for i in hint.art_rows:
            if not 0 <= i < m or self.art_of[i] < 0:
                return None
            cols.append(int(self.art_of[i]))
        if len(cols) != m or len(set(cols)) != m:
            return None
        at_upper = np.zeros(self.A.shape[1], dtype=bool)
        for v in hint.upper:
            if 0 <= v < self.n_struct and np.isfinite(self.ub[v]):
                at_upper[v] = True
        at_upper[cols] = False
        return np.array(cols, dtype=np.int64), at_upper

    def basis_to_hint(self, basis: np.ndarray, at_upper: np.ndarray) -> BasisHint | None:
        if not self.simple:
            return None
        vars_, slacks, arts = [], [], []
        slack_row = {int(c): i for i, c in enumerate(self.slack_of) if c >= 0}
        art_row = {int(c): i for i, c in enumerate(self.art_of) if c >= 0}
        for c in basis:
            c = int(c)
            if c < self.n_struct:
                vars_.append(c)
            elif c in slack_row:
                slacks.append(slack_row[c])
            else:
                arts.append(art_row[c])
        upper = tuple(int(j) for j in np.flatnonzero(at_upper[: self.n_struct]))
        return BasisHint(tuple(vars_), tuple(slacks), tuple(arts), upper)


class _Bounded:
    """Revised simplex on min c x, A x = b, 0 <= x <= ub.

    Nonbasic variables sit at zero or at their upper bound (``at_upper``).
    """

    def __init__(self, A, b, ub, basis, at_upper=None):
        self.A, self.b, self.ub = A, b, ub
        self.m, self.N = A.shape
        self.basis = basis
        self.at_upper = np.zeros(self.N, dtype=bool) if at_upper is None else at_upper
        self.refactor()

    def nonbasic_value(self) -> np.ndarray:
        xn = np.where(self.at_upper, self.ub, 0.0)
        xn[self.basis] = 0.0
        return xn

    def refactor(self) -> None:
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B) if self.m else np.zeros((0, 0))
        self.xB = self.Binv @ (self.b - self.A @ self.nonbasic_value())
        self.since = 0

    def _pivot(self, r: int, q: int, u: np.ndarray) -> None:
        prow = self.Binv[r] / u[r]
        self.Binv -= np.outer(u, prow)
        self.Binv[r] = prow
        self.basis[r] = q
        self.since += 1

    def run(self, c, allowed, max_iter, label) -> tuple[str, int]:
        A, ub = self.A, self.ub
        movable = allowed & (ub > 0)
        it = degenerate = 0
        bland = False
        is_basic = np.zeros(self.N, dtype=bool)
        while True:
            if self.since >= REFACTOR_EVERY:
                self.refactor()
            basis = self.basis
            is_basic[:] = False
            is_basic[basis] = True
            y = c[basis] @ self.Binv
            d = c - y @ A
            # improving direction: +1 from lower bound, -1 from upper bound
            score = np.where(self.at_upper, d, -d)
            score[is_basic | ~movable] = 0.0
            if bland:
                cand = np.flatnonzero(score > DUAL_TOL)
                if cand.size == 0:
                    return "optimal", it
                q = int(cand[0])
            else:
                q = int(np.argmax(score))
                if score[q] <= DUAL_TOL:
                    return "optimal", it
            direction = -1.0 if self.at_upper[q] else 1.0
            u = self.Binv @ A[:, q]
            du = direction * u  # basic values move by -t * du
            ubB = ub[basis]
            dec = np.flatnonzero(du > PIVOT_TOL)
            inc = np.flatnonzero((du < -PIVOT_TOL) & np.isfinite(ubB))
            room = np.concatenate([self.xB[dec], ubB[inc] - self.xB[inc]])
            rate = np.concatenate([du[dec], -du[inc]])
            rows = np.concatenate([dec, inc])
            to_upper = np.concatenate([np.zeros(dec.size, bool), np.ones(inc.size, bool)])
            flip_cap = ub[q]
            if rows.size == 0 and not np.isfinite(flip_cap):
                return "unbounded", it
            if rows.size:
                ratios = np.maximum(room, 0.0) / rate
                if bland:
                    theta = ratios.min()
                    ties = np.flatnonzero(ratios <= theta + 1e-12)
                    k = int(ties[np.argmin(basis[rows[ties]])])
                else:
                    # Harris two-pass ratio test
                    bound = ((np.maximum(room, 0.0) + FEAS_TOL) / rate).min()
                    ok = np.flatnonzero(ratios <= bound)
                    k = int(ok[np.argmax(rate[ok])])
                theta = ratios[k]
            else:
                theta = np.inf
            if flip_cap <= theta:
                # entering variable reaches its other bound first
                theta = flip_cap
                self.xB -= theta * du
                self.at_upper[q] = not self.at_upper[q]
            else:
                r = int(rows[k])
                leave = basis[r]
                self.xB -= theta * du
                self.xB[r] = (ub[q] - theta) if self.at_upper[q] else theta
                self.at_upper[leave] = bool(to_upper[k])
                self.at_upper[q] = False
                self._pivot(r, q, u)
            np.clip(self.xB, 0.0, ub[basis], out=self.xB)
            it += 1
            if theta <= 1e-12:
                degenerate += 1
                if degenerate > 30:
                    bland = True
            else:
                degenerate = 0
                bland = False
            if it > max_iter:
                raise LpError(f"simplex ({label}) did not converge in {max_iter} iterations")

    def dual_feasible(self, c, allowed) -> bool:
        y = c[self.basis] @ self.Binv
        d = c - y @ self.A
        movable = allowed & (self.ub > 0)
        movable[self.basis] = False
        bad = np.where(self.at_upper, d > DUAL_TOL, d < -DUAL_TOL) & movable
        return not bad.any()

    def run_dual(self, c, allowed, max_iter) -> tuple[str, int]:
        """Bounded dual simplex from a dual feasible basis.

        Returns "optimal", "infeasible" or "failed" (iteration cap or
        numerical trouble; the caller then restarts cold).
        """
        A, ub = self.A, self.ub
        movable = allowed & (ub > 0)
        is_basic = np.zeros(self.N, dtype=bool)
        it = 0
        while True:
            if self.since >= REFACTOR_EVERY:
                self.refactor()
            basis = self.basis
            xB = self.xB
            ubB = ub[basis]
            low = -xB
            high = np.where(np.isfinite(ubB), xB - ubB, -np.inf)
            viol = np.maximum(low, high)
            r = int(np.argmax(viol)) if viol.size else 0
            if not viol.size or viol[r] <= FEAS_TOL:
                return "optimal", it
            to_upper = bool(high[r] > low[r])
            is_basic[:] = False
            is_basic[basis] = True
            y = c[basis] @ self.Binv
            d = c - y @ A
            alpha = self.Binv[r] @ A
            nb = movable & ~is_basic
            at_up = self.at_upper
            if to_upper:
                elig = nb & (((~at_up) & (alpha > PIVOT_TOL)) | (at_up & (alpha < -PIVOT_TOL)))
            else:
                elig = nb & (((~at_up) & (alpha < -PIVOT_TOL)) | (at_up & (alpha > PIVOT_TOL)))
            cand = np.flatnonzero(elig)
            if cand.size == 0:
                return "infeasible", it
            ratios = np.abs(d[cand]) / np.abs(alpha[cand])
            bound = ((np.abs(d[cand]) + DUAL_TOL) / np.abs(alpha[cand])).min()
            ok = cand[ratios <= bound]
            q = int(ok[np.argmax(np.abs(alpha[ok]))])
            leave = basis[r]
            u = self.Binv @ A[:, q]
            if abs(u[r]) <= PIVOT_TOL:
                return "failed", it
            self.at_upper[leave] = to_upper
            self.at_upper[q] = False
            self._pivot(r, q, u)
            self.xB = self.Binv @ (self.b - A @ self.nonbasic_value())
            it += 1
            if it > max_iter:
                return "failed", it

    def pivot_out(self, r: int, candidates: np.ndarray) -> bool:
        """Degenerate pivot replacing basic position ``r`` by a candidate column."""
        row = self.Binv[r] @ self.A[:, candidates]
        if row.size == 0:
            return False
        k = int(np.argmax(np.abs(row)))
        if abs(row[k]) <= 1e-7:
            return False
        q = int(candidates[k])
        u = self.Binv @ self.A[:, q]
        self._pivot(r, q, u)
        self.at_upper[q] = False
        self.refactor()
        return True


def _warm(sf: _StandardForm, hint: BasisHint, c2: np.ndarray, allowed: np.ndarray, max_iter: int):
    """Try to reach phase-2 optimality from a hinted basis; None means start cold."""
    got = sf.hint_to_basis(hint)
    if got is None:
        return None
    basis, at_upper = got
    B = sf.A[:, basis]
    try:
        if np.linalg.cond(B) > 1e12:
            return None
    except np.linalg.LinAlgError:
        return None
    sx = _Bounded(sf.A, sf.b, sf.ub, basis, at_upper)
    ubB = sf.ub[sx.basis]
    if (sx.xB >= -FEAS_TOL).all() and (sx.xB <= ubB + FEAS_TOL).all():
        np.clip(sx.xB, 0.0, ubB, out=sx.xB)
        return sx, 0
    if not sx.dual_feasible(c2, allowed):
        return None
    status, it = sx.run_dual(c2, allowed, max_iter)
    if status != "optimal":
        return None
    return sx, it


def solve_lp(lp: LinearProgram, backend: str = "builtin", hint: BasisHint | None = None) -> LpSolution:
    """Solve an LP; returns primal values, row duals, and a Farkas ray when infeasible.

    ``hint`` is an optimal basis of a related program (same rows; variables
    added, or bounds changed).  It is used when it still gives a primal or
    dual feasible start, otherwise the solve starts from scratch.
    """
    lp.check()
    if backend == "highs":
        return _solve_lp_highs(lp)
    if backend != "builtin":
        raise ValueError(f"unknown backend {backend!r}")
    sf = _StandardForm(lp)
    A, b = sf.A, sf.b
    m, N = A.shape
    max_iter = 50 * (m + N) + 1000
    allowed = np.ones(N, dtype=bool)
    allowed[sf.first_art:] = False
    c = sf.c.copy()
    if lp.maximize:
        c = -c
    cscale = max(1.0, float(np.abs(c).max())) if c.size else 1.0
    c2 = c / cscale
    total_it = 0

    warm = None
    if hint is not None:
        ub_cold = sf.ub.copy()
        sf.ub[sf.first_art:] = 0.0
        warm = _warm(sf, hint, c2, allowed, max_iter)
        if warm is None:
            sf.ub[:] = ub_cold
    if warm is not None:
        sx, total_it = warm
    else:
        sx = _Bounded(A, b, sf.ub, sf.basis.copy())
        if sf.first_art < N:
            c1 = np.zeros(N)
            c1[sf.first_art:] = 1.0
            _, it = sx.run(c1, np.ones(N, dtype=bool), max_iter, "phase 1")
            total_it += it
            infeas = float(c1[sx.basis] @ sx.xB)
            if infeas > FEAS_TOL * (1.0 + np.abs(b).sum()):
                y1 = c1[sx.basis] @ sx.Binv
                farkas = (y1 * sf.row_factor)[: lp.n_rows]
                return LpSolution("infeasible", iterations=total_it, farkas=farkas)
            sx.ub[sf.first_art:] = 0.0  # artificials stay at zero from here on
            for r in range(m):
                if sx.basis[r] >= sf.first_art:
                    in_basis = np.zeros(N, dtype=bool)
                    in_basis[sx.basis] = True
                    cand = np.flatnonzero(~in_basis[: sf.first_art] & ~sx.at_upper[: sf.first_art]
                                          & (sx.ub[: sf.first_art] > 0))
                    sx.pivot_out(r, cand)

    status, it = sx.run(c2, allowed, max_iter, "phase 2")
    total_it += it
    if status == "unbounded":
        return LpSolution("unbounded", iterations=total_it)
    basis = sx.basis
    B = A[:, basis]
    xn = sx.nonbasic_value()
    xB = np.linalg.solve(B, b - A @ xn) if m else np.zeros(0)
    xB[np.abs(xB) < 1e-11] = 0.0
    y = np.linalg.solve(B.T, c2[basis]) * cscale if m else np.zeros(0)
    xs = xn
    xs[basis] = xB
    x = sf.x_original(xs)
    duals = (y * sf.row_factor)[: lp.n_rows]
    if lp.maximize:
        duals = -duals
    return LpSolution("optimal", x=x, duals=duals, objective=float(lp.c @ x), iterations=total_it,
                      basis=sf.basis_to_hint(basis, sx.at_upper))


def _solve_lp_highs(lp: LinearProgram) -> LpSolution:
    from scipy.optimize import linprog

    sgn = -1.0 if lp.maximize else 1.0
    ub_rows = [i for i, s in enumerate(lp.senses) if s != EQ]
    eq_rows = [i for i, s in enumerate(lp.senses) if s == EQ]
    flip = np.array([1.0 if lp.senses[i] == LE else -1.0 for i in ub_rows])
    A_ub = lp.A[ub_rows] * flip[:, None] if ub_rows else None
    b_ub = lp.b[ub_rows] * flip if ub_rows else None
    A_eq = lp.A[eq_rows] if eq_rows else None
    b_eq = lp.b[eq_rows] if eq_rows else None
    bounds = list(zip([None if np.isneginf(v) else v for v in lp.lb],
                      [None if np.isposinf(v) else v for v in lp.ub]))
    res = linprog(sgn * lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return LpSolution("infeasible")
    if res.status == 3:
        return LpSolution("unbounded")
    if res.status != 0:
        raise LpError(res.message)
    duals = np.zeros(lp.n_rows)
    if ub_rows:
        duals[ub_rows] = res.ineqlin.marginals * flip
    if eq_rows:
        duals[eq_rows] = res.eqlin.marginals
    return LpSolution("optimal", x=res.x, duals=sgn * duals, objective=float(lp.c @ res.x),
                      iterations=int(res.nit))


@dataclass
class MipResult:
    status: str  # optimal | feasible | infeasible
    x: np.ndarray | None
    objective: float | None
    bound: float
    gap: float
    nodes: int = 0
    root: LpSolution | None = None
    elapsed: float = 0.0

    @property
    def found(self) -> bool:
        return self.x is not None


def _relative_gap(incumbent: float | None, bound: float) -> float:
    if incumbent is None:
        return math.inf
    if incumbent == bound:
        return 0.0
    return max(0.0, (incumbent - bound) / max(abs(incumbent), 1e-12))


def ceil_tol(z: float, tol: float = 1e-6) -> int:
    """Ceiling that forgives float noise just above an integer."""
    slack = max(tol, 1e-11 * abs(z))
    return int(math.ceil(z - slack))


def _reduced_cost_fixing(lp, sol, bins, lo, hi, improves):
    """Fix binaries whose flip alone would push the node bound past the incumbent."""
    rc = lp.c - lp.A.T @ sol.duals
    x = sol.x[bins]
    r = rc[bins]
    z = sol.objective
    lo, hi = lo.copy(), hi.copy()
    free = lo[bins] < hi[bins]
    for k in np.flatnonzero(free & (x <= INT_TOL) & (r > 0)):
        if not improves(z + r[k]):
            hi[bins[k]] = 0.0
    for k in np.flatnonzero(free & (x >= 1 - INT_TOL) & (r < 0)):
        if not improves(z - r[k]):
            lo[bins[k]] = 1.0
    return lo, hi


def solve_binary_mip(
    lp: LinearProgram,
    binaries: Sequence[int] | None = None,
    time_budget: float | None = None,
    warm_start: np.ndarray | None = None,
    integral_objective: bool = False,
    node_limit: int | None = None,
    backend: str = "builtin",
    node_order: str = "depth",
) -> MipResult:
    """Branch-and-bound over the listed binary variables.

    The root relaxation is always solved, even with a zero budget, so the
    returned bound is at least the root LP value.  Branching picks the most
    fractional binary and explores the up-branch first.  ``node_order`` is
    ``"depth"`` (plain depth-first) or ``"best"`` (lowest parent bound first,
    deeper nodes first on ties).  With an incumbent, binaries whose flip alone
    would push the node bound past it are fixed (reduced-cost fixing).
    """
    if node_order not in ("depth", "best"):
        raise ValueError(f"unknown node order {node_order!r}")
    if lp.maximize:
        raise LpError("solve_binary_mip expects a minimisation")
    if backend == "highs":
        return _solve_mip_highs(lp, binaries, time_budget)
    start = time.perf_counter()
    n = lp.n_vars
    bins = np.arange(n) if binaries is None else np.asarray(sorted(binaries), dtype=np.int64)
    lb0 = lp.lb.copy()
    ub0 = lp.ub.copy()
    lb0[bins] = np.maximum(lb0[bins], 0.0)
    ub0[bins] = np.minimum(ub0[bins], 1.0)

    def bound_key(v: float) -> float:
        return float(ceil_tol(v)) if integral_objective else v

    best_x, best_obj = None, None
    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float)
        if lp.is_feasible(ws) and np.all(np.abs(ws[bins] - np.round(ws[bins])) <= INT_TOL):
            best_x, best_obj = ws.copy(), lp.objective(ws)

    def relax(lo, hi, hint=None):
        sub = LinearProgram(lp.c, lp.A, lp.senses, lp.b, lo, hi)
        return solve_lp(sub, hint=hint)

    root = relax(lb0, ub0)
    if root.status == "unbounded":
        raise LpError("root relaxation unbounded")
    if root.status == "infeasible":
        return MipResult("infeasible", best_x, best_obj, math.inf, math.inf, 0, root,
                         time.perf_counter() - start)

    def improves(v: float) -> bool:
        if best_obj is None:
            return True
        if integral_objective:
            return ceil_tol(v) <= best_obj - 1 + 1e-9
        return v < best_obj - 1e-9 * max(1.0, abs(best_obj))

    # heap entries: (priority, bound_from_parent, lb, ub, solution or None)
    seq = itertools.count()

    def push(bound, depth, lo, hi, sol, hint=None):
        k = next(seq)
        prio = (-k,) if node_order == "depth" else (bound, -depth, -k)
        heapq.heappush(stack, (prio, bound, depth, lo, hi, sol, hint))

    stack: list = []
    push(root.objective, 0, lb0, ub0, root)
    nodes = 0
    stopped = False
    while stack:
        if time_budget is not None and time.perf_counter() - start >= time_budget:
            stopped = True
            break
        if node_limit is not None and nodes > node_limit:
            stopped = True
            break
        _, pbound, depth, lo, hi, sol, hint = heapq.heappop(stack)
        if not improves(pbound):
            continue
        if sol is None:
            nodes += 1
            sol = relax(lo, hi, hint)
            if sol.status != "optimal" or not improves(sol.objective):
                continue
        x = sol.x
        frac = np.abs(x[bins] - np.round(x[bins]))
        if frac.max(initial=0.0) <= INT_TOL:
            xr = x.copy()
            xr[bins] = np.round(xr[bins])
            if lp.is_feasible(xr):
                best_x, best_obj = xr, lp.objective(xr)
            continue
        if best_obj is not None:
            lo, hi = _reduced_cost_fixing(lp, sol, bins, lo, hi, improves)
        k = int(bins[np.argmax(np.minimum(frac, 1.0 - frac))])
        down_hi = hi.copy()
        down_hi[k] = 0.0
        up_lo = lo.copy()
        up_lo[k] = 1.0
        push(sol.objective, depth + 1, lo, down_hi, None, sol.basis)
        push(sol.objective, depth + 1, up_lo, hi, None, sol.basis)

    if stopped and stack:
        open_bound = min(bound_key(e[1]) for e in stack)
        bound = min(open_bound, best_obj) if best_obj is not None else open_bound
        bound = max(bound, bound_key(root.objective))
    else:
        bound = best_obj if best_obj is not None else math.inf
    if best_obj is None:
        status = "infeasible" if not stopped else "feasible"
        return MipResult(status, None, None, bound, math.inf, nodes, root, time.perf_counter() - start)
    gap = _relative_gap(best_obj, bound)
    status = "optimal" if not (stopped and stack) or gap == 0.0 else "feasible"
    return MipResult(status, best_x, best_obj, bound, gap, nodes, root, time.perf_counter() - start)


def _solve_mip_highs(lp: LinearProgram, binaries, time_budget) -> MipResult:
    from scipy.optimize import Bounds, LinearConstraint, milp

    start = time.perf_counter()
    n = lp.n_vars
    integrality = np.zeros(n)
    bins = np.arange(n) if binaries is None else np.asarray(list(binaries), dtype=np.int64)
    integrality[bins] = 1
    lo = lp.b.copy()
    hi = lp.b.copy()
    for i, s in enumerate(lp.senses):
        if s == LE:
            lo[i] = -np.inf
        elif s == GE:
            hi[i] = np.inf
    lb, ub = lp.lb.copy(), lp.ub.copy()
    lb[bins] = np.maximum(lb[bins], 0)
    ub[bins] = np.minimum(ub[bins], 1)
    opts = {} if time_budget is None else {"time_limit": max(time_budget, 1e-3)}
    res = milp(lp.c, constraints=LinearConstraint(lp.A, lo, hi), integrality=integrality,
               bounds=Bounds(lb, ub), options=opts)
    elapsed = time.perf_counter() - start
    if res.x is None:
        return MipResult("infeasible", None, None, math.inf, math.inf, 0, None, elapsed)
    obj = float(lp.c @ res.x)
    bound = float(getattr(res, "mip_dual_bound", obj) or obj)
    status = "optimal" if res.status == 0 else "feasible"
    return MipResult(status, res.x, obj, bound, _relative_gap(obj, bound), int(getattr(res, "mip_node_count", 0) or 0),
                     None, elapsed)
