"""Dense bounded-variable simplex.

Rows are brought to equality form with one slack per ``L`` row and one
artificial per row.  A cold start runs a two-phase primal simplex; a warm
start re-uses a stored basis (or the in-memory state of the previous solve)
and runs the dual simplex when only bounds changed.  The full tableau
B⁻¹[A | I_slack | I_art] is kept explicitly and rebuilt from an LU
factorisation every ``refactor_every`` pivots.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ..errors import LpNumericalError
from .problem import INF, LpSolution, SolverParams, Status

logger = logging.getLogger(__name__)

AT_LOWER = 0
AT_UPPER = 1
FREE_ZERO = 2
BASIC = 3

DEGENERATE_RUN_BEFORE_BLAND = 50
MAX_CLEANUP_ROUNDS = 3


class _Singular(Exception):
    pass


@dataclass
class Basis:
    """Restartable basis: basic column per row plus nonbasic positions."""

    basic: np.ndarray
    status: np.ndarray


class DenseSimplex:
    """LP kernel for  min c·x  s.t.  A x (≤|=) b,  lower ≤ x ≤ upper.

    The instance keeps its tableau between calls to :meth:`solve`, so a
    sequence of solves that only tighten bounds (as in branch-and-bound)
    can continue from the previous optimum.
    """

    def __init__(self, A, senses, b, c, params=None):
        self.params = params or SolverParams()
        A = np.asarray(A, dtype=float)
        m, n = A.shape
        self.n = n

        # Empty rows are decided once here and never enter the tableau.
        empty = ~np.any(A != 0.0, axis=1) if m else np.zeros(0, dtype=bool)
        self.trivially_infeasible = None
        for i in np.flatnonzero(empty):
            bad = (senses[i] == "L" and b[i] < -self.params.feas_tol) or (
                senses[i] == "E" and abs(b[i]) > self.params.feas_tol)
            if bad and self.trivially_infeasible is None:
                self.trivially_infeasible = int(i)
        self.row_index = np.flatnonzero(~empty)
        self.m_orig = m
        A = A[self.row_index]
        senses = np.asarray(senses)[self.row_index]
        b = np.asarray(b, dtype=float)[self.row_index]
        m = len(self.row_index)
        self.m = m

        slack_rows = np.flatnonzero(senses == "L")
        self.slack_start = n
        self.art_start = n + len(slack_rows)
        self.ncols = self.art_start + m
        self.A = np.zeros((m, self.ncols))
        self.A[:, :n] = A
        self.A[slack_rows, self.slack_start + np.arange(len(slack_rows))] = 1.0
        self.A[np.arange(m), self.art_start + np.arange(m)] = 1.0
        self.slack_of_row = -np.ones(m, dtype=int)
        self.slack_of_row[slack_rows] = self.slack_start + np.arange(len(slack_rows))
        self.b = b

        self.cost = np.zeros(self.ncols)
        self.cost[:n] = np.asarray(c, dtype=float)
        self.lower = np.zeros(self.ncols)
        self.upper = np.zeros(self.ncols)
        self.upper[self.slack_start:self.art_start] = INF

        self.token = 0
        self._ready = False
        self.basic = None
        self.status = None
        self.x = None
        self.T = None
        self.d = None
        self.y = None
        self._lu = None
        self._since_refactor = 0
        self._ray = None
        self._dual_ray_row = 0
        self._cutoff = INF
        self.iterations = 0

    @classmethod
    def from_problem(cls, problem, params=None):
        return cls(problem.A.toarray(), problem.senses, problem.rhs, problem.cost, params)

    # ------------------------------------------------------------------
    # public entry

    def solve(self, lower, upper, warm=None, cutoff=None):
        """Solve with structural bounds ``lower``/``upper``.

        ``warm`` is either ``None`` (cold start), the string ``"current"``
        (continue from the in-memory state of the previous solve) or a
        :class:`Basis` snapshot.  With a finite ``cutoff`` a warm dual
        simplex stops with :attr:`Status.CUTOFF` as soon as its objective,
        a lower bound on the optimum, reaches the cutoff.
        """
        self.iterations = 0
        self._cutoff = INF if cutoff is None else float(cutoff)
        self.token += 1
        if self.trivially_infeasible is not None:
            farkas = np.zeros(self.m_orig)
            farkas[self.trivially_infeasible] = 1.0
            return self._result(Status.INFEASIBLE, farkas=farkas)
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        if np.any(lower > upper + self.params.feas_tol):
            return self._result(Status.INFEASIBLE)

        for attempt in range(MAX_CLEANUP_ROUNDS + 1):
            try:
                if warm is not None and attempt == 0:
                    outcome = self._warm(lower, upper, warm)
                    if outcome is None:
                        outcome = self._cold(lower, upper)
                else:
                    outcome = self._cold(lower, upper)
            except _Singular:
                logger.debug("singular basis on attempt %d, restarting cold", attempt)
                warm = None
                continue
            if outcome is not None:
                return outcome
        raise LpNumericalError("simplex could not reach a numerically clean solution")

    def snapshot(self):
        if not self._ready:
            return None
        return Basis(basic=self.basic.copy(), status=self.status.copy())

    # ------------------------------------------------------------------
    # start procedures

    def _set_structural_bounds(self, lower, upper):
        self.lower[:self.n] = lower
        self.upper[:self.n] = upper
        art = slice(self.art_start, self.ncols)
        self.lower[art] = 0.0
        self.upper[art] = 0.0

    def _nonbasic_value(self, j):
        lo, hi = self.lower[j], self.upper[j]
        st = self.status[j]
        if st == AT_UPPER and hi < INF:
            return hi, AT_UPPER
        if lo > -INF:
            return lo, AT_LOWER
        if hi < INF:
            return hi, AT_UPPER
        return 0.0, FREE_ZERO

    def _place_nonbasics(self):
        for j in np.flatnonzero(self.status != BASIC):
            self.x[j], self.status[j] = self._nonbasic_value(j)

    def _cold(self, lower, upper):
        self._set_structural_bounds(lower, upper)
        m, n = self.m, self.n
        self.status = np.full(self.ncols, AT_LOWER, dtype=np.int8)
        self.x = np.zeros(self.ncols)
        for j in range(self.art_start):
            self.x[j], self.status[j] = self._nonbasic_value(j)
        resid = self.b - self.A[:, :self.art_start] @ self.x[:self.art_start]
        self.basic = np.empty(m, dtype=int)
        # artificial columns are ±e_i, oriented so their start value is |resid|
        self.A[:, self.art_start:] = 0.0
        for i in range(m):
            art = self.art_start + i
            s = self.slack_of_row[i]
            if s >= 0 and resid[i] >= 0:
                self.basic[i] = s
                self.status[s] = BASIC
                self.x[s] = resid[i]
                self.A[i, art] = 1.0
                self.status[art] = AT_LOWER
            else:
                self.A[i, art] = 1.0 if resid[i] >= 0 else -1.0
                self.basic[i] = art
                self.status[art] = BASIC
                self.x[art] = abs(resid[i])
                self.upper[art] = INF
        phase1 = np.zeros(self.ncols)
        phase1[self.art_start:] = 1.0
        self._refactor(phase1)
        outcome = self._primal(phase1)
        if outcome == "unbounded":
            raise _Singular()
        self._refactor(phase1)
        infeas = float(np.sum(self.x[self.art_start:]))
        scale = max(1.0, float(np.max(np.abs(self.b))) if m else 1.0)
        if infeas > self.params.feas_tol * scale:
            farkas = np.zeros(self.m_orig)
            farkas[self.row_index] = self.y
            self._ready = False
            return self._result(Status.INFEASIBLE, farkas=farkas)

        self.upper[self.art_start:] = 0.0
        self._drive_out_artificials()
        self._refactor(self.cost)
        return self._phase2()

    def _drive_out_artificials(self):
        for r in range(self.m):
            j = self.basic[r]
            if j < self.art_start:
                continue
            row = np.abs(self.T[r, :self.art_start]).copy()
            row[self.status[:self.art_start] == BASIC] = 0.0
            q = int(np.argmax(row)) if row.size else -1
            if q < 0 or row[q] <= 1e-7:
                continue
            self.x[j] = 0.0
            self._pivot(r, q)
            self.status[j] = AT_LOWER

    def _warm(self, lower, upper, warm):
        if warm == "current":
            if not self._ready:
                return None
            self._shift_bounds(lower, upper)
        else:
            self._set_structural_bounds(lower, upper)
            self.basic = warm.basic.copy()
            self.status = warm.status.copy()
            self.x = np.zeros(self.ncols)
            self._place_nonbasics()
            self._refactor(self.cost)

        if self._primal_feasible():
            return self._phase2()
        if self._dual_feasible():
            outcome = self._dual()
            if outcome == "infeasible":
                return self._dual_infeasible_result()
            if outcome == "cutoff":
                self._ready = True
                return self._result(Status.CUTOFF)
            return self._phase2()
        logger.debug("warm basis neither primal nor dual feasible, cold start")
        return None

    def _shift_bounds(self, lower, upper):
        old_lower = self.lower[:self.n].copy()
        old_upper = self.upper[:self.n].copy()
        self.lower[:self.n] = lower
        self.upper[:self.n] = upper
        changed = np.flatnonzero((old_lower != lower) | (old_upper != upper))
        for j in changed:
            if self.status[j] == BASIC:
                continue
            new, self.status[j] = self._nonbasic_value(j)
            delta = new - self.x[j]
            if delta != 0.0:
                self.x[self.basic] -= self.T[:, j] * delta
                self.x[j] = new

    def _phase2(self):
        outcome = self._primal(self.cost)
        if outcome == "unbounded":
            return self._result(Status.UNBOUNDED, ray=self._ray)
        return self._clean_finish()

    def _clean_finish(self):
        # fresh factorisation removes drift accumulated by tableau updates
        self._refactor(self.cost)
        if not self._primal_feasible():
            if self._dual_feasible():
                outcome = self._dual()
                if outcome == "infeasible":
                    return self._dual_infeasible_result()
                if outcome == "cutoff":
                    self._ready = True
                    return self._result(Status.CUTOFF)
            if self._primal(self.cost) == "unbounded":
                return self._result(Status.UNBOUNDED, ray=self._ray)
            self._refactor(self.cost)
            if not self._primal_feasible():
                raise _Singular()
        self._ready = True
        return self._result(Status.OPTIMAL)

    # ------------------------------------------------------------------
    # linear algebra

    def _refactor(self, cost):
        B = self.A[:, self.basic]
        if self.m == 0:
            self.T = np.zeros((0, self.ncols))
            self.y = np.zeros(0)
            self.d = cost.copy()
            self._since_refactor = 0
            return
        lu, piv = scipy.linalg.lu_factor(B, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min() <= 1e-11 * max(1.0, diag.max()):
            raise _Singular()
        self._lu = (lu, piv)
        self.T = scipy.linalg.lu_solve(self._lu, self.A, check_finite=False)
        nb = self.status != BASIC
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basic] = scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)
        self.y = scipy.linalg.lu_solve(self._lu, cost[self.basic], trans=1, check_finite=False)
        self.d = cost - self.A.T @ self.y
        self.d[self.basic] = 0.0
        self._since_refactor = 0

    def _pivot(self, r, q):
        pivot_row = self.T[r] / self.T[r, q]
        col = self.T[:, q].copy()
        self.T -= np.outer(col, pivot_row)
        self.T[r] = pivot_row
        self.d = self.d - self.d[q] * pivot_row
        self.d[q] = 0.0
        self.status[q] = BASIC
        self.basic[r] = q
        self._since_refactor += 1
        self.iterations += 1
        if self.iterations > self.params.max_pivots:
            raise LpNumericalError(f"pivot limit {self.params.max_pivots} exceeded")

    def _maybe_refactor(self, cost):
        if self._since_refactor >= self.params.refactor_every:
            self._refactor(cost)

    # ------------------------------------------------------------------
    # feasibility tests

    def _primal_feasible(self):
        xb = self.x[self.basic]
        tol = self.params.feas_tol
        return bool(np.all(xb >= self.lower[self.basic] - tol)
                    and np.all(xb <= self.upper[self.basic] + tol))

    def _dual_feasible(self):
        tol = self.params.opt_tol
        nb = (self.status != BASIC) & (self.lower < self.upper)
        d = self.d
        bad = nb & (((self.status == AT_LOWER) & (d < -tol))
                    | ((self.status == AT_UPPER) & (d > tol))
                    | ((self.status == FREE_ZERO) & (np.abs(d) > tol)))
        return not bool(np.any(bad))

    # ------------------------------------------------------------------
    # primal simplex

    def _entering(self, bland):
        tol = self.params.opt_tol
        movable = (self.status != BASIC) & (self.lower < self.upper)
        d = self.d
        up = movable & (((self.status == AT_LOWER) & (d < -tol))
                        | ((self.status == FREE_ZERO) & (d < -tol)))
        down = movable & (((self.status == AT_UPPER) & (d > tol))
                          | ((self.status == FREE_ZERO) & (d > tol)))
        candidates = np.flatnonzero(up | down)
        if candidates.size == 0:
            return None, 0
        if bland:
            q = int(candidates[0])
        else:
            q = int(candidates[np.argmax(np.abs(d[candidates]))])
        return q, (1.0 if up[q] else -1.0)

    def _primal(self, cost):
        tol = self.params.pivot_tol
        degenerate_run = 0
        while True:
            self._maybe_refactor(cost)
            q, direction = self._entering(degenerate_run > DEGENERATE_RUN_BEFORE_BLAND)
            if q is None:
                return "optimal"
            alpha = direction * self.T[:, q]
            xb = self.x[self.basic]
            lb = self.lower[self.basic]
            ub = self.upper[self.basic]
            ratios = np.full(self.m, INF)
            dec = alpha > tol
            inc = alpha < -tol
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios[dec] = np.maximum(xb[dec] - lb[dec], 0.0) / alpha[dec]
                ratios[inc] = np.maximum(ub[inc] - xb[inc], 0.0) / -alpha[inc]
            ratios[np.isnan(ratios)] = INF
            own = self.upper[q] - self.lower[q]
            t_rows = float(ratios.min()) if self.m else INF
            if min(own, t_rows) == INF:
                ray = np.zeros(self.ncols)
                ray[q] = direction
                ray[self.basic] = -alpha
                self._ray = ray[:self.n]
                return "unbounded"
            if own <= t_rows:
                self.x[self.basic] -= alpha * own
                self.x[q] += direction * own
                self.status[q] = AT_UPPER if direction > 0 else AT_LOWER
                degenerate_run = 0
                continue
            ties = np.flatnonzero(ratios <= t_rows + 1e-12)
            if degenerate_run > DEGENERATE_RUN_BEFORE_BLAND:
                r = int(ties[np.argmin(self.basic[ties])])
            else:
                r = int(ties[np.argmax(np.abs(alpha[ties]))])
            t = t_rows
            leaving = self.basic[r]
            to_lower = alpha[r] > 0
            self.x[self.basic] -= alpha * t
            self.x[q] += direction * t
            self.x[leaving] = self.lower[leaving] if to_lower else self.upper[leaving]
            self._pivot(r, q)
            self.status[leaving] = AT_LOWER if to_lower else AT_UPPER
            degenerate_run = degenerate_run + 1 if t <= 1e-12 else 0

    # ------------------------------------------------------------------
    # dual simplex

    def _dual(self):
        ptol = self.params.pivot_tol
        ftol = self.params.feas_tol
        while True:
            self._maybe_refactor(self.cost)
            xb = self.x[self.basic]
            lb = self.lower[self.basic]
            ub = self.upper[self.basic]
            below = lb - xb
            above = xb - ub
            worst = np.maximum(below, above)
            r = int(np.argmax(worst)) if self.m else 0
            if self._cutoff < INF and self.cost @ self.x >= self._cutoff:
                return "cutoff"
            if not self.m or worst[r] <= ftol:
                return "feasible"
            leaving = self.basic[r]
            row = self.T[r]
            movable = (self.status != BASIC) & (self.lower < self.upper)
            at_lower = self.status == AT_LOWER
            at_upper = self.status == AT_UPPER
            free = self.status == FREE_ZERO
            if below[r] > above[r]:
                target = lb[r]
                ok = movable & ((at_lower & (row < -ptol)) | (at_upper & (row > ptol))
                                | (free & (np.abs(row) > ptol)))
            else:
                target = ub[r]
                ok = movable & ((at_lower & (row > ptol)) | (at_upper & (row < -ptol))
                                | (free & (np.abs(row) > ptol)))
            candidates = np.flatnonzero(ok)
            if candidates.size == 0:
                self._dual_ray_row = r
                return "infeasible"
            ratios = np.abs(self.d[candidates]) / np.abs(row[candidates])
            best = ratios.min()
            ties = candidates[ratios <= best + 1e-12]
            q = int(ties[np.argmax(np.abs(row[ties]))])
            step = (xb[r] - target) / row[q]
            self.x[self.basic] -= self.T[:, q] * step
            self.x[q] += step
            self.x[leaving] = target
            self._pivot(r, q)
            self.status[leaving] = AT_LOWER if target == self.lower[leaving] else AT_UPPER

    def _dual_infeasible_result(self):
        self._refactor(self.cost)
        e = np.zeros(self.m)
        e[self._dual_ray_row] = 1.0
        ray = scipy.linalg.lu_solve(self._lu, e, trans=1, check_finite=False)
        farkas = np.zeros(self.m_orig)
        farkas[self.row_index] = ray
        self._ready = False
        return self._result(Status.INFEASIBLE, farkas=farkas)

    # ------------------------------------------------------------------

    def _result(self, status, farkas=None, ray=None):
        if status == Status.CUTOFF:
            return LpSolution(status=status, objective=float(self.cost @ self.x),
                              x=None, iterations=self.iterations)
        if status != Status.OPTIMAL:
            return LpSolution(status=status,
                              objective=INF if status == Status.INFEASIBLE else -INF,
                              x=None, farkas=farkas, ray=ray, iterations=self.iterations)
        x = self.x[:self.n].copy()
        duals = np.zeros(self.m_orig)
        # multipliers are reported as -y so that L rows carry λ ≥ 0
        duals[self.row_index] = -self.y
        return LpSolution(status=status, objective=float(self.cost[:self.n] @ x), x=x,
                          duals=duals, reduced_costs=self.d[:self.n].copy(),
                          iterations=self.iterations)


def solve_lp(problem, params=None, lower=None, upper=None):
    """LP relaxation of ``problem`` (integrality and SOS-1 ignored)."""
    params = params or SolverParams()
    lower = problem.lower if lower is None else lower
    upper = problem.upper if upper is None else upper
    kernel = DenseSimplex.from_problem(problem, params)
    solution = kernel.solve(lower, upper)
    if solution.status == Status.OPTIMAL:
        solution.objective += problem.cost_constant
    return solution
