"""Spatial branch-and-bound for LPs with bilinear equalities w = λ·u.

Every product carries fixed bounds on its λ variable.  The bounds on the
u variable come from the node box, so the four McCormick rows of each
product are rebuilt per node and appended to the fixed rows of the
problem.  Branching splits the box of one u variable.
"""
import itertools
import json
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .branch_and_bound import _finite_or_none, _NodeQueue
from .problem import INF, MilpSolution, SolverParams, Status
from .simplex import Basis, DenseSimplex

logger = logging.getLogger(__name__)

# a split point closer than this share of the width to an end is moved to the middle
SPLIT_MARGIN = 0.1


@dataclass(frozen=True)
class Product:
    """w = λ·u with λ ∈ [lam_lower, lam_upper]; indices into the problem."""

    w: int
    lam: int
    u: int
    lam_lower: float
    lam_upper: float


@dataclass
class _Box:
    id: int
    depth: int
    bound: float
    lower: np.ndarray
    upper: np.ndarray
    decision: str
    basis: Optional[Basis] = None


def mccormick_rows(product, u_lower, u_upper):
    """Envelope of w = λ·u as (coefficient rows over (w, u, λ), rhs), all ≤."""
    a, b = product.lam_lower, product.lam_upper
    l, h = u_lower, u_upper
    coefs = np.array([
        [-1.0, a, l],
        [-1.0, b, h],
        [1.0, -b, -l],
        [1.0, -a, -h],
    ])
    rhs = np.array([a * l, b * h, -b * l, -a * h])
    return coefs, rhs


class SpatialBranchAndBound:
    """Search state over boxes of the product u variables.

    ``heuristic`` maps the LP point of a node to a full candidate vector or
    ``None``; candidates are accepted after the rows, bounds and products
    check out within ``feas_tol``.
    """

    def __init__(self, problem, products, params=None, heuristic=None, log_stream=None,
                 min_width=1e-9):
        if problem.quadratic or problem.sos1 or problem.num_binaries:
            raise ValueError("spatial search takes a continuous linear problem")
        issues = problem.check()
        if issues:
            raise ValueError("; ".join(issues))
        for p in products:
            if not (np.isfinite(p.lam_lower) and np.isfinite(p.lam_upper)):
                raise ValueError(f"product on variable {p.w} needs finite λ bounds")
            if not (np.isfinite(problem.lower[p.u]) and np.isfinite(problem.upper[p.u])):
                raise ValueError(f"product on variable {p.w} needs a bounded u")
        self.problem = problem
        self.products = list(products)
        self.params = params or SolverParams()
        self.heuristic = heuristic
        self.log_stream = log_stream
        self.min_width = min_width
        self._A = problem.A.toarray()
        n_extra = 4 * len(self.products)
        self._senses = np.concatenate([problem.senses, np.full(n_extra, "L")])
        self._columns = np.array([[p.w, p.u, p.lam] for p in self.products], dtype=int).reshape(-1, 3)
        self.incumbent = None
        self.incumbent_obj = INF
        self.incumbents = []
        self.node_log = []
        self._ids = itertools.count()
        self._global_bound = -INF
        self._unresolved = INF

    def cutoff(self):
        if self.incumbent is None:
            return INF
        return self.incumbent_obj - self.params.rel_gap * max(1.0, abs(self.incumbent_obj))

    def product_violation(self, x):
        if not self.products:
            return np.zeros(0)
        w, u, lam = self._columns.T
        return np.abs(x[w] - x[lam] * x[u])

    def feasible(self, x):
        if x is None or len(x) != self.problem.num_vars or not np.all(np.isfinite(x)):
            return False
        if self.problem.max_violation(x) > self.params.feas_tol:
            return False
        scale = 1.0 + np.abs(x[self._columns[:, 0]]) if self.products else 1.0
        return bool(np.all(self.product_violation(x) <= self.params.feas_tol * scale))

    def _offer(self, x, source):
        if not self.feasible(x):
            logger.debug("rejected %s candidate that failed verification", source)
            return False
        obj = self.problem.objective_value(x) - self.problem.cost_constant
        if obj < self.incumbent_obj:
            self.incumbent = np.array(x, dtype=float)
            self.incumbent_obj = obj
            self.incumbents.append({"objective": obj + self.problem.cost_constant, "source": source})
            logger.info("new incumbent %.9g from %s", obj + self.problem.cost_constant, source)
            return True
        return False

    def _log(self, node, objective, status):
        entry = {
            "node": node.id,
            "depth": node.depth,
            "bound": _finite_or_none(self._global_bound),
            "objective": _finite_or_none(objective),
            "decision": node.decision,
            "status": status,
        }
        self.node_log.append(entry)
        if self.log_stream is not None:
            self.log_stream.write(json.dumps(entry) + "\n")

    def _relaxation(self, node):
        rows, rhs = [], []
        for p in self.products:
            coefs, b = mccormick_rows(p, node.lower[p.u], node.upper[p.u])
            block = np.zeros((4, self.problem.num_vars))
            for c, j in enumerate((p.w, p.u, p.lam)):
                block[:, j] += coefs[:, c]
            rows.append(block)
            rhs.append(b)
        A = np.vstack([self._A] + rows) if rows else self._A
        b = np.concatenate([self.problem.rhs] + rhs) if rhs else self.problem.rhs
        kernel = DenseSimplex(A, self._senses, b, self.problem.cost, self.params)
        lp = kernel.solve(node.lower, node.upper, warm=node.basis, cutoff=self.cutoff())
        return lp, kernel.snapshot()

    def _branch_variable(self, node, x):
        """u index with the largest product violation among splittable boxes."""
        worst = {}
        for p, v in zip(self.products, self.product_violation(x)):
            worst[p.u] = max(worst.get(p.u, 0.0), v)
        best, best_score = None, 0.0
        for j, v in sorted(worst.items()):
            width = node.upper[j] - node.lower[j]
            if width <= self.min_width * max(1.0, abs(node.lower[j]), abs(node.upper[j])):
                continue
            if v > best_score:
                best, best_score = j, v
        return best

    def _children(self, node, x, j, bound):
        l, h = node.lower[j], node.upper[j]
        split = x[j]
        margin = SPLIT_MARGIN * (h - l)
        if not (l + margin <= split <= h - margin):
            split = 0.5 * (l + h)
        children = []
        for lo, hi, side in ((l, split, "<="), (split, h, ">=")):
            lower, upper = node.lower.copy(), node.upper.copy()
            lower[j], upper[j] = lo, hi
            children.append(_Box(id=next(self._ids), depth=node.depth + 1, bound=bound,
                                 lower=lower, upper=upper, decision=f"u{j}{side}{split:.6g}"))
        return children

    def run(self, starts=()):
        params = self.params
        start = time.monotonic()
        for candidate in starts:
            if candidate is not None:
                self._offer(np.asarray(candidate, dtype=float), "start")
        queue = _NodeQueue("best-bound")
        queue.push(_Box(id=next(self._ids), depth=0, bound=-INF, lower=self.problem.lower.copy(),
                        upper=self.problem.upper.copy(), decision="root"))
        nodes = 0
        limit_status = None
        tol = params.feas_tol

        while len(queue):
            if params.node_limit is not None and nodes >= params.node_limit:
                limit_status = Status.NODE_LIMIT
                break
            if params.time_limit_seconds is not None and \
                    time.monotonic() - start > params.time_limit_seconds:
                limit_status = Status.TIME_LIMIT
                break
            node = queue.pop()
            if node.bound >= self.cutoff():
                continue
            nodes += 1
            self._global_bound = max(self._global_bound, min(queue.bounds() + [node.bound]))

            lp, basis = self._relaxation(node)
            if lp.status in (Status.INFEASIBLE, Status.CUTOFF):
                self._log(node, lp.objective if lp.status == Status.CUTOFF else None,
                          lp.status.value.lower())
                continue
            if lp.status == Status.UNBOUNDED:
                self._log(node, None, "unbounded")
                return self._finish(Status.UNBOUNDED, nodes, start, queue)
            if lp.objective >= self.cutoff():
                self._log(node, lp.objective, "pruned")
                continue

            x = lp.x
            if self.heuristic is not None:
                self._offer_candidate(self.heuristic(x))
            scale = 1.0 + np.abs(x[self._columns[:, 0]]) if self.products else 1.0
            if np.all(self.product_violation(x) <= tol * scale):
                self._offer(x, "relaxation")
                self._log(node, lp.objective, "bilinear-feasible")
                continue
            if lp.objective >= self.cutoff():
                self._log(node, lp.objective, "pruned-by-heuristic")
                continue
            j = self._branch_variable(node, x)
            if j is None:
                # box too narrow to split further; its bound stays open
                self._unresolved = min(self._unresolved, lp.objective)
                self._log(node, lp.objective, "unresolved")
                continue
            self._log(node, lp.objective, "branched")
            for child in self._children(node, x, j, lp.objective):
                child.basis = basis
                queue.push(child)

        if limit_status is not None:
            status = limit_status
        elif self.incumbent is None:
            status = Status.INFEASIBLE if self._unresolved == INF else Status.GAP_LIMIT
        elif self._unresolved < self.cutoff():
            status = Status.GAP_LIMIT
        else:
            status = Status.OPTIMAL
        return self._finish(status, nodes, start, queue)

    def _offer_candidate(self, candidate):
        if candidate is not None:
            self._offer(np.asarray(candidate, dtype=float), "heuristic")

    def _finish(self, status, nodes, start, queue):
        constant = self.problem.cost_constant
        if status == Status.OPTIMAL:
            bound = self.incumbent_obj
        elif status == Status.INFEASIBLE:
            bound = INF
        elif status == Status.UNBOUNDED:
            bound = -INF
        else:
            open_bounds = queue.bounds() + [self._unresolved]
            bound = min(max(min(open_bounds), self._global_bound), self.incumbent_obj)
        x = self.incumbent if status != Status.UNBOUNDED else None
        objective = self.problem.objective_value(x) if x is not None else (
            -INF if status == Status.UNBOUNDED else INF)
        return MilpSolution(status=status, objective=objective, x=x,
                            best_bound=bound + constant if abs(bound) < INF else bound,
                            nodes=nodes, wall_time=time.monotonic() - start,
                            node_log=self.node_log, incumbents=self.incumbents)


def solve_bilinear(problem, products, params=None, heuristic=None, log_stream=None, starts=()):
    """Globally solve ``problem`` with the added equalities w = λ·u of ``products``.

    Returns a :class:`MilpSolution` whose status, bound and node log read
    like those of :func:`solve_milp`.
    """
    return SpatialBranchAndBound(problem, products, params, heuristic, log_stream).run(starts)
