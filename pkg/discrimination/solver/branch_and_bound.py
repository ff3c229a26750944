"""Branch-and-bound over the dense simplex with SOS-1 and binary branching."""
import heapq
import itertools
import json
import logging
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import UnsupportedObjectiveError
from .problem import INF, MilpSolution, SolverParams, Status
from .simplex import Basis, DenseSimplex

logger = logging.getLogger(__name__)


@dataclass
class _Node:
    id: int
    depth: int
    bound: float
    lower: np.ndarray
    upper: np.ndarray
    decision: str
    parent_token: Optional[int] = None
    basis: Optional[Basis] = None


class _NodeQueue:
    def __init__(self, order):
        self.order = order
        self._items = []

    def push(self, node):
        if self.order == "best-bound":
            heapq.heappush(self._items, (node.bound, node.id, node))
        else:
            self._items.append(node)

    def pop(self):
        if self.order == "best-bound":
            return heapq.heappop(self._items)[2]
        return self._items.pop()

    def bounds(self):
        if self.order == "best-bound":
            return [item[0] for item in self._items]
        return [node.bound for node in self._items]

    def __len__(self):
        return len(self._items)


class BranchAndBound:
    """MILP search state.

    ``heuristic`` is an optional callable taking the LP point of a node and
    returning a full candidate vector (or ``None``); candidates are only
    accepted after passing :meth:`MilpProblem.verify`.
    """

    def __init__(self, problem, params=None, heuristic=None, log_stream=None):
        if problem.quadratic:
            raise UnsupportedObjectiveError(
                "the built-in solver handles linear objectives only; use an external backend")
        issues = problem.check()
        if issues:
            raise ValueError("; ".join(issues))
        self.problem = problem
        self.params = params or SolverParams()
        self.heuristic = heuristic
        self.log_stream = log_stream
        self.kernel = DenseSimplex.from_problem(problem, self.params)
        self.incumbent = None
        self.incumbent_obj = INF
        self.incumbents = []
        self.node_log = []
        self._ids = itertools.count()
        self._global_bound = -INF
        self._member_groups = {}
        for g, members in enumerate(problem.sos1):
            for j in members:
                self._member_groups.setdefault(j, []).append(g)

    # ------------------------------------------------------------------

    def cutoff(self):
        if self.incumbent is None:
            return INF
        return self.incumbent_obj - self.params.rel_gap * max(1.0, abs(self.incumbent_obj))

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

    def _offer(self, x, source):
        if not self.problem.verify(x, self.params):
            logger.debug("rejected %s candidate that failed verification", source)
            return False
        obj = self.problem.objective_value(x) - self.problem.cost_constant
        if obj < self.incumbent_obj:
            self.incumbent = np.array(x, dtype=float)
            self.incumbent_obj = obj
            self.incumbents.append({"objective": obj + self.problem.cost_constant,
                                    "source": source})
            logger.info("new incumbent %.9g from %s", obj + self.problem.cost_constant, source)
            return True
        return False

    # ------------------------------------------------------------------
    # branching

    def _most_violated_sos(self, x):
        best, best_score = None, 0.0
        tol = self.params.sos_tol
        for g, members in enumerate(self.problem.sos1):
            mags = np.sort(np.abs(x[members]))[::-1]
            if len(mags) < 2 or mags[1] <= tol:
                continue
            if mags[1] > best_score:
                best, best_score = g, mags[1]
        return best

    def _most_fractional(self, x):
        idx = self.problem.fractional_binaries(x, self.params.int_tol)
        if idx.size == 0:
            return None
        frac = np.abs(x[idx] - np.round(x[idx]))
        return int(idx[np.argmax(frac)])

    def _propagate(self, lower, upper):
        """Fix SOS partners of members that are forced nonzero; False if contradictory."""
        tol = self.params.sos_tol
        changed = True
        while changed:
            changed = False
            for members in self.problem.sos1:
                forced = [j for j in members if lower[j] > tol or upper[j] < -tol]
                if len(forced) > 1:
                    return False
                if forced:
                    for j in members:
                        if j != forced[0] and (lower[j] != 0.0 or upper[j] != 0.0):
                            if lower[j] > 0.0 or upper[j] < 0.0:
                                return False
                            lower[j] = upper[j] = 0.0
                            changed = True
        return True

    def _children(self, node, x, bound):
        sos = self._most_violated_sos(x)
        binary = self._most_fractional(x)
        use_sos = sos is not None and (self.params.branching == "sos-first" or binary is None)
        specs = []
        if use_sos:
            members = self.problem.sos1[sos]
            # largest member last so depth-first explores it first
            ordered = sorted(members, key=lambda j: (abs(x[j]), -j))
            for keep in ordered:
                lower, upper = node.lower.copy(), node.upper.copy()
                if lower[keep] == upper[keep] == 0.0:
                    continue
                for j in members:
                    if j != keep:
                        if lower[j] > 0.0 or upper[j] < 0.0:
                            break
                        lower[j] = upper[j] = 0.0
                else:
                    specs.append((lower, upper, f"sos{sos}:keep{keep}"))
        elif binary is not None:
            value = x[binary]
            down = (node.lower.copy(), node.upper.copy(), f"x{binary}<=0")
            down[1][binary] = np.floor(value)
            up = (node.lower.copy(), node.upper.copy(), f"x{binary}>=1")
            up[0][binary] = np.ceil(value)
            specs = [down, up] if value >= 0.5 else [up, down]
        children = []
        for lower, upper, decision in specs:
            if not self._propagate(lower, upper):
                continue
            children.append(_Node(id=next(self._ids), depth=node.depth + 1, bound=bound,
                                  lower=lower, upper=upper, decision=decision))
        return children

    # ------------------------------------------------------------------

    def run(self, starts=()):
        params = self.params
        start = time.monotonic()
        for candidate in starts:
            if candidate is not None:
                self._offer(np.asarray(candidate, dtype=float), "start")
        lower, upper = self.problem.lower.copy(), self.problem.upper.copy()
        queue = _NodeQueue(params.node_order)
        nodes = 0
        limit_status = None
        if self._propagate(lower, upper):
            queue.push(_Node(id=next(self._ids), depth=0, bound=-INF,
                             lower=lower, upper=upper, decision="root"))

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
            open_bounds = queue.bounds() + [node.bound]
            self._global_bound = max(self._global_bound, min(open_bounds))

            if node.parent_token is not None and node.parent_token == self.kernel.token:
                warm = "current"
            else:
                warm = node.basis
            lp = self.kernel.solve(node.lower, node.upper, warm=warm, cutoff=self.cutoff())

            if lp.status == Status.CUTOFF:
                self._log(node, lp.objective, "cutoff")
                continue
            if lp.status == Status.INFEASIBLE:
                self._log(node, None, "infeasible")
                continue
            if lp.status == Status.UNBOUNDED:
                self._log(node, None, "unbounded")
                return self._finish(Status.UNBOUNDED, nodes, start, queue)
            if lp.objective >= self.cutoff():
                self._log(node, lp.objective, "pruned")
                continue

            children = self._children(node, lp.x, lp.objective)
            if not children and not self.problem.sos_violations(lp.x, params.sos_tol) \
                    and not len(self.problem.fractional_binaries(lp.x, params.int_tol)):
                self._offer(lp.x, "relaxation")
                self._log(node, lp.objective, "integral")
                continue
            if self.heuristic is not None:
                candidate = self.heuristic(lp.x)
                if candidate is not None:
                    self._offer(candidate, "heuristic")
                    if lp.objective >= self.cutoff():
                        self._log(node, lp.objective, "pruned-by-heuristic")
                        continue

            self._log(node, lp.objective, "branched")
            token = self.kernel.token
            basis = self.kernel.snapshot()
            # the child solved next continues from the live tableau
            for child in children:
                child.parent_token = token
                child.basis = basis
                queue.push(child)

        if limit_status is None:
            status = Status.OPTIMAL if self.incumbent is not None else Status.INFEASIBLE
        else:
            status = limit_status
        return self._finish(status, nodes, start, queue)

    def _finish(self, status, nodes, start, queue):
        constant = self.problem.cost_constant
        if status == Status.OPTIMAL:
            bound = self.incumbent_obj
        elif status == Status.INFEASIBLE:
            bound = INF
        elif status == Status.UNBOUNDED:
            bound = -INF
        else:
            open_bounds = queue.bounds()
            bound = min(open_bounds) if open_bounds else INF
            bound = min(max(bound, self._global_bound), self.incumbent_obj)
        x = self.incumbent if status != Status.UNBOUNDED else None
        objective = self.problem.objective_value(x) if x is not None else (
            -INF if status == Status.UNBOUNDED else INF)
        return MilpSolution(status=status, objective=objective, x=x,
                            best_bound=bound + constant if abs(bound) < INF else bound,
                            nodes=nodes, wall_time=time.monotonic() - start,
                            node_log=self.node_log, incumbents=self.incumbents)


def _finite_or_none(value):
    if value is None or not np.isfinite(value):
        return None
    return float(value)


def solve_milp(problem, params=None, heuristic=None, log_stream=None, starts=()):
    """Solve ``problem`` with the built-in branch-and-bound.

    ``starts`` are full candidate vectors offered before the root node.

    Returns a :class:`MilpSolution`.  A problem carrying a quadratic
    objective raises :class:`UnsupportedObjectiveError`.
    """
    return BranchAndBound(problem, params, heuristic, log_stream).run(starts)
