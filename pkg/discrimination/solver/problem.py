"""Solver-agnostic MILP description with SOS-1 groups, and its result types."""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
import scipy.sparse as sp

INF = math.inf


class Status(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    GAP_LIMIT = "GapLimit"
    NODE_LIMIT = "NodeLimit"
    TIME_LIMIT = "TimeLimit"
    CUTOFF = "Cutoff"


BRANCHING_RULES = ("sos-first", "binary-first")
NODE_ORDERS = ("best-bound", "depth-first")


@dataclass(frozen=True)
class SolverParams:
    """Tolerances and limits for the LP kernel and branch-and-bound.

    ``sos-first`` branches on the most violated SOS-1 group (largest
    second-largest magnitude, ties to the lowest group index) before any
    fractional binary; ``binary-first`` does the opposite.
    """

    feas_tol: float = 1e-7
    opt_tol: float = 1e-7
    sos_tol: float = 1e-7
    int_tol: float = 1e-7
    rel_gap: float = 1e-6
    pivot_tol: float = 1e-9
    node_limit: Optional[int] = None
    time_limit_seconds: Optional[float] = None
    branching: str = "sos-first"
    node_order: str = "best-bound"
    max_pivots: int = 200000
    refactor_every: int = 100

    def __post_init__(self):
        for name in ("feas_tol", "opt_tol", "sos_tol", "int_tol", "rel_gap", "pivot_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.branching not in BRANCHING_RULES:
            raise ValueError(f"branching must be one of {BRANCHING_RULES}")
        if self.node_order not in NODE_ORDERS:
            raise ValueError(f"node_order must be one of {NODE_ORDERS}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError("node_limit must be at least 1")
        if self.time_limit_seconds is not None and self.time_limit_seconds <= 0:
            raise ValueError("time_limit_seconds must be positive")


@dataclass
class MilpProblem:
    """min cost·x + cost_constant  s.t.  A x (≤ | =) rhs,  lower ≤ x ≤ upper,
    binaries integral, and at most one nonzero member per SOS-1 group."""

    name: str
    lower: np.ndarray
    upper: np.ndarray
    binary: np.ndarray
    var_names: list
    A: sp.csr_matrix
    senses: np.ndarray
    rhs: np.ndarray
    row_names: list
    cost: np.ndarray
    cost_constant: float = 0.0
    sos1: list = field(default_factory=list)
    quadratic: Optional[dict] = None
    tags: dict = field(default_factory=dict)

    @property
    def num_vars(self):
        return len(self.lower)

    @property
    def num_rows(self):
        return self.A.shape[0]

    @property
    def num_binaries(self):
        return int(np.count_nonzero(self.binary))

    @property
    def num_continuous(self):
        return self.num_vars - self.num_binaries

    def check(self):
        """Structural invariants; returns a list of human-readable issues."""
        issues = []
        n = self.num_vars
        if self.A.shape[1] != n:
            issues.append(f"constraint matrix has {self.A.shape[1]} columns, expected {n}")
        for arr, label in ((self.upper, "upper"), (self.binary, "binary"), (self.cost, "cost")):
            if len(arr) != n:
                issues.append(f"{label} has length {len(arr)}, expected {n}")
        if len(self.rhs) != self.num_rows or len(self.senses) != self.num_rows:
            issues.append("rhs/senses length does not match the row count")
        if np.any(self.lower > self.upper):
            issues.append("some lower bound exceeds its upper bound")
        b = self.binary.astype(bool)
        if np.any(self.lower[b] < 0) or np.any(self.upper[b] > 1):
            issues.append("binary variable bounds must lie within [0, 1]")
        for g, members in enumerate(self.sos1):
            if len(members) == 0:
                issues.append(f"SOS-1 group {g} is empty")
            elif min(members) < 0 or max(members) >= n:
                issues.append(f"SOS-1 group {g} references a variable out of range")
        if any(s not in ("L", "E") for s in self.senses):
            issues.append("row senses must be 'L' or 'E'")
        return issues

    def objective_value(self, x):
        value = float(self.cost @ x) + self.cost_constant
        if self.quadratic:
            value += sum(coef * x[j] ** 2 for j, coef in self.quadratic.items())
        return value

    def row_activity(self, x):
        return self.A @ x

    def max_violation(self, x):
        """Largest scaled violation of rows and bounds: residual / (1 + ‖row‖∞)."""
        act = self.row_activity(x)
        resid = act - self.rhs
        viol = np.where(self.senses == "E", np.abs(resid), np.maximum(resid, 0.0))
        row_norm = abs(self.A).max(axis=1).toarray().ravel() if self.num_rows else np.zeros(0)
        scaled = viol / (1.0 + row_norm) if self.num_rows else np.zeros(0)
        bound_viol = np.maximum(self.lower - x, 0.0)
        bound_viol = np.maximum(bound_viol, np.maximum(x - self.upper, 0.0))
        worst = 0.0
        if scaled.size:
            worst = max(worst, float(scaled.max()))
        if bound_viol.size:
            worst = max(worst, float(bound_viol.max()))
        return worst

    def sos_violations(self, x, tol):
        """Indices of SOS-1 groups with more than one member above ``tol``."""
        return [g for g, members in enumerate(self.sos1)
                if np.count_nonzero(np.abs(x[list(members)]) > tol) > 1]

    def fractional_binaries(self, x, tol):
        idx = np.flatnonzero(self.binary)
        frac = np.abs(x[idx] - np.round(x[idx]))
        return idx[frac > tol]

    def verify(self, x, params):
        """Full feasibility check of a candidate point."""
        if x is None or len(x) != self.num_vars or not np.all(np.isfinite(x)):
            return False
        if self.max_violation(x) > params.feas_tol:
            return False
        if len(self.fractional_binaries(x, params.int_tol)):
            return False
        return not self.sos_violations(x, params.sos_tol)


@dataclass
class LpSolution:
    status: Status
    objective: float
    x: Optional[np.ndarray]
    duals: Optional[np.ndarray] = None
    reduced_costs: Optional[np.ndarray] = None
    farkas: Optional[np.ndarray] = None
    ray: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def certificate_rows(self):
        """Rows carrying weight in the infeasibility certificate."""
        if self.farkas is None:
            return []
        return [int(i) for i in np.flatnonzero(np.abs(self.farkas) > 1e-9)]


@dataclass
class MilpSolution:
    status: Status
    objective: float
    x: Optional[np.ndarray]
    best_bound: float
    nodes: int = 0
    wall_time: float = 0.0
    node_log: list = field(default_factory=list)
    incumbents: list = field(default_factory=list)

    @property
    def has_solution(self):
        return self.x is not None


class ProblemBuilder:
    """Incremental assembly of a MilpProblem from dense blocks.

    Variables are added in groups and addressed by index arrays; rows are
    added as horizontal concatenations of (indices, matrix) blocks.
    """

    def __init__(self, name="problem"):
        self.name = name
        self._lower = []
        self._upper = []
        self._binary = []
        self._names = []
        self._cost = []
        self._rows = []
        self._cols = []
        self._vals = []
        self._senses = []
        self._rhs = []
        self._row_names = []
        self._sos1 = []
        self.cost_constant = 0.0
        self.quadratic = None
        self.tags = {}

    @property
    def num_vars(self):
        return len(self._lower)

    @property
    def num_rows(self):
        return len(self._rhs)

    def add_variables(self, count, lower=-INF, upper=INF, binary=False, prefix="x"):
        start = self.num_vars
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (count,))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (count,))
        for k in range(count):
            self._lower.append(float(lower[k]))
            self._upper.append(float(upper[k]))
            self._binary.append(bool(binary))
            self._names.append(f"{prefix}[{k}]")
            self._cost.append(0.0)
        return np.arange(start, start + count)

    def add_block_rows(self, blocks, sense, rhs, prefix="row"):
        """Append rows Σ_b M_b x[idx_b] (sense) rhs; returns the row indices."""
        rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
        count = len(rhs)
        start = self.num_rows
        for idx, mat in blocks:
            idx = np.asarray(idx, dtype=int)
            mat = np.asarray(mat, dtype=float).reshape(count, len(idx))
            r, c = np.nonzero(mat)
            self._rows.extend((r + start).tolist())
            self._cols.extend(idx[c].tolist())
            self._vals.extend(mat[r, c].tolist())
        for k in range(count):
            self._senses.append(sense)
            self._rhs.append(float(rhs[k]))
            self._row_names.append(f"{prefix}[{k}]")
        return np.arange(start, start + count)

    def add_row(self, idx, coefs, sense, rhs, name="row"):
        coefs = np.asarray(coefs, dtype=float).reshape(1, -1)
        return self.add_block_rows([(idx, coefs)], sense, [rhs], prefix=name)[0]

    def add_sos1(self, members):
        members = [int(m) for m in members]
        if not members:
            raise ValueError("SOS-1 group must be nonempty")
        self._sos1.append(members)
        return len(self._sos1) - 1

    def add_cost(self, idx, coefs):
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), (len(idx),))
        for j, c in zip(idx, coefs):
            self._cost[int(j)] += float(c)

    def set_bounds(self, idx, lower=None, upper=None):
        for j in np.atleast_1d(idx):
            if lower is not None:
                self._lower[int(j)] = float(lower)
            if upper is not None:
                self._upper[int(j)] = float(upper)

    def build(self):
        n, m = self.num_vars, self.num_rows
        A = sp.coo_matrix((self._vals, (self._rows, self._cols)), shape=(m, n)).tocsr()
        A.sum_duplicates()
        return MilpProblem(
            name=self.name,
            lower=np.array(self._lower, dtype=float),
            upper=np.array(self._upper, dtype=float),
            binary=np.array(self._binary, dtype=bool),
            var_names=list(self._names),
            A=A,
            senses=np.array(self._senses, dtype="<U1"),
            rhs=np.array(self._rhs, dtype=float),
            row_names=list(self._row_names),
            cost=np.array(self._cost, dtype=float),
            cost_constant=self.cost_constant,
            sos1=[list(g) for g in self._sos1],
            quadratic=dict(self.quadratic) if self.quadratic else None,
            tags=dict(self.tags),
        )
