"""Affine models, half-space polytopes and scenario assembly."""
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import SamplingFailed, ScenarioError

logger = logging.getLogger(__name__)

SAMPLE_RETRIES = 1000
CONTAINS_TOL = 1e-12


def _matrix(value, rows=None, cols=None):
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and rows is not None and cols is not None and arr.size == rows * cols:
        arr = arr.reshape(rows, cols)
    if arr.ndim != 2:
        if arr.size == 0 and rows is not None and cols is not None:
            return np.zeros((rows, cols))
        raise ScenarioError(f"expected a matrix, got an array with shape {arr.shape}")
    return arr


def _noise_matrix(value, rows):
    # an empty list means the model has no such noise channel
    if np.asarray(value, dtype=float).size == 0:
        return np.zeros((rows, 0))
    return _matrix(value)


@dataclass(frozen=True, eq=False)
class Polytope:
    """{x : H x ≤ h}.  A polytope without rows is the whole space of its dimension;
    dimension 0 stands for an absent signal (no process or measurement noise)."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        h = np.array(self.h, dtype=float).reshape(-1)
        if H.ndim != 2:
            raise ScenarioError("polytope H must be a matrix")
        if H.shape[0] != h.shape[0]:
            raise ScenarioError(f"polytope has {H.shape[0]} rows in H but {h.shape[0]} in h")
        H.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_box(cls, lower, upper):
        """Axis-aligned box; infinite bounds produce no row."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape:
            raise ScenarioError("box bounds must have equal length")
        if np.any(lower > upper):
            raise ScenarioError("box lower bound exceeds upper bound")
        dim = len(lower)
        eye = np.eye(dim)
        rows = [eye[k] for k in range(dim) if np.isfinite(upper[k])]
        rows += [-eye[k] for k in range(dim) if np.isfinite(lower[k])]
        rhs = [upper[k] for k in range(dim) if np.isfinite(upper[k])]
        rhs += [-lower[k] for k in range(dim) if np.isfinite(lower[k])]
        H = np.array(rows).reshape(len(rows), dim)
        return cls(H, np.array(rhs))

    @classmethod
    def whole_space(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def rows(self):
        return self.H.shape[0]

    def __len__(self):
        return self.rows

    def __contains__(self, point):
        return self.contains(point)

    def contains(self, x, tol=CONTAINS_TOL):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ScenarioError(f"point of length {x.shape[0]} tested against a {self.dim}-dimensional polytope")
        return bool(np.all(self.H @ x <= self.h + tol))

    def violated_rows(self, x, tol=CONTAINS_TOL):
        return [int(i) for i in np.flatnonzero(self.H @ np.asarray(x, dtype=float) > self.h + tol)]

    def intersect(self, other):
        if other.dim != self.dim:
            raise ScenarioError("cannot intersect polytopes of different dimension")
        return Polytope(np.vstack([self.H, other.H]), np.concatenate([self.h, other.h]))

    def cartesian_product(self, other):
        return Polytope(scipy.linalg.block_diag(self.H, other.H),
                        np.concatenate([self.h, other.h]))

    def repeat(self, times):
        """The T-fold product diag_T(H) x ≤ 1_T ⊗ h."""
        if times < 1:
            raise ValueError("times must be at least 1")
        return Polytope(np.kron(np.eye(times), self.H), np.tile(self.h, times))

    def embed(self, dim, offset):
        """This set as a constraint on coordinates offset..offset+self.dim of R^dim."""
        H = np.zeros((self.rows, dim))
        H[:, offset:offset + self.dim] = self.H
        return Polytope(H, self.h.copy())

    @cached_property
    def bounding_box(self):
        """Per-coordinate (lower, upper) bounds, computed by LP unless the rows are axis-aligned."""
        H, h = self.H, self.h
        nnz = np.count_nonzero(H, axis=1)
        if np.all(nnz == 1):
            lower = np.full(self.dim, -np.inf)
            upper = np.full(self.dim, np.inf)
            for i in range(self.rows):
                j = int(np.flatnonzero(H[i])[0])
                bound = h[i] / H[i, j]
                if H[i, j] > 0:
                    upper[j] = min(upper[j], bound)
                else:
                    lower[j] = max(lower[j], bound)
            return lower, upper
        return self._lp_bounding_box()

    def _lp_bounding_box(self):
        from .solver.problem import ProblemBuilder, Status
        from .solver.simplex import DenseSimplex

        builder = ProblemBuilder("bounding-box")
        xs = builder.add_variables(self.dim, prefix="x")
        builder.add_block_rows([(xs, self.H)], "L", self.h, prefix="H")
        problem = builder.build()
        lower = np.full(self.dim, -np.inf)
        upper = np.full(self.dim, np.inf)
        for j in range(self.dim):
            for sign in (1.0, -1.0):
                cost = np.zeros(self.dim)
                cost[j] = sign
                kernel = DenseSimplex(problem.A.toarray(), problem.senses, problem.rhs, cost)
                lp = kernel.solve(problem.lower, problem.upper)
                if lp.status == Status.INFEASIBLE:
                    raise ScenarioError("polytope is empty")
                if lp.status != Status.OPTIMAL:
                    continue
                if sign > 0:
                    lower[j] = lp.objective
                else:
                    upper[j] = -lp.objective
        return lower, upper

    def sample(self, rng, retries=SAMPLE_RETRIES, label="polytope"):
        """Uniform point by rejection from the bounding box."""
        lower, upper = self.bounding_box
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise SamplingFailed(f"{label} is unbounded", 0)
        for _ in range(retries):
            x = rng.uniform(lower, upper)
            if self.contains(x):
                return x
        raise SamplingFailed(f"{label} rows {self.violated_rows(x)}", retries)

    def to_dict(self):
        return {"H": self.H.tolist(), "h": self.h.tolist()}

    @classmethod
    def from_dict(cls, data, dim=None):
        H = np.array(data.get("H", []), dtype=float)
        if H.size == 0:
            if dim is None:
                raise ScenarioError("an empty polytope needs an explicit dimension")
            H = np.zeros((0, dim))
        return cls(H, np.array(data.get("h", []), dtype=float))

    def __eq__(self, other):
        if not isinstance(other, Polytope):
            return NotImplemented
        return self.H.shape == other.H.shape and np.array_equal(self.H, other.H) \
            and np.array_equal(self.h, other.h)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class AffineModel:
    """One mode:  x⁺ = A x + B u + B_w w + f,  z = C x + D u + D_v v + g.

    The state is partitioned as (x, y) with dims (n_x, n_y) and the input as
    (u, d) with dims (m_u, m_d).  ``x_set`` and ``y_set`` are the
    responsibility polytopes; ``d_set`` bounds the uncontrolled input.
    """

    A: np.ndarray
    B: np.ndarray
    Bw: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Dv: np.ndarray
    f: np.ndarray
    g: np.ndarray
    n_x: int
    n_y: int
    m_u: int
    m_d: int
    x_set: Optional[Polytope] = None
    y_set: Optional[Polytope] = None
    d_set: Optional[Polytope] = None
    name: str = ""

    def __post_init__(self):
        for key in ("A", "B", "Bw", "C", "D", "Dv"):
            arr = np.array(getattr(self, key), dtype=float)
            if arr.ndim == 1:
                arr = arr.reshape(-1, 1)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        for key in ("f", "g"):
            arr = np.array(getattr(self, key), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, key, arr)
        if self.x_set is None and self.n_x > 0:
            object.__setattr__(self, "x_set", Polytope.whole_space(self.n_x))
        if self.y_set is None and self.n_y > 0:
            object.__setattr__(self, "y_set", Polytope.whole_space(self.n_y))
        if self.d_set is None and self.m_d > 0:
            object.__setattr__(self, "d_set", Polytope.whole_space(self.m_d))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def m_w(self):
        return self.Bw.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def m_v(self):
        return self.Dv.shape[1]

    @property
    def B_u(self):
        return self.B[:, :self.m_u]

    @property
    def B_d(self):
        return self.B[:, self.m_u:]

    @property
    def D_u(self):
        return self.D[:, :self.m_u]

    @property
    def D_d(self):
        return self.D[:, self.m_u:]

    @property
    def c_x(self):
        return self.x_set.rows if self.x_set is not None else 0

    @property
    def c_y(self):
        return self.y_set.rows if self.y_set is not None else 0

    @property
    def c_d(self):
        return self.d_set.rows if self.d_set is not None else 0

    def shape_issues(self, path="model"):
        """Every shape inconsistency as (path, message) pairs."""
        issues = []
        n, m = self.n, self.m
        expected = {
            "A": (n, n),
            "B": (n, self.m_u + self.m_d),
            "Bw": (n, self.m_w),
            "C": (self.p, n),
            "D": (self.p, self.m_u + self.m_d),
            "Dv": (self.p, self.m_v),
        }
        for key, shape in expected.items():
            actual = getattr(self, key).shape
            if actual != shape:
                issues.append((f"{path}.{key}", f"has shape {actual}, expected {shape}"))
        if len(self.f) != n:
            issues.append((f"{path}.f", f"has length {len(self.f)}, expected {n}"))
        if len(self.g) != self.p:
            issues.append((f"{path}.g", f"has length {len(self.g)}, expected {self.p}"))
        if self.n_x + self.n_y != n:
            issues.append((f"{path}.n_x", f"n_x + n_y = {self.n_x + self.n_y} but A is {n}×{n}"))
        if self.m_u + self.m_d != m:
            issues.append((f"{path}.m_u", f"m_u + m_d = {self.m_u + self.m_d} but B has {m} columns"))
        for key, dim in (("x_set", self.n_x), ("y_set", self.n_y), ("d_set", self.m_d)):
            poly = getattr(self, key)
            if poly is not None and poly.dim != dim:
                issues.append((f"{path}.{key}", f"has dimension {poly.dim}, expected {dim}"))
        for key in ("A", "B", "Bw", "C", "D", "Dv", "f", "g"):
            if not np.all(np.isfinite(getattr(self, key))):
                issues.append((f"{path}.{key}", "contains non-finite entries"))
        return issues

    def to_dict(self):
        def poly(p):
            return p.to_dict() if p is not None else {"H": [], "h": []}

        return {
            "name": self.name,
            "a": self.A.tolist(), "b": self.B.tolist(), "bw": self.Bw.tolist(),
            "c": self.C.tolist(), "d": self.D.tolist(), "dv": self.Dv.tolist(),
            "f": self.f.tolist(), "g": self.g.tolist(),
            "n_x": self.n_x, "n_y": self.n_y, "m_u": self.m_u, "m_d": self.m_d,
            "x_set": poly(self.x_set), "y_set": poly(self.y_set), "d_set": poly(self.d_set),
        }

    @classmethod
    def from_dict(cls, data):
        n = int(data["n_x"]) + int(data["n_y"])
        m_u, m_d = int(data["m_u"]), int(data["m_d"])
        p = len(data["g"])

        def poly(key, dim):
            if dim == 0:
                return None
            return Polytope.from_dict(data.get(key) or {}, dim=dim)

        return cls(
            A=_matrix(data["a"], n, n), B=_matrix(data["b"], n, m_u + m_d),
            Bw=_noise_matrix(data["bw"], n), C=_matrix(data["c"], p, n),
            D=_matrix(data["d"], p, m_u + m_d), Dv=_noise_matrix(data["dv"], p),
            f=data["f"], g=data["g"],
            n_x=int(data["n_x"]), n_y=int(data["n_y"]), m_u=m_u, m_d=m_d,
            x_set=poly("x_set", int(data["n_x"])), y_set=poly("y_set", int(data["n_y"])),
            d_set=poly("d_set", m_d), name=data.get("name", ""),
        )


class ObjectiveKind(str, Enum):
    ONE_NORM = "one"
    INF_NORM = "inf"
    WEIGHTED_SUM = "weighted"
    DELTA_INF_NORM = "delta"
    EXTERNAL_QUADRATIC = "quad"


OBJECTIVE_SPELLINGS = ("one", "inf", "one+2inf", "one+delta", "quad")


@dataclass(frozen=True)
class ObjectiveSpec:
    """Cost on the input sequence.

    ``WEIGHTED_SUM`` is w1·‖u‖₁ + w2·‖u‖∞ and ``DELTA_INF_NORM`` is
    w1·‖u‖₁ + w2·max_k ‖u(k) − u(k−1)‖∞.  ``EXTERNAL_QUADRATIC`` is ‖u‖₂²
    and needs a quadratic-capable external backend.
    """

    kind: ObjectiveKind = ObjectiveKind.ONE_NORM
    w1: float = 1.0
    w2: float = 0.0

    @classmethod
    def parse(cls, spelling):
        spelling = spelling.strip().lower()
        if spelling == "one":
            return cls(ObjectiveKind.ONE_NORM, 1.0, 0.0)
        if spelling == "inf":
            return cls(ObjectiveKind.INF_NORM, 0.0, 1.0)
        if spelling == "one+2inf":
            return cls(ObjectiveKind.WEIGHTED_SUM, 1.0, 2.0)
        if spelling == "one+delta":
            return cls(ObjectiveKind.DELTA_INF_NORM, 1.0, 1.0)
        if spelling == "quad":
            return cls(ObjectiveKind.EXTERNAL_QUADRATIC, 1.0, 0.0)
        raise ScenarioError(f"unknown objective {spelling!r}; expected one of {', '.join(OBJECTIVE_SPELLINGS)}")

    @property
    def label(self):
        if self.kind == ObjectiveKind.ONE_NORM:
            return "one"
        if self.kind == ObjectiveKind.INF_NORM:
            return "inf"
        if self.kind == ObjectiveKind.EXTERNAL_QUADRATIC:
            return "quad"
        if self.kind == ObjectiveKind.WEIGHTED_SUM and (self.w1, self.w2) == (1.0, 2.0):
            return "one+2inf"
        if self.kind == ObjectiveKind.DELTA_INF_NORM and (self.w1, self.w2) == (1.0, 1.0):
            return "one+delta"
        return f"{self.kind.value}({self.w1:g},{self.w2:g})"

    def issues(self):
        out = []
        if self.w1 < 0 or self.w2 < 0:
            out.append(("objective", "weights must be nonnegative"))
        elif self.kind in (ObjectiveKind.WEIGHTED_SUM, ObjectiveKind.DELTA_INF_NORM) and \
                self.w1 == 0 and self.w2 == 0:
            out.append(("objective", "at least one weight must be positive"))
        return out

    def evaluate(self, u, m_u):
        """Objective value of a stacked input sequence."""
        u = np.asarray(u, dtype=float)
        if self.kind == ObjectiveKind.ONE_NORM:
            return float(np.abs(u).sum())
        if self.kind == ObjectiveKind.INF_NORM:
            return float(np.abs(u).max(initial=0.0))
        if self.kind == ObjectiveKind.WEIGHTED_SUM:
            return self.w1 * float(np.abs(u).sum()) + self.w2 * float(np.abs(u).max(initial=0.0))
        if self.kind == ObjectiveKind.DELTA_INF_NORM:
            steps = u.reshape(-1, m_u)
            delta = np.abs(np.diff(steps, axis=0)).max(initial=0.0)
            return self.w1 * float(np.abs(u).sum()) + self.w2 * float(delta)
        return float(u @ u)

    def to_dict(self):
        return {"kind": self.kind.value, "w1": self.w1, "w2": self.w2}

    @classmethod
    def from_dict(cls, data):
        if isinstance(data, str):
            return cls.parse(data)
        return cls(ObjectiveKind(data["kind"]), float(data.get("w1", 1.0)), float(data.get("w2", 0.0)))


@dataclass(frozen=True, eq=False)
class Scenario:
    """N affine models with shared initial, input and noise sets."""

    models: tuple
    horizon: int
    epsilon: float
    objective: ObjectiveSpec
    x0_set: Polytope
    u_set: Polytope
    w_set: Polytope
    v_set: Polytope
    name: str = "scenario"
    sampling_time: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))

    @property
    def N(self):
        return len(self.models)

    @property
    def T(self):
        return self.horizon

    @property
    def dims(self):
        ref = self.models[0]
        return {"n": ref.n, "n_x": ref.n_x, "n_y": ref.n_y, "m_u": ref.m_u,
                "m_w": ref.m_w, "m_v": ref.m_v, "p": ref.p}

    @property
    def pairs(self):
        """All unordered pairs (i, j), i < j, in lexicographic order."""
        return list(combinations(range(self.N), 2))

    @property
    def input_box(self):
        """Polytope over the stacked input sequence (U repeated T times)."""
        return self.u_set.repeat(self.horizon)

    def with_horizon(self, horizon):
        return replace(self, horizon=int(horizon))

    def with_objective(self, objective):
        return replace(self, objective=objective)

    def to_dict(self):
        data = {
            "name": self.name,
            "horizon": self.horizon,
            "epsilon": self.epsilon,
            "objective": self.objective.to_dict(),
            "shared_sets": {"x0": self.x0_set.to_dict(), "u": self.u_set.to_dict(),
                            "w": self.w_set.to_dict(), "v": self.v_set.to_dict()},
            "models": [m.to_dict() for m in self.models],
        }
        if self.sampling_time is not None:
            data["sampling_time"] = self.sampling_time
        return data

    @classmethod
    def from_dict(cls, data):
        models = [AffineModel.from_dict(m) for m in data["models"]]
        if not models:
            raise ScenarioError("scenario has no models")
        ref = models[0]
        sets = data["shared_sets"]
        return cls(
            models=models,
            horizon=int(data["horizon"]),
            epsilon=float(data["epsilon"]),
            objective=ObjectiveSpec.from_dict(data.get("objective", "one")),
            x0_set=Polytope.from_dict(sets["x0"], dim=ref.n),
            u_set=Polytope.from_dict(sets["u"], dim=ref.m_u),
            w_set=Polytope.from_dict(sets["w"], dim=ref.m_w),
            v_set=Polytope.from_dict(sets["v"], dim=ref.m_v),
            name=data.get("name", "scenario"),
            sampling_time=data.get("sampling_time"),
        )


def load_scenario(path):
    """Read and schema-validate a scenario JSON document."""
    from pydantic import ValidationError

    from .schemas import ScenarioDocument

    try:
        text = Path(path).read_text()
        document = ScenarioDocument.model_validate_json(text)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}")
    except ValidationError as exc:
        raise ScenarioError(f"scenario {path} does not match the schema:\n{exc}")
    try:
        return Scenario.from_dict(document.model_dump(exclude_none=True))
    except (KeyError, ValueError) as exc:
        raise ScenarioError(f"scenario {path} is malformed: {exc}")


def save_scenario(scenario, path):
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2) + "\n")


# ----------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def messages(self):
        return [f"{path}: {message}" for path, message in self.violations]

    def to_dict(self):
        return {"success": self.ok, "violations": self.messages()}


def validate_scenario(scenario):
    """Collect every shape and invariant violation; an empty report means valid."""
    violations = []
    if scenario.N < 2:
        violations.append(("models", f"need at least 2 models, got {scenario.N}"))
    if not scenario.horizon >= 1:
        violations.append(("horizon", "horizon must be at least 1"))
    if not scenario.epsilon > 0:
        violations.append(("epsilon", "epsilon must be positive"))
    violations.extend(scenario.objective.issues())
    if scenario.N == 0:
        return ValidationReport(violations)

    ref = scenario.models[0]
    for i, model in enumerate(scenario.models):
        path = f"models[{i}]"
        violations.extend(model.shape_issues(path))
        for key in ("n", "n_x", "n_y", "m_u", "m_w", "m_v", "p"):
            if getattr(model, key) != getattr(ref, key):
                violations.append((f"{path}.{key}",
                                   f"is {getattr(model, key)}, expected {getattr(ref, key)} as in models[0]"))

    for key, poly, dim in (("x0", scenario.x0_set, ref.n), ("u", scenario.u_set, ref.m_u),
                           ("w", scenario.w_set, ref.m_w), ("v", scenario.v_set, ref.m_v)):
        if poly.dim != dim:
            violations.append((f"shared_sets.{key}", f"has dimension {poly.dim}, expected {dim}"))
    return ValidationReport(violations)


# ----------------------------------------------------------------------
# well-posedness


@dataclass
class WellPosednessReport:
    verdicts: list = field(default_factory=list)

    @property
    def ok(self):
        return all(v["passed"] for v in self.verdicts)

    def to_dict(self):
        return {"success": self.ok, "models": self.verdicts}


def _responsibility_lp(model, horizon, which, x0, fixed, free_set):
    """Feasibility of  ∃ free ∈ free_set^T  keeping the ``which`` partition
    inside its responsibility set for k = 1..horizon."""
    from .solver.problem import ProblemBuilder, Status
    from .solver.simplex import solve_lp
    from .stack import partition_maps, stack_single

    st = stack_single(model, horizon)
    maps = partition_maps(model, st, which)
    poly = model.y_set if which == "y" else model.x_set
    P = np.kron(np.eye(horizon), poly.H)
    p = np.tile(poly.h, horizon)
    if which == "y":
        G_free, G_fixed, fixed_values = maps.Gd, maps.Gu, fixed["u"]
    else:
        G_free, G_fixed, fixed_values = maps.Gu, maps.Gd, fixed["d"]
    const = maps.M @ x0 + G_fixed @ fixed_values + maps.Gw @ fixed["w"] + maps.f
    builder = ProblemBuilder(f"{which}-responsibility")
    free = builder.add_variables(G_free.shape[1], prefix="free")
    if G_free.shape[1]:
        builder.add_block_rows([(free, P @ G_free)], "L", p - P @ const, prefix="resp")
        builder.add_block_rows([(free, free_set.repeat(horizon).H)], "L",
                               free_set.repeat(horizon).h, prefix="set")
    else:
        violated = P @ const > p + 1e-9
        return not bool(np.any(violated))
    return solve_lp(builder.build()).status == Status.OPTIMAL


def check_well_posedness(scenario, sample_count=100, seed=0):
    """Sampled necessary test of the responsibility contract for each model.

    For every model, sampled (x0, u, w) must admit a d keeping y in X_y and
    sampled (x0, d, w) must admit a u keeping x in X_x.  A failing sample is
    reported with the first time step whose prefix problem is infeasible.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    T = scenario.horizon
    verdicts = []
    for i, model in enumerate(scenario.models):
        verdict = {"model": i, "name": model.name, "passed": True, "samples": sample_count, "witness": None}
        checks = [kind for kind, rows in (("y", model.c_y), ("x", model.c_x)) if rows > 0]
        if checks:
            start = scenario.x0_set
            if model.c_y:
                start = start.intersect(model.y_set.embed(model.n, model.n_x))
            if model.c_x:
                start = start.intersect(model.x_set.embed(model.n, 0))
            u_box = scenario.u_set.repeat(T)
            w_box = scenario.w_set.repeat(T)
            d_box = model.d_set.repeat(T) if model.m_d else None
            for s in range(sample_count):
                x0 = start.sample(rng, label=f"model {i} initial set")
                fixed = {"u": u_box.sample(rng, label="U^T"), "w": w_box.sample(rng, label="W^T"),
                         "d": d_box.sample(rng, label="D^T") if d_box is not None else np.zeros(0)}
                for kind in checks:
                    free_set = scenario.u_set if kind == "x" else model.d_set
                    if _responsibility_lp(model, T, kind, x0, fixed, free_set):
                        continue
                    first = next(t for t in range(1, T + 1)
                                 if not _responsibility_lp(model, t, kind, x0,
                                                           _prefix(fixed, model, scenario, t), free_set))
                    verdict["passed"] = False
                    verdict["witness"] = {
                        "check": f"{kind}-responsibility",
                        "sample": s,
                        "first_violation_k": first,
                        "x0": x0.tolist(),
                        "u": fixed["u"].tolist(),
                        "d": fixed["d"].tolist(),
                        "w": fixed["w"].tolist(),
                    }
                    break
                if not verdict["passed"]:
                    break
        if not verdict["passed"]:
            logger.warning("model %d fails the sampled well-posedness test: %s", i, verdict["witness"])
        verdicts.append(verdict)
    return WellPosednessReport(verdicts)


def _prefix(fixed, model, scenario, t):
    return {"u": fixed["u"][:t * scenario.u_set.dim],
            "w": fixed["w"][:t * scenario.w_set.dim],
            "d": fixed["d"][:t * model.m_d]}
