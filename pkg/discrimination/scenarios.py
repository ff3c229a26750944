"""Built-in benchmark scenarios and a seeded simulation harness.

Three scenarios ship with the package: the five-model second-order
numerical example and the two driver-intention case studies (intersection
crossing and highway lane change), each with inattentive, cautious and
malicious driver models.  PD driver feedback is folded into A and f, the
residual driver acceleration is the uncontrolled input d.
"""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import SamplingFailed, ScenarioError
from .invalidation import ObservationWindow, timeline
from .model import AffineModel, ObjectiveSpec, Polytope, Scenario
from .stack import simulate

logger = logging.getLogger(__name__)

INF = np.inf
SAMPLE_RETRIES = 1000


# ----------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class IntentionParams:
    """Settings shared by both driving scenarios.

    Disturbance sets are fractions of the acceleration bounds applied to
    each bound separately, e.g. D_I = [0.1·u_min, 0.1·u_max].
    """

    dt: float = 0.3
    u_min: float = -7.85
    u_max: float = 3.97
    inattentive_fraction: float = 0.1
    driver_fraction: float = 0.05
    process_noise: float = 0.01
    measurement_noise: float = 0.01
    epsilon: float = 0.25
    horizon: int = 8

    def __post_init__(self):
        problems = []
        if not self.dt > 0:
            problems.append("dt must be positive")
        if not self.u_min < self.u_max:
            problems.append("u_min must be below u_max")
        for key in ("inattentive_fraction", "driver_fraction"):
            if not 0 < getattr(self, key) <= 1:
                problems.append(f"{key} must lie in (0, 1]")
        if self.process_noise < 0 or self.measurement_noise < 0:
            problems.append("noise bounds must be nonnegative")
        if not self.epsilon > 0:
            problems.append("epsilon must be positive")
        if self.horizon < 1:
            problems.append("horizon must be at least 1")
        for item in fields(self):
            value = getattr(self, item.name)
            if isinstance(value, tuple) and not value[0] <= value[1]:
                problems.append(f"{item.name} bounds are not ordered")
        if problems:
            raise ScenarioError("; ".join(problems))

    def disturbance_set(self, fraction):
        return Polytope.from_box([fraction * self.u_min], [fraction * self.u_max])

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class IntersectionParams(IntentionParams):
    kp_cautious: float = 1.5
    kd_cautious: float = 4.75
    kp_malicious: float = 1.0
    kd_malicious: float = 3.5
    position0: tuple = (15.0, 18.0)
    velocity0: tuple = (6.0, 9.0)
    ego_velocity: tuple = (0.0, 9.0)
    inattentive_velocity: tuple = (6.0, 9.0)
    malicious_velocity: tuple = (0.0, 10.0)


@dataclass(frozen=True)
class LaneChangeParams(IntentionParams):
    kd_cautious: float = 0.9
    lp_cautious: float = 2.5
    ld_cautious: float = 8.9
    kd_malicious: float = 1.1
    lp_malicious: float = 2.0
    ld_malicious: float = 8.7
    y_bar: float = 2.0
    lateral_velocity: tuple = (-0.35, 0.0)
    ego_velocity0: tuple = (30.0, 32.0)
    ego_lateral0: tuple = (1.1, 1.8)
    other_position0: tuple = (7.0, 12.0)
    other_velocity0: tuple = (30.0, 32.0)
    ego_velocity: tuple = (27.0, 35.0)
    ego_lateral: tuple = (0.5, 2.0)


# ----------------------------------------------------------------------
# builders


def build_numerical_example():
    """Five second-order models: one baseline and four single-matrix edits."""
    A1 = np.array([[0.6, 0.2], [-0.4, -0.2]])
    base = dict(A=A1, B=np.eye(2), Bw=np.ones((2, 1)), C=np.eye(2), D=np.zeros((2, 2)),
                Dv=np.ones((2, 1)), f=np.zeros(2), g=np.zeros(2), n_x=1, n_y=1, m_u=1, m_d=1,
                d_set=Polytope.from_box([-0.1], [0.1]))

    A2 = A1.copy()
    A2[0, 0] = 1.0
    A3 = A1.copy()
    A3[0, 1] = -0.5
    edits = [{}, {"A": A2}, {"A": A3},
             {"B": np.array([[0.0, 0.0], [0.0, 1.0]])},
             {"C": np.array([[1.0, 0.0], [0.0, 0.0]])}]
    models = [AffineModel(**dict(base, **edit, name=f"model-{i + 1}")) for i, edit in enumerate(edits)]

    noise = Polytope.from_box([-0.01], [0.01])
    return Scenario(
        models=models,
        horizon=2,
        epsilon=0.01,
        objective=ObjectiveSpec.parse("one"),
        x0_set=Polytope.from_box([0.0, 1.0], [1.0, 2.0]),
        u_set=Polytope.from_box([-2.0], [2.0]),
        w_set=noise,
        v_set=noise,
        name="numerical",
    )


def _driver_row(A, row, entries):
    A = A.copy()
    for col, value in entries.items():
        A[row, col] = value
    return A


def build_intersection(params=None, extra_malicious_velocity=False, horizon=None):
    """Ego car (x, v_x) and other car (y, v_y) approaching an intersection.

    Only the other car's velocity is observed.  ``extra_malicious_velocity``
    adds v_y ∈ [0, 10] as a responsibility of the malicious driver, which
    couples its y-constraints to the ego input.
    """
    p = params or IntersectionParams()
    dt = p.dt
    A_I = np.array([[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], dtype=float)
    B = np.array([[0, 0], [dt, 0], [0, 0], [0, dt]], dtype=float)
    A_C = _driver_row(A_I, 3, {2: -p.kp_cautious * dt, 3: 1 - p.kd_cautious * dt})
    A_M = _driver_row(A_I, 3, {0: p.kp_malicious * dt, 1: p.kd_malicious * dt,
                               2: -p.kp_malicious * dt, 3: 1 - p.kd_malicious * dt})

    x_set = Polytope.from_box([-INF, p.ego_velocity[0]], [INF, p.ego_velocity[1]])
    common = dict(B=B, Bw=B, C=np.array([[0, 0, 0, 1.0]]), D=np.zeros((1, 2)), Dv=np.ones((1, 1)),
                  f=np.zeros(4), g=np.zeros(1), n_x=2, n_y=2, m_u=1, m_d=1, x_set=x_set)
    malicious_y = None
    if extra_malicious_velocity:
        malicious_y = Polytope.from_box([-INF, p.malicious_velocity[0]], [INF, p.malicious_velocity[1]])
    models = [
        AffineModel(A=A_I, **common, name="inattentive", d_set=p.disturbance_set(p.inattentive_fraction),
                    y_set=Polytope.from_box([-INF, p.inattentive_velocity[0]],
                                            [INF, p.inattentive_velocity[1]])),
        AffineModel(A=A_C, **common, name="cautious", d_set=p.disturbance_set(p.driver_fraction)),
        AffineModel(A=A_M, **common, name="malicious", d_set=p.disturbance_set(p.driver_fraction),
                    y_set=malicious_y),
    ]
    lo = [p.position0[0], p.velocity0[0], p.position0[0], p.velocity0[0]]
    hi = [p.position0[1], p.velocity0[1], p.position0[1], p.velocity0[1]]
    return Scenario(
        models=models,
        horizon=int(horizon or p.horizon),
        epsilon=p.epsilon,
        objective=ObjectiveSpec.parse("one"),
        x0_set=Polytope.from_box(lo, hi),
        u_set=Polytope.from_box([p.u_min], [p.u_max]),
        w_set=Polytope.from_box([-p.process_noise] * 2, [p.process_noise] * 2),
        v_set=Polytope.from_box([-p.measurement_noise], [p.measurement_noise]),
        name="intersection-extra" if extra_malicious_velocity else "intersection",
        sampling_time=dt,
    )


def build_lane_change(params=None, horizon=None):
    """Ego car (x_e, v_x,e, y_e) nudging towards the lane of car (x_o, v_x,o).

    Controlled inputs are the ego acceleration and lateral velocity.  The
    L_d entry of the malicious B carries dt like the cautious one and the
    malicious offset uses the malicious L_p.
    """
    p = params or LaneChangeParams()
    dt = p.dt
    A_I = np.array([[1, dt, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0],
                    [0, 0, 0, 1, dt], [0, 0, 0, 0, 1]], dtype=float)
    B_I = np.array([[0, 0, 0], [dt, 0, 0], [0, dt, 0], [0, 0, 0], [0, 0, dt]], dtype=float)
    A_C = _driver_row(A_I, 4, {1: -p.kd_cautious * dt, 2: p.lp_cautious * dt, 4: 1 + p.kd_cautious * dt})
    A_M = _driver_row(A_I, 4, {1: p.kd_malicious * dt, 2: -p.lp_malicious * dt, 4: 1 - p.kd_malicious * dt})
    B_C = _driver_row(B_I, 4, {1: p.ld_cautious * dt})
    B_M = _driver_row(B_I, 4, {1: -p.ld_malicious * dt})
    f_C = np.zeros(5)
    f_C[4] = -p.lp_cautious * p.y_bar * dt
    f_M = np.zeros(5)
    f_M[4] = p.lp_malicious * p.y_bar * dt

    x_set = Polytope.from_box([-INF, p.ego_velocity[0], p.ego_lateral[0]],
                              [INF, p.ego_velocity[1], p.ego_lateral[1]])
    common = dict(Bw=B_I, C=np.array([[0, 0, 0, 0, 1.0]]), D=np.zeros((1, 3)), Dv=np.ones((1, 1)),
                  g=np.zeros(1), n_x=3, n_y=2, m_u=2, m_d=1, x_set=x_set)
    models = [
        AffineModel(A=A_I, B=B_I, f=np.zeros(5), **common, name="inattentive",
                    d_set=p.disturbance_set(p.inattentive_fraction)),
        AffineModel(A=A_C, B=B_C, f=f_C, **common, name="cautious",
                    d_set=p.disturbance_set(p.driver_fraction)),
        AffineModel(A=A_M, B=B_M, f=f_M, **common, name="malicious",
                    d_set=p.disturbance_set(p.driver_fraction)),
    ]
    lo = [0.0, p.ego_velocity0[0], p.ego_lateral0[0], p.other_position0[0], p.other_velocity0[0]]
    hi = [0.0, p.ego_velocity0[1], p.ego_lateral0[1], p.other_position0[1], p.other_velocity0[1]]
    return Scenario(
        models=models,
        horizon=int(horizon or p.horizon),
        epsilon=p.epsilon,
        objective=ObjectiveSpec.parse("one"),
        x0_set=Polytope.from_box(lo, hi),
        u_set=Polytope.from_box([p.u_min, p.lateral_velocity[0]], [p.u_max, p.lateral_velocity[1]]),
        w_set=Polytope.from_box([-p.process_noise] * 3, [p.process_noise] * 3),
        v_set=Polytope.from_box([-p.measurement_noise], [p.measurement_noise]),
        name="lane-change",
        sampling_time=dt,
    )


BUILTIN_SCENARIOS = {
    "numerical": build_numerical_example,
    "intersection": build_intersection,
    "lane-change": build_lane_change,
}


def builtin_scenario(name):
    try:
        return BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ScenarioError(f"unknown built-in scenario {name!r}; choose from {', '.join(BUILTIN_SCENARIOS)}")


# ----------------------------------------------------------------------
# simulation


@dataclass
class SimulationRun:
    """One seeded trajectory of the true model under the applied input."""

    seed: int
    true_model: int
    u: np.ndarray
    x0: np.ndarray
    d: np.ndarray
    w: np.ndarray
    v: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    timeline: list = field(default_factory=list)
    model_names: list = field(default_factory=list)

    @property
    def horizon(self):
        return self.u.shape[0]

    @property
    def identified_at(self):
        """First window length at which the true model alone survives."""
        for entry in self.timeline:
            if entry["identified"] == self.true_model:
                return entry["t"]
        return None

    @property
    def final_statuses(self):
        return self.timeline[-1]["statuses"] if self.timeline else []

    def to_dict(self):
        return {
            "seed": self.seed,
            "true_model": self.true_model,
            "u": self.u.tolist(), "x0": self.x0.tolist(), "d": self.d.tolist(),
            "w": self.w.tolist(), "v": self.v.tolist(),
            "states": self.states.tolist(), "outputs": self.outputs.tolist(),
            "timeline": self.timeline,
            "identified_at": self.identified_at,
        }

    def to_csv(self, path):
        """One row per k: time, true-model states, outputs, inputs, statuses at window [0, k]."""
        n, p, m_u = self.states.shape[1], self.outputs.shape[1], self.u.shape[1]
        names = self.model_names or [str(i) for i in range(len(self.final_statuses))]
        header = (["k"] + [f"x{j}" for j in range(n)] + [f"z{j}" for j in range(p)]
                  + [f"u{j}" for j in range(m_u)] + [f"status_{name}" for name in names] + ["identified"])
        by_t = {entry["t"]: entry for entry in self.timeline}
        with open(path, "w", newline="") as csvfile:
            writer = csv.writer(csvfile)
            writer.writerow(header)
            for k in range(self.states.shape[0]):
                inputs = self.u[k] if k < self.horizon else np.full(m_u, np.nan)
                entry = by_t.get(k)
                statuses = entry["statuses"] if entry else [""] * len(names)
                identified = entry["identified"] if entry and entry["identified"] is not None else ""
                writer.writerow([k] + [repr(float(x)) for x in self.states[k]]
                                + [repr(float(x)) for x in self.outputs[k]]
                                + [repr(float(x)) for x in inputs] + statuses + [identified])

    def write_manifest(self, path, scenario=None, design=None):
        """Run manifest; ``created_at`` is the only field that changes between identical runs."""
        manifest = {
            "seed": self.seed,
            "true_model": self.true_model,
            "identified_at": self.identified_at,
            "final_statuses": self.final_statuses,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        if scenario is not None:
            manifest["scenario"] = scenario.name
            manifest["epsilon"] = scenario.epsilon
            manifest["horizon"] = scenario.horizon
        if design is not None:
            manifest["objective"] = design.get("objective")
            manifest["deltas"] = design.get("deltas", [])
        Path(path).write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest


def _initial_set(model, scenario):
    start = scenario.x0_set
    if model.c_x:
        start = start.intersect(model.x_set.embed(model.n, 0))
    if model.c_y:
        start = start.intersect(model.y_set.embed(model.n, model.n_x))
    return start


def _sample_step(model, scenario, rng, x, u_k, k, retries):
    """Draw d(k), w(k) until x(k+1) meets both responsibility sets."""
    for _ in range(retries):
        d = model.d_set.sample(rng, retries, label=f"D at k={k}") if model.m_d else np.zeros(0)
        w = scenario.w_set.sample(rng, retries, label=f"W at k={k}")
        nxt = model.A @ x + model.B_u @ u_k + model.B_d @ d + model.Bw @ w + model.f
        if model.c_x and not model.x_set.contains(nxt[:model.n_x]):
            continue
        if model.c_y and not model.y_set.contains(nxt[model.n_x:]):
            continue
        return d, w
    raise SamplingFailed(f"responsibility sets of {model.name or 'model'} at k={k + 1}", retries)


def run_simulation(scenario, true_model, u, seed, retries=SAMPLE_RETRIES, params=None, stream=None):
    """Simulate ``true_model`` under input ``u`` and invalidate on growing windows."""
    if not 0 <= true_model < scenario.N:
        raise ScenarioError(f"true model {true_model} outside 0..{scenario.N - 1}")
    model = scenario.models[true_model]
    T = scenario.horizon
    u = np.asarray(u, dtype=float).reshape(T, model.m_u)
    for k in range(T):
        if not scenario.u_set.contains(u[k], tol=1e-9):
            raise ScenarioError(f"input at k={k} lies outside U")

    rng = np.random.Generator(np.random.PCG64(seed))
    x0 = _initial_set(model, scenario).sample(rng, retries, label="initial set")
    d = np.zeros((T, model.m_d))
    w = np.zeros((T, model.m_w))
    x = x0
    for k in range(T):
        d[k], w[k] = _sample_step(model, scenario, rng, x, u[k], k, retries)
        x = model.A @ x + model.B_u @ u[k] + model.B_d @ d[k] + model.Bw @ w[k] + model.f
    v = np.array([scenario.v_set.sample(rng, retries, label=f"V at k={k}") for k in range(T + 1)])

    states, outputs = simulate(model, x0, u, d, w, v)
    window = ObservationWindow(u, outputs)
    entries = timeline(scenario, window, params, stream)
    run = SimulationRun(seed, true_model, u, x0, d, w, v, states, outputs, entries,
                        [m.name or str(i) for i, m in enumerate(scenario.models)])
    logger.info("seed %d, true model %d: identified at t=%s", seed, true_model, run.identified_at)
    return run


def run_simulations(scenario, u, seeds, true_models=None, params=None, retries=SAMPLE_RETRIES):
    """Seeded runs for every requested true model; returns a list of SimulationRun."""
    true_models = range(scenario.N) if true_models is None else true_models
    return [run_simulation(scenario, i, u, seed, retries, params)
            for i in true_models for seed in seeds]
