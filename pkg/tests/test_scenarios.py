import csv
import json
from dataclasses import replace

import numpy as np
import pytest

from discrimination.errors import SamplingFailed, ScenarioError
from discrimination.model import Polytope, validate_scenario
from discrimination.scenarios import (BUILTIN_SCENARIOS, IntentionParams, IntersectionParams, LaneChangeParams,
                                      build_intersection, build_lane_change, builtin_scenario, run_simulation,
                                      run_simulations)
from discrimination.schemas import ManifestDoc
from discrimination.stack import simulate


class TestIntersection:
    def test_driver_feedback_entries(self):
        scenario = build_intersection()
        inattentive, cautious, malicious = scenario.models
        assert [m.name for m in scenario.models] == ["inattentive", "cautious", "malicious"]
        assert cautious.A[3, 2] == pytest.approx(-0.45)
        assert cautious.A[3, 3] == pytest.approx(1 - 4.75 * 0.3)
        assert malicious.A[3, 0] == pytest.approx(0.3)
        np.testing.assert_array_equal(inattentive.A[3], [0.0, 0.0, 0.0, 1.0])

    def test_sets(self):
        scenario = build_intersection()
        assert scenario.epsilon == 0.25
        assert scenario.horizon == 8
        assert scenario.sampling_time == 0.3
        lower, upper = scenario.u_set.bounding_box
        assert (lower[0], upper[0]) == (-7.85, 3.97)
        lower, upper = scenario.models[0].d_set.bounding_box
        assert lower[0] == pytest.approx(-0.785)
        assert upper[0] == pytest.approx(0.397)
        assert scenario.models[1].c_y == 0

    def test_extra_malicious_velocity(self):
        scenario = build_intersection(extra_malicious_velocity=True)
        assert scenario.name == "intersection-extra"
        assert scenario.models[2].c_y == 2

    def test_horizon_override(self):
        assert build_intersection(horizon=3).horizon == 3


class TestLaneChange:
    def test_inputs_and_offsets(self):
        scenario = build_lane_change()
        inattentive, cautious, malicious = scenario.models
        assert inattentive.m_u == 2
        assert cautious.f[4] == pytest.approx(-1.5)
        assert malicious.f[4] == pytest.approx(1.2)
        assert cautious.B[4, 1] == pytest.approx(8.9 * 0.3)
        assert malicious.B[4, 1] == pytest.approx(-8.7 * 0.3)

    def test_initial_set(self):
        lower, upper = build_lane_change().x0_set.bounding_box
        assert (lower[3], upper[3]) == (7.0, 12.0)
        assert (lower[0], upper[0]) == (0.0, 0.0)

    def test_params_are_validated(self):
        with pytest.raises(ScenarioError):
            LaneChangeParams(ego_lateral=(2.0, 0.5))
        with pytest.raises(ScenarioError):
            IntentionParams(dt=0.0)
        with pytest.raises(ScenarioError):
            IntersectionParams(driver_fraction=1.5)


def test_builtin_registry():
    for name in BUILTIN_SCENARIOS:
        assert validate_scenario(builtin_scenario(name)).ok
    with pytest.raises(ScenarioError):
        builtin_scenario("roundabout")


class TestSimulation:
    def test_runs_are_reproducible(self):
        scenario = build_intersection(horizon=3)
        u = np.zeros(3)
        first = run_simulation(scenario, 1, u, seed=7)
        second = run_simulation(scenario, 1, u, seed=7)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.outputs, second.outputs)
        assert first.timeline == second.timeline
        other = run_simulation(scenario, 1, u, seed=8)
        assert not np.array_equal(first.x0, other.x0)

    @pytest.mark.parametrize("true_model", [0, 1, 2])
    def test_true_model_survives(self, true_model):
        scenario = build_intersection(horizon=3)
        run = run_simulation(scenario, true_model, np.full(3, -1.0), seed=true_model)
        assert run.final_statuses[true_model] == "Consistent"
        assert len(run.timeline) == 3

    def test_responsibility_sets_hold_along_the_run(self):
        scenario = build_intersection(horizon=4)
        model = scenario.models[0]
        run = run_simulation(scenario, 0, np.zeros(4), seed=3)
        for x in run.states:
            assert model.x_set.contains(x[:2])
            assert model.y_set.contains(x[2:])

    def test_trajectory_matches_recursion(self):
        scenario = build_lane_change(horizon=3)
        u = np.tile([0.5, -0.1], 3)
        run = run_simulation(scenario, 2, u, seed=1)
        states, outputs = simulate(scenario.models[2], run.x0, run.u, run.d, run.w, run.v)
        np.testing.assert_array_equal(states, run.states)
        np.testing.assert_array_equal(outputs, run.outputs)
        assert run.u.shape == (3, 2)
        assert run.v.shape == (4, 1)

    def test_input_outside_u_is_rejected(self):
        scenario = build_intersection(horizon=2)
        with pytest.raises(ScenarioError):
            run_simulation(scenario, 0, [10.0, 0.0], seed=0)
        with pytest.raises(ScenarioError):
            run_simulation(scenario, 3, [0.0, 0.0], seed=0)

    def test_unsatisfiable_responsibility_fails_sampling(self):
        scenario = build_intersection(horizon=8)
        trapped = replace(scenario.models[0], y_set=Polytope.from_box([15.0, 6.0], [18.0, 9.0]))
        scenario = replace(scenario, models=(trapped,) + scenario.models[1:])
        with pytest.raises(SamplingFailed) as excinfo:
            run_simulation(scenario, 0, np.zeros(8), seed=0, retries=20)
        assert excinfo.value.retries == 20

    def test_run_simulations_covers_every_model(self):
        scenario = build_intersection(horizon=2)
        runs = run_simulations(scenario, np.zeros(2), seeds=[0, 1])
        assert [(r.true_model, r.seed) for r in runs] == [(0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1)]


class TestArtifacts:
    def test_csv_layout(self, tmp_path):
        scenario = build_intersection(horizon=3)
        run = run_simulation(scenario, 0, np.zeros(3), seed=2)
        path = tmp_path / "run.csv"
        run.to_csv(path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0][:2] == ["k", "x0"]
        assert rows[0][-4:] == ["status_inattentive", "status_cautious", "status_malicious", "identified"]
        assert len(rows) == 1 + 4
        assert float(rows[2][1]) == run.states[1, 0]
        assert rows[-1][rows[0].index("u0")] == "nan"

    def test_manifest_differs_only_in_timestamp(self, tmp_path):
        scenario = build_intersection(horizon=2)
        run = run_simulation(scenario, 1, np.zeros(2), seed=5)
        design = {"objective": 0.0, "deltas": [{"pair": [0, 1], "delta": 0.3, "passed": True}]}
        first = run.write_manifest(tmp_path / "a.json", scenario, design)
        second = run.write_manifest(tmp_path / "b.json", scenario, design)
        first.pop("created_at")
        second.pop("created_at")
        assert first == second
        assert first["horizon"] == 2 and first["scenario"] == "intersection"
        ManifestDoc.model_validate(json.loads((tmp_path / "a.json").read_text()))

    def test_run_dict(self):
        run = run_simulation(build_intersection(horizon=2), 0, np.zeros(2), seed=0)
        data = json.loads(json.dumps(run.to_dict()))
        assert data["true_model"] == 0
        assert len(data["states"]) == 3
        assert data["identified_at"] == run.identified_at
