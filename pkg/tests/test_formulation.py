import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import linprog

from discrimination.errors import SuboptimalityWarning, UnsupportedObjectiveError
from discrimination.formulation import (build_conservative, build_exact, build_exact_dual, compare, complexity_report,
                                        design, dual_descent, encode_objective, multiplier_ranges,
                                        pair_elimination, solve_inner, verify_design)
from discrimination.model import AffineModel, ObjectiveSpec, Polytope, Scenario
from discrimination.scenarios import build_intersection, build_lane_change, build_numerical_example
from discrimination.schemas import DesignResultDoc
from discrimination.solver import ProblemBuilder, SolverParams, Status, solve_lp, solve_milp
from discrimination.stack import stack_pair, stack_pairs


def _toy_scenario(epsilon=0.1, g_gap=0.0, x0_box=(0.0, 1.0)):
    """Two scalar integrators whose inputs act with gains +1 and −1.

    With z = x + v, x0 ∈ [0, 1] and |v| ≤ 0.1 the separation at input u is
    max(0, |u| − 0.2, 2|u| − 1.2) over one step.
    """
    def model(gain, g, name):
        return AffineModel(A=[[1.0]], B=[[gain]], Bw=[[0.0]], C=[[1.0]], D=[[0.0]], Dv=[[1.0]],
                           f=[0.0], g=[g], n_x=1, n_y=0, m_u=1, m_d=0, name=name)

    return Scenario(
        models=(model(1.0, g_gap, "up"), model(-1.0, 0.0, "down")),
        horizon=1,
        epsilon=epsilon,
        objective=ObjectiveSpec.parse("one"),
        x0_set=Polytope.from_box([x0_box[0]], [x0_box[1]]),
        u_set=Polytope.from_box([-2.0], [2.0]),
        w_set=Polytope.from_box([0.0], [0.0]),
        v_set=Polytope.from_box([-0.1], [0.1]),
        name="toy",
    )


def _toy_separation(u):
    return max(0.0, abs(u) - 0.2, 2 * abs(u) - 1.2)


class TestInnerProblem:
    @pytest.mark.parametrize("u", [0.0, 0.1, 0.5, -0.8, 1.5, -2.0])
    def test_closed_form_separation(self, u):
        scenario = _toy_scenario()
        pair = stack_pairs(scenario)[0]
        inner = solve_inner(pair, [u])
        assert inner.delta == pytest.approx(_toy_separation(u), abs=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_linprog(self, seed):
        rng = np.random.default_rng(seed)
        scenario = build_numerical_example()
        pair = stack_pairs(scenario)[seed % 10]
        u = rng.uniform(-2.0, 2.0, scenario.horizon)
        inner = solve_inner(pair, u)

        # variables [δ, x̄]
        A_ub = np.vstack([np.hstack([-pair.delta_column.reshape(-1, 1), pair.R]),
                          np.hstack([np.zeros((pair.kappa, 1)), pair.Hxbar])])
        b_ub = np.concatenate([pair.rhs(u), pair.hxbar])
        cost = np.zeros(1 + pair.eta)
        cost[0] = 1.0
        oracle = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (1 + pair.eta), method="highs")
        assert oracle.status == 0
        assert inner.delta == pytest.approx(oracle.fun, abs=1e-7)

        # the reported x̄ attains δ and lies in the uncertainty set
        assert np.all(pair.Hxbar @ inner.xbar <= pair.hxbar + 1e-7)
        assert np.abs(pair.difference(inner.xbar, u)).max() == pytest.approx(inner.delta, abs=1e-7)

    def test_multipliers_are_a_distribution(self):
        scenario = build_numerical_example()
        inner = solve_inner(stack_pairs(scenario)[0], np.array([0.3, -0.2]))
        assert inner.mu3.sum() == pytest.approx(1.0, abs=1e-9)
        for mu in (inner.mu1, inner.mu2, inner.mu3):
            assert np.all(mu >= -1e-9)


class TestObjectiveEncoding:
    @pytest.mark.parametrize("spelling", ["one", "inf", "one+2inf", "one+delta"])
    def test_epigraph_is_tight(self, spelling):
        spec = ObjectiveSpec.parse(spelling)
        values = np.array([0.5, -1.0, 2.0, 0.25, -0.75, 1.5])
        builder = ProblemBuilder("objective")
        u = builder.add_variables(len(values), lower=values, upper=values)
        encode_objective(builder, spec, u, 3, 2)
        lp = solve_lp(builder.build())
        assert lp.status == Status.OPTIMAL
        assert lp.objective == pytest.approx(spec.evaluate(values, 2), abs=1e-9)

    def test_quadratic_objective_needs_backend(self):
        builder = ProblemBuilder("quad")
        u = builder.add_variables(2, lower=-1.0, upper=1.0)
        encode_objective(builder, ObjectiveSpec.parse("quad"), u, 2, 1)
        problem = builder.build()
        assert problem.quadratic == {0: 1.0, 1: 1.0}
        with pytest.raises(UnsupportedObjectiveError):
            solve_milp(problem)
        with pytest.raises(UnsupportedObjectiveError):
            design(_toy_scenario().with_objective(ObjectiveSpec.parse("quad")))


class TestPairElimination:
    def test_numerical_example_eliminated_pairs(self):
        scenario = build_numerical_example()
        result = pair_elimination(scenario, stack_pairs(scenario))
        assert [p.pair for p in result.eliminated] == [(0, 2), (0, 4), (1, 2), (1, 4), (2, 4), (3, 4)]
        assert [p.pair for p in result.retained] == [(0, 1), (0, 3), (1, 3), (2, 3)]
        assert result.to_dict()["eliminated"] == [list(p.pair) for p in result.eliminated]

    def test_zeroed_output_separates_at_the_first_sample(self):
        # the last model measures only noise on its second output while the
        # others measure y0 >= 1, so the gap at k = 0 is at least 0.98
        scenario = build_numerical_example()
        pairs = [p for p in stack_pairs(scenario) if p.j == 4]
        for u in ([-2.0, -2.0], [0.0, 0.0], [2.0, -2.0]):
            for pair in pairs:
                assert solve_inner(pair, u).delta >= 0.98 - 1e-7

    def test_eliminated_pairs_separate_for_any_input(self):
        scenario = build_numerical_example()
        eliminated = pair_elimination(scenario, stack_pairs(scenario), jobs=2).eliminated
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.uniform(-2.0, 2.0, scenario.horizon)
            for pair in eliminated:
                assert solve_inner(pair, u).delta >= scenario.epsilon

    def test_constant_output_gap_is_eliminated(self):
        scenario = _toy_scenario(g_gap=1.0, x0_box=(0.0, 0.0))
        result = pair_elimination(scenario, stack_pairs(scenario))
        assert [p.pair for p in result.eliminated] == [(0, 1)]

    def test_separable_pair_is_retained(self):
        scenario = _toy_scenario()
        result = pair_elimination(scenario, stack_pairs(scenario))
        assert [p.pair for p in result.retained] == [(0, 1)]


class TestVerification:
    def test_toy_inputs(self):
        scenario = _toy_scenario()
        pairs = stack_pairs(scenario)
        assert not verify_design(scenario, pairs, [0.0]).passed
        report = verify_design(scenario, pairs, [0.3])
        assert report.passed
        assert report.min_delta == pytest.approx(0.1, abs=1e-9)
        assert report.to_dict()["pairs"][0]["pair"] == [0, 1]


class TestExactFormulation:
    @pytest.mark.parametrize("spelling,expected", [("one", 0.3), ("inf", 0.3), ("one+2inf", 0.9)])
    def test_toy_optimum(self, spelling, expected):
        scenario = _toy_scenario().with_objective(ObjectiveSpec.parse(spelling))
        result = design(scenario, "exact")
        assert result.status == "Optimal"
        assert result.objective == pytest.approx(expected, abs=1e-6)
        assert abs(result.u[0]) == pytest.approx(0.3, abs=1e-6)
        assert result.verified
        DesignResultDoc(**result.to_dict())

    def test_structure(self):
        scenario = _toy_scenario()
        pairs = stack_pairs(scenario)
        assembly = build_exact(scenario, pairs)
        pair = pairs[0]
        assert len(assembly.problem.sos1) == pair.kappa + pair.xi + pair.rho
        assert assembly.problem.num_binaries == 0
        assert assembly.problem.lower[assembly.pairs[0].delta[0]] == scenario.epsilon

    def test_kkt_point_is_feasible(self):
        scenario = _toy_scenario()
        assembly = build_exact(scenario, stack_pairs(scenario))
        point = assembly.kkt_point(np.array([0.5]))
        assert point is not None
        assert assembly.problem.max_violation(point) <= 1e-7
        assert assembly.kkt_point(np.array([0.0])) is None

    def test_needs_pairs(self):
        with pytest.raises(ValueError):
            build_exact(_toy_scenario(), [])

    def test_all_pairs_eliminated_reduces_to_objective(self):
        result = design(_toy_scenario(g_gap=1.0, x0_box=(0.0, 0.0)), "exact")
        assert result.objective == pytest.approx(0.0, abs=1e-9)
        assert result.retained == []
        assert result.deltas[0]["eliminated"] is True

    @pytest.mark.slow
    @pytest.mark.parametrize("spelling", ["one", "inf"])
    def test_numerical_example(self, spelling):
        scenario = build_numerical_example().with_objective(ObjectiveSpec.parse(spelling))
        result = design(scenario, "exact")
        assert result.objective == pytest.approx(0.074, rel=1e-2)
        assert result.verified

    @pytest.mark.slow
    def test_elimination_does_not_change_the_optimum(self):
        scenario = build_numerical_example().with_objective(ObjectiveSpec.parse("inf"))
        with_elim = design(scenario, "exact")
        without = design(scenario, "exact", eliminate=False)
        assert with_elim.objective == pytest.approx(without.objective, abs=1e-6)


class TestConservativeFormulation:
    def test_toy_optimum_is_conservative(self):
        scenario = _toy_scenario()
        result = design(scenario, "conservative")
        assert result.objective == pytest.approx(0.65, abs=1e-6)
        assert result.verified
        assert result.warnings == []
        block = compare(design(scenario, "exact"), result)
        assert block["gap"] == pytest.approx(0.35, abs=1e-6)

    def test_explicit_and_support_forms_agree(self):
        scenario = _toy_scenario()
        support = build_conservative(scenario, form="support")
        explicit = build_conservative(scenario, form="explicit")
        a = solve_milp(support.problem)
        b = solve_milp(explicit.problem)
        assert a.objective == pytest.approx(b.objective, abs=1e-6)

    def test_binaries_per_pair(self):
        scenario = build_numerical_example()
        assembly = build_conservative(scenario)
        T, p = scenario.horizon, 2
        assert assembly.problem.num_binaries == len(scenario.pairs) * 2 * (T + 1) * p
        assert len(assembly.row_index) == assembly.problem.num_binaries

    @pytest.mark.parametrize("spelling,expected", [("one", 1.359), ("inf", 0.975)])
    def test_numerical_example(self, spelling, expected):
        scenario = build_numerical_example().with_objective(ObjectiveSpec.parse(spelling))
        result = design(scenario, "conservative")
        assert result.objective == pytest.approx(expected, rel=1e-2)
        assert result.verified

    def test_input_coupling_warns(self):
        with pytest.warns(SuboptimalityWarning):
            build_conservative(build_intersection(extra_malicious_velocity=True, horizon=2))

    def test_no_warning_without_coupling(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error", SuboptimalityWarning)
            build_conservative(build_intersection(horizon=2))

    def test_bad_form(self):
        with pytest.raises(ValueError):
            build_conservative(_toy_scenario(), form="implicit")


def test_complexity_counts_match_built_problems():
    scenario = build_numerical_example()
    report = complexity_report(scenario)
    pair = stack_pair(scenario.models[0], scenario.models[1], scenario)
    exact = report["exact"]["measured"]
    assert exact["sos1_count"] == 10 * (pair.kappa + pair.xi + pair.rho)
    assert exact["binary_count"] == 0
    assert exact["slack_count"] == exact["sos1_count"]
    cons = report["conservative"]
    assert cons["measured"]["binary_count"] == cons["closed_form"]["binary_count"] == 120
    assert cons["measured"]["sos1_count"] == cons["closed_form"]["sos1_count"] == 120
    assert report["inputs"]["I"] == 10
    assert cons["closed_form"]["continuous_count"] == 6522
    assert cons["measured"]["pi_count"] > 0


def _two_output_toy():
    """The toy with a second output whose noise is unbounded."""
    def model(gain, name):
        return AffineModel(A=[[1.0]], B=[[gain]], Bw=[[0.0]], C=[[1.0], [1.0]], D=[[0.0], [0.0]],
                           Dv=np.eye(2), f=[0.0], g=[0.0, 0.0], n_x=1, n_y=0, m_u=1, m_d=0, name=name)

    base = _toy_scenario()
    return replace(base, models=(model(1.0, "up"), model(-1.0, "down")),
                   v_set=Polytope.from_box([-0.1, -np.inf], [0.1, np.inf]), name="toy-two-outputs")


def _horizon_two_toy():
    return _toy_scenario().with_horizon(2).with_objective(ObjectiveSpec.parse("inf"))


class TestUnboundedNoise:
    @pytest.mark.parametrize("form", ["support", "explicit"])
    def test_unbounded_output_is_dropped_from_the_conservative_design(self, form):
        result = design(_two_output_toy(), "conservative", conservative_form=form)
        assert result.status == "Optimal"
        assert result.objective == pytest.approx(0.65, abs=1e-6)
        assert result.verified

    def test_exact_design_ignores_the_unbounded_output(self):
        result = design(_two_output_toy(), "exact")
        assert result.objective == pytest.approx(0.3, abs=1e-6)


class TestDualSearch:
    def test_multiplier_ranges_are_finite(self):
        pair = stack_pairs(_toy_scenario())[0]
        lower, upper = multiplier_ranges(pair)
        assert np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))
        assert np.all(lower <= upper)

    @pytest.mark.parametrize("u0,expected", [(0.5, 0.3), (-0.5, -0.3), (1.9, 0.3)])
    def test_descent_moves_to_the_separation_threshold(self, u0, expected):
        scenario = _toy_scenario()
        pairs = stack_pairs(scenario)
        cert = dual_descent(scenario, pairs, [u0])
        assert cert is not None
        assert cert.u[0] == pytest.approx(expected, abs=1e-7)
        assert cert.objective == pytest.approx(abs(expected), abs=1e-7)
        assert verify_design(scenario, pairs, cert.u, tol=1e-7).passed

    def test_descent_needs_a_linear_objective(self):
        scenario = _toy_scenario().with_objective(ObjectiveSpec.parse("quad"))
        assert dual_descent(scenario, stack_pairs(scenario), [0.5]) is None

    def test_certificate_is_a_feasible_point(self):
        scenario = _toy_scenario()
        pairs = stack_pairs(scenario)
        dual = build_exact_dual(scenario, pairs)
        assert dual is not None
        assert len(dual.products) == len(pairs) * scenario.horizon
        x = dual.point(dual_descent(scenario, pairs, [0.5]))
        assert dual.problem.max_violation(x) <= 1e-7
        for product in dual.products:
            assert x[product.w] == pytest.approx(x[product.lam] * x[product.u], abs=1e-9)

    def test_dual_and_kkt_methods_agree(self):
        scenario = _toy_scenario()
        dual = design(scenario, "exact")
        kkt = design(scenario, "exact", exact_method="kkt")
        assert dual.stats["method"] == "dual"
        assert kkt.stats["method"] == "kkt"
        assert dual.objective == pytest.approx(kkt.objective, abs=1e-6)
        assert dual.objective == pytest.approx(0.3, abs=1e-6)

    def test_start_input_is_accepted(self):
        result = design(_toy_scenario(), "exact", start=[0.65], exact_method="kkt")
        assert result.objective == pytest.approx(0.3, abs=1e-6)
        assert result.verified

    def test_unknown_exact_method(self):
        with pytest.raises(ValueError):
            design(_toy_scenario(), "exact", exact_method="mccormick")

    def test_strong_duality_at_the_optimum(self):
        scenario = _toy_scenario()
        pairs = stack_pairs(scenario)
        assembly = build_exact(scenario, pairs)
        solution = solve_milp(assembly.problem, SolverParams(rel_gap=1e-9))
        x = solution.x
        u = x[assembly.u]
        for handles, pair in zip(assembly.pairs, assembly.pair_data):
            mu23 = np.concatenate([x[handles.mu2], x[handles.mu3]])
            dual_value = mu23 @ (pair.S @ u - pair.r) - x[handles.mu1] @ pair.hxbar
            assert x[handles.delta[0]] == pytest.approx(dual_value, abs=1e-6)
            assert x[handles.delta[0]] == pytest.approx(solve_inner(pair, u).delta, abs=1e-6)

    def test_horizon_two_optimum(self):
        # separation needs a 0.3 spread of the partial input sums
        result = design(_horizon_two_toy(), "exact", params=SolverParams(rel_gap=1e-4))
        assert result.objective == pytest.approx(0.15, abs=1e-4)
        assert result.verified

    @pytest.mark.slow
    def test_matches_grid_search(self):
        scenario = _horizon_two_toy()
        pairs = stack_pairs(scenario)
        grid = np.round(np.arange(-30, 31) * 0.01, 2)
        best = np.inf
        for u0 in grid:
            for u1 in grid:
                u = np.array([u0, u1])
                if all(solve_inner(pair, u).delta >= scenario.epsilon - 1e-9 for pair in pairs):
                    best = min(best, float(np.abs(u).max()))
        exact = design(scenario, "exact", params=SolverParams(rel_gap=1e-4))
        assert exact.objective <= best + 1e-4
        assert best <= exact.objective + 0.01 + 1e-9

    @pytest.mark.slow
    def test_conservative_is_never_better(self):
        scenario = build_numerical_example()
        exact = design(scenario, "exact")
        conservative = design(scenario, "conservative")
        assert exact.objective <= conservative.objective + 1e-6


class TestDrivingScenarios:
    @pytest.mark.slow
    @pytest.mark.parametrize("builder", [build_intersection, build_lane_change])
    def test_exact_improves_on_the_conservative_start(self, builder):
        scenario = builder()
        conservative = design(scenario, "conservative")
        assert conservative.verified
        exact = design(scenario, "exact", params=SolverParams(node_limit=50), start=conservative.u)
        assert exact.u is not None
        assert exact.verified
        assert exact.objective <= conservative.objective + 1e-6
        for result in (exact, conservative):
            assert min(entry["delta"] for entry in result.deltas) >= scenario.epsilon - 1e-6

    @pytest.mark.slow
    def test_exact_design_solves_where_the_conservative_one_warns(self):
        scenario = build_intersection(extra_malicious_velocity=True)
        with pytest.warns(SuboptimalityWarning):
            conservative = design(scenario, "conservative")
        assert conservative.warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error", SuboptimalityWarning)
            exact = design(scenario, "exact", params=SolverParams(node_limit=50), start=conservative.u)
        assert exact.verified
        assert exact.objective <= conservative.objective + 1e-6
