import io
import itertools
import json

import numpy as np
import pytest
from scipy.optimize import linprog

from discrimination.errors import UnsupportedObjectiveError
from discrimination.solver import ProblemBuilder, SolverParams, Status, solve_milp

EXACT = SolverParams(rel_gap=1e-12)


def _sos_pair_problem(lower=0.0):
    # min x + y  s.t.  x + y ≥ 1, SOS-1{x, y}
    builder = ProblemBuilder("sos-pair")
    x = builder.add_variables(2, lower=lower)
    builder.add_row(x, [-1.0, -1.0], "L", -1.0)
    builder.add_sos1(x)
    builder.add_cost(x, [1.0, 1.0])
    return builder.build()


def _split_problem():
    # relaxation optimum spreads over both SOS members
    builder = ProblemBuilder("split")
    x = builder.add_variables(2, lower=0.0, upper=1.5)
    builder.add_row(x, [1.0, 1.0], "L", 2.0)
    builder.add_sos1(x)
    builder.add_cost(x, [-1.0, -1.0])
    return builder.build()


def _knapsack(values, weights, capacity):
    builder = ProblemBuilder("knapsack")
    x = builder.add_variables(len(values), lower=0.0, upper=1.0, binary=True)
    builder.add_row(x, weights, "L", capacity)
    builder.add_cost(x, -np.asarray(values, dtype=float))
    return builder.build()


def _random_mixed(rng):
    """Binaries, two SOS-1 groups and free continuous variables; x = 0 is feasible."""
    n_bin, sos_sizes, n_free = 4, (2, 3), 2
    n = n_bin + sum(sos_sizes) + n_free
    builder = ProblemBuilder("random")
    b = builder.add_variables(n_bin, lower=0.0, upper=1.0, binary=True)
    groups = [builder.add_variables(size, lower=0.0, upper=5.0) for size in sos_sizes]
    free = builder.add_variables(n_free, lower=0.0, upper=5.0)
    for g in groups:
        builder.add_sos1(g)
    idx = np.concatenate([b] + groups + [free])
    A = rng.normal(size=(6, n))
    rhs = rng.uniform(0.5, 3.0, 6)
    builder.add_block_rows([(idx, A)], "L", rhs)
    builder.add_cost(idx, rng.normal(size=n))
    return builder.build(), b, groups


def _enumerate(problem, binaries, groups):
    best = np.inf
    choices = [list(g) for g in groups]
    for bits in itertools.product([0.0, 1.0], repeat=len(binaries)):
        for support in itertools.product(*choices):
            lower, upper = problem.lower.copy(), problem.upper.copy()
            lower[binaries] = upper[binaries] = bits
            for g, keep in zip(groups, support):
                for j in g:
                    if j != keep:
                        upper[j] = 0.0
            A = problem.A.toarray()
            res = linprog(problem.cost, A_ub=A, b_ub=problem.rhs, bounds=list(zip(lower, upper)),
                          method="highs")
            if res.status == 0:
                best = min(best, res.fun)
    return best


def test_sos_pair_optimum():
    solution = solve_milp(_sos_pair_problem())
    assert solution.status == Status.OPTIMAL
    assert solution.objective == pytest.approx(1.0)
    assert np.count_nonzero(np.abs(solution.x) > 1e-7) == 1


def test_sos_with_forced_members_is_infeasible():
    solution = solve_milp(_sos_pair_problem(lower=1.0))
    assert solution.status == Status.INFEASIBLE
    assert not solution.has_solution


def test_split_relaxation_is_branched():
    solution = solve_milp(_split_problem(), EXACT)
    assert solution.status == Status.OPTIMAL
    assert solution.objective == pytest.approx(-1.5)
    assert solution.nodes >= 3
    assert any(entry["status"] == "branched" for entry in solution.node_log)


def test_knapsack_matches_enumeration():
    values, weights, capacity = [10, 13, 7, 8, 9, 4], [5, 7, 3, 4, 5, 2], 14
    solution = solve_milp(_knapsack(values, weights, capacity), EXACT)
    best = max(sum(v for v, keep in zip(values, bits) if keep)
               for bits in itertools.product([0, 1], repeat=6)
               if sum(w for w, keep in zip(weights, bits) if keep) <= capacity)
    assert solution.status == Status.OPTIMAL
    assert -solution.objective == pytest.approx(best, abs=1e-9)
    assert np.allclose(solution.x, np.round(solution.x), atol=1e-7)


@pytest.mark.parametrize("seed", range(30))
def test_random_mixed_matches_enumeration(seed):
    problem, binaries, groups = _random_mixed(np.random.default_rng(seed))
    solution = solve_milp(problem, EXACT)
    assert solution.status == Status.OPTIMAL
    assert solution.objective == pytest.approx(_enumerate(problem, binaries, groups), abs=1e-7)
    assert problem.verify(solution.x, EXACT)
    assert solution.objective == pytest.approx(problem.objective_value(solution.x), abs=1e-9)


@pytest.mark.parametrize("branching,node_order", [("binary-first", "depth-first"),
                                                  ("sos-first", "best-bound"),
                                                  ("binary-first", "best-bound")])
def test_search_options_agree(branching, node_order):
    problem, _, _ = _random_mixed(np.random.default_rng(99))
    reference = solve_milp(problem, EXACT)
    params = SolverParams(rel_gap=1e-12, branching=branching, node_order=node_order)
    assert solve_milp(problem, params).objective == pytest.approx(reference.objective, abs=1e-9)


def test_depth_first_is_deterministic():
    problem, _, _ = _random_mixed(np.random.default_rng(5))
    params = SolverParams(rel_gap=1e-12, node_order="depth-first")
    first = solve_milp(problem, params)
    second = solve_milp(problem, params)
    assert first.nodes == second.nodes
    assert first.incumbents == second.incumbents
    np.testing.assert_array_equal(first.x, second.x)


def test_global_bound_is_monotone_and_streamed():
    problem, _, _ = _random_mixed(np.random.default_rng(11))
    stream = io.StringIO()
    solution = solve_milp(problem, EXACT, log_stream=stream)
    bounds = [entry["bound"] for entry in solution.node_log if entry["bound"] is not None]
    assert all(b2 >= b1 for b1, b2 in zip(bounds, bounds[1:]))
    lines = [json.loads(line) for line in stream.getvalue().splitlines()]
    assert lines == solution.node_log
    assert set(lines[0]) == {"node", "depth", "bound", "objective", "decision", "status"}


def test_heuristic_candidates_are_verified():
    problem = _split_problem()
    good = solve_milp(problem, EXACT, heuristic=lambda x: np.array([1.5, 0.0]))
    assert good.objective == pytest.approx(-1.5)
    assert good.incumbents[0]["source"] == "heuristic"

    bad = solve_milp(problem, EXACT, heuristic=lambda x: np.array([1.5, 1.5]))
    assert bad.objective == pytest.approx(-1.5)
    assert all(entry["source"] != "heuristic" for entry in bad.incumbents)


def test_node_limit_reports_limit_status():
    solution = solve_milp(_split_problem(), SolverParams(node_limit=1))
    assert solution.status == Status.NODE_LIMIT
    assert solution.nodes == 1
    assert solution.best_bound <= -1.5 + 1e-9


def test_quadratic_objective_is_rejected():
    problem = _sos_pair_problem()
    problem.quadratic = {0: 1.0}
    with pytest.raises(UnsupportedObjectiveError):
        solve_milp(problem)


def test_best_bound_is_the_default_order():
    assert SolverParams().node_order == "best-bound"


def test_start_candidate_becomes_first_incumbent():
    problem = _split_problem()
    solution = solve_milp(problem, EXACT, starts=[np.array([1.0, 0.0]), None])
    assert solution.incumbents[0] == {"objective": pytest.approx(-1.0), "source": "start"}
    assert solution.objective == pytest.approx(-1.5)


def test_incumbent_cuts_off_child_relaxations():
    problem, _, _ = _random_mixed(np.random.default_rng(11))
    solution = solve_milp(problem, EXACT)
    seeded = solve_milp(problem, EXACT, starts=[solution.x])
    assert seeded.status == Status.OPTIMAL
    assert seeded.objective == pytest.approx(solution.objective, abs=1e-9)
    assert seeded.incumbents[0]["source"] == "start"
    # every node after the start is either cut off or explored below the incumbent
    assert all(entry["objective"] is None or entry["status"] in ("cutoff", "pruned")
               or entry["objective"] < solution.objective + 1e-9 for entry in seeded.node_log)
