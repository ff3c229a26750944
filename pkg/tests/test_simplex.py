import numpy as np
import pytest
from scipy.optimize import linprog

from discrimination.solver import DenseSimplex, ProblemBuilder, SolverParams, Status, solve_lp


def _lp(A_ub=None, b_ub=None, A_eq=None, b_eq=None, cost=None, lower=-np.inf, upper=np.inf):
    n = len(cost)
    builder = ProblemBuilder("lp")
    x = builder.add_variables(n, lower=lower, upper=upper)
    if A_ub is not None:
        builder.add_block_rows([(x, A_ub)], "L", b_ub)
    if A_eq is not None:
        builder.add_block_rows([(x, A_eq)], "E", b_eq)
    builder.add_cost(x, cost)
    return builder.build()


def _random_lp(rng, m_ub, m_eq, n):
    x_feas = rng.uniform(0.0, 5.0, n)
    A_ub = rng.normal(size=(m_ub, n))
    b_ub = A_ub @ x_feas + rng.uniform(0.0, 2.0, m_ub)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x_feas
    cost = rng.normal(size=n)
    return A_ub, b_ub, A_eq, b_eq, cost


def test_lower_bound_row():
    # min x  s.t.  x ≥ 3
    problem = _lp(A_ub=[[-1.0]], b_ub=[-3.0], cost=[1.0])
    result = solve_lp(problem)
    assert result.status == Status.OPTIMAL
    assert result.objective == pytest.approx(3.0)
    assert result.x[0] == pytest.approx(3.0)
    assert result.duals[0] == pytest.approx(1.0)


def test_infeasible_rows_give_certificate():
    # x ≤ −1 and x ≥ 0
    problem = _lp(A_ub=[[1.0]], b_ub=[-1.0], cost=[0.0], lower=0.0)
    result = solve_lp(problem)
    assert result.status == Status.INFEASIBLE
    assert result.x is None

    problem = _lp(A_ub=[[1.0], [-1.0]], b_ub=[-1.0, 0.0], cost=[0.0])
    result = solve_lp(problem)
    assert result.status == Status.INFEASIBLE
    assert result.farkas is not None
    assert set(result.certificate_rows) <= {0, 1}
    assert result.certificate_rows


def test_unbounded_direction():
    problem = _lp(A_ub=[[1.0, -1.0]], b_ub=[1.0], cost=[-1.0, -1.0], lower=0.0)
    assert solve_lp(problem).status == Status.UNBOUNDED


def test_equality_and_free_variables():
    # min |shifted| variables through an equality: x + y = 4, x - y = 2
    problem = _lp(A_eq=[[1.0, 1.0], [1.0, -1.0]], b_eq=[4.0, 2.0], cost=[1.0, 1.0])
    result = solve_lp(problem)
    assert result.status == Status.OPTIMAL
    np.testing.assert_allclose(result.x, [3.0, 1.0], atol=1e-9)


def test_empty_row_is_decided_up_front():
    problem = _lp(A_ub=[[0.0, 0.0], [1.0, 1.0]], b_ub=[-1.0, 3.0], cost=[1.0, 1.0], lower=0.0)
    result = solve_lp(problem)
    assert result.status == Status.INFEASIBLE
    assert result.certificate_rows == [0]


def test_cost_constant_is_added():
    problem = _lp(A_ub=[[-1.0]], b_ub=[-2.0], cost=[1.0])
    problem.cost_constant = 5.0
    assert solve_lp(problem).objective == pytest.approx(7.0)


@pytest.mark.parametrize("seed", range(25))
def test_random_lps_match_linprog(seed):
    rng = np.random.default_rng(seed)
    A_ub, b_ub, A_eq, b_eq, cost = _random_lp(rng, 14, 6, 40)
    problem = _lp(A_ub, b_ub, A_eq, b_eq, cost, lower=0.0, upper=10.0)
    result = solve_lp(problem)
    oracle = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=[(0, 10)] * 40,
                     method="highs")
    assert oracle.status == 0
    assert result.status == Status.OPTIMAL
    assert result.objective == pytest.approx(oracle.fun, abs=1e-6 * (1 + abs(oracle.fun)))
    assert problem.max_violation(result.x) <= 1e-7


@pytest.mark.parametrize("seed", range(10))
def test_optimal_duals_are_complementary(seed):
    rng = np.random.default_rng(100 + seed)
    A_ub, b_ub, _, _, cost = _random_lp(rng, 20, 0, 40)
    problem = _lp(A_ub, b_ub, cost=cost, lower=0.0, upper=10.0)
    result = solve_lp(problem)
    assert result.status == Status.OPTIMAL
    slack = b_ub - A_ub @ result.x
    assert np.all(result.duals >= -1e-7)
    assert np.all(np.abs(result.duals * slack) <= 1e-6)


def test_warm_start_after_bound_change_matches_cold():
    rng = np.random.default_rng(7)
    A_ub, b_ub, _, _, cost = _random_lp(rng, 12, 0, 20)
    params = SolverParams()
    lower, upper = np.zeros(20), np.full(20, 10.0)
    kernel = DenseSimplex(A_ub, np.array(["L"] * 12), b_ub, cost, params)
    first = kernel.solve(lower, upper)
    assert first.status == Status.OPTIMAL

    basis = kernel.snapshot()
    j = int(np.argmax(first.x))
    tightened = upper.copy()
    # x_feas ≤ 5 stays feasible under the cut
    tightened[j] = max(5.0, first.x[j] - 1.0)
    warm_current = kernel.solve(lower, tightened, warm="current")
    warm_basis = kernel.solve(lower, tightened, warm=basis)
    cold = DenseSimplex(A_ub, np.array(["L"] * 12), b_ub, cost, params).solve(lower, tightened)

    assert cold.status == Status.OPTIMAL
    for result in (warm_current, warm_basis):
        assert result.status == Status.OPTIMAL
        assert result.objective == pytest.approx(cold.objective, abs=1e-8)


def test_crossed_bounds_are_infeasible():
    problem = _lp(A_ub=[[1.0]], b_ub=[1.0], cost=[1.0])
    result = solve_lp(problem, lower=np.array([2.0]), upper=np.array([1.0]))
    assert result.status == Status.INFEASIBLE


def test_dual_simplex_stops_at_cutoff():
    # min x + 2y  s.t.  x + y ≥ 1; cutting x ≤ 0.25 moves the optimum to 1.75
    kernel = DenseSimplex(np.array([[-1.0, -1.0]]), np.array(["L"]), np.array([-1.0]),
                          np.array([1.0, 2.0]))
    lower, upper = np.zeros(2), np.full(2, 10.0)
    assert kernel.solve(lower, upper).objective == pytest.approx(1.0)

    tightened = upper.copy()
    tightened[0] = 0.25
    stopped = kernel.solve(lower, tightened, warm="current", cutoff=1.2)
    assert stopped.status == Status.CUTOFF
    assert stopped.objective >= 1.2
    assert stopped.x is None

    full = kernel.solve(lower, tightened, warm="current")
    assert full.status == Status.OPTIMAL
    assert full.objective == pytest.approx(1.75)
