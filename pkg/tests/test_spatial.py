import io
import json

import numpy as np
import pytest

from discrimination.solver import Product, ProblemBuilder, SolverParams, Status, solve_bilinear
from discrimination.solver.spatial import mccormick_rows


def _max_product(u_box=(-1.0, 2.0), lam_box=(1.0, 3.0), budget=3.0):
    # max λ·u  s.t.  λ + u ≤ budget; optimum λ = u = budget / 2
    builder = ProblemBuilder("max-product")
    u = builder.add_variables(1, lower=u_box[0], upper=u_box[1], prefix="u")
    lam = builder.add_variables(1, lower=lam_box[0], upper=lam_box[1], prefix="lam")
    corners = [a * b for a in lam_box for b in u_box]
    w = builder.add_variables(1, lower=min(corners), upper=max(corners), prefix="w")
    builder.add_row(np.concatenate([lam, u]), [1.0, 1.0], "L", budget)
    builder.add_cost(w, [-1.0])
    product = Product(w=int(w[0]), lam=int(lam[0]), u=int(u[0]),
                      lam_lower=lam_box[0], lam_upper=lam_box[1])
    return builder.build(), [product]


def test_mccormick_rows_hold_on_the_surface():
    product = Product(w=0, lam=2, u=1, lam_lower=-1.5, lam_upper=2.0)
    coefs, rhs = mccormick_rows(product, -0.5, 3.0)
    rng = np.random.default_rng(4)
    for lam, u in zip(rng.uniform(-1.5, 2.0, 200), rng.uniform(-0.5, 3.0, 200)):
        point = np.array([lam * u, u, lam])
        assert np.all(coefs @ point <= rhs + 1e-12)


def test_mccormick_rows_are_tight_at_box_corners():
    product = Product(w=0, lam=2, u=1, lam_lower=-1.0, lam_upper=2.0)
    coefs, rhs = mccormick_rows(product, 0.5, 4.0)
    for lam in (-1.0, 2.0):
        for u in (0.5, 4.0):
            slack = rhs - coefs @ np.array([lam * u, u, lam])
            assert np.sum(np.isclose(slack, 0.0, atol=1e-12)) >= 2


def test_mccormick_rows_cut_off_a_wrong_product():
    product = Product(w=0, lam=2, u=1, lam_lower=0.0, lam_upper=1.0)
    coefs, rhs = mccormick_rows(product, 0.0, 1.0)
    # at a corner the envelope pins w to λ·u
    assert np.any(coefs @ np.array([0.5, 1.0, 1.0]) > rhs + 1e-9)


def test_bilinear_maximum_is_found():
    problem, products = _max_product()
    log = io.StringIO()
    solution = solve_bilinear(problem, products, SolverParams(rel_gap=1e-5), log_stream=log)
    assert solution.status == Status.OPTIMAL
    assert solution.objective == pytest.approx(-2.25, abs=1e-3)
    u, lam, w = solution.x
    assert w == pytest.approx(lam * u, abs=1e-6)
    assert solution.best_bound <= solution.objective + 1e-9
    entries = [json.loads(line) for line in log.getvalue().splitlines()]
    assert entries[0]["decision"] == "root"
    assert any(e["status"] == "branched" for e in entries)


def test_relaxation_point_on_the_surface_ends_the_search():
    # λ fixed: the envelope is exact and the root is bilinear-feasible
    problem, products = _max_product(lam_box=(2.0, 2.0))
    solution = solve_bilinear(problem, products)
    assert solution.status == Status.OPTIMAL
    assert solution.objective == pytest.approx(-2.0)
    assert solution.nodes == 1


def test_node_limit_keeps_the_start():
    problem, products = _max_product()
    start = np.array([1.0, 1.0, 1.0])
    solution = solve_bilinear(problem, products, SolverParams(node_limit=1), starts=[start, None])
    assert solution.status == Status.NODE_LIMIT
    assert solution.incumbents[0] == {"objective": pytest.approx(-1.0), "source": "start"}
    assert solution.objective <= -1.0
    assert solution.best_bound <= -2.25 + 1e-9


def test_start_off_the_surface_is_rejected():
    problem, products = _max_product()
    solution = solve_bilinear(problem, products, SolverParams(node_limit=1),
                              starts=[np.array([1.0, 1.0, 5.0])])
    assert all(entry["source"] != "start" for entry in solution.incumbents)


def test_heuristic_candidates_are_verified():
    problem, products = _max_product()
    seen = []

    def heuristic(x):
        seen.append(x.copy())
        return np.array([1.5, 1.5, 2.25])

    solution = solve_bilinear(problem, products, SolverParams(rel_gap=1e-5), heuristic=heuristic)
    assert seen
    assert solution.status == Status.OPTIMAL
    assert solution.incumbents[0]["source"] == "heuristic"
    assert solution.objective == pytest.approx(-2.25, abs=1e-6)


def test_infeasible_bilinear_problem():
    problem, products = _max_product(u_box=(2.0, 2.0), lam_box=(1.5, 3.0))
    solution = solve_bilinear(problem, products)
    assert solution.status == Status.INFEASIBLE
    assert solution.x is None


def test_unbounded_u_is_rejected():
    problem, products = _max_product()
    problem.upper[products[0].u] = np.inf
    with pytest.raises(ValueError, match="bounded u"):
        solve_bilinear(problem, products)


def test_unbounded_multiplier_is_rejected():
    problem, products = _max_product()
    wide = Product(w=products[0].w, lam=products[0].lam, u=products[0].u,
                   lam_lower=1.0, lam_upper=np.inf)
    with pytest.raises(ValueError, match="finite λ"):
        solve_bilinear(problem, [wide])


def test_sos_problems_are_rejected():
    builder = ProblemBuilder("sos")
    x = builder.add_variables(2, lower=0.0, upper=1.0)
    builder.add_sos1(x)
    builder.add_cost(x, [1.0, 1.0])
    with pytest.raises(ValueError, match="continuous linear"):
        solve_bilinear(builder.build(), [])
