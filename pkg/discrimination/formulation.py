"""Design problems: the inner separation LP, the exact (KKT + SOS-1) and
conservative (robust dual) MILPs, pair elimination, objective epigraphs,
complexity accounting and the end-to-end ``design`` pipeline."""
import itertools
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InnerProblemInfeasible, SuboptimalityWarning, UnsupportedObjectiveError
from .model import ObjectiveKind
from .solver.backend import external_backend_solve
from .solver.branch_and_bound import solve_milp
from .solver.problem import INF, ProblemBuilder, SolverParams, Status
from .solver.simplex import DenseSimplex, solve_lp
from .solver.spatial import Product, solve_bilinear
from .stack import stack_all, stack_pairs

logger = logging.getLogger(__name__)

VERIFY_TOL = 1e-6
WARNING_TOL = 1e-12
FORMULATIONS = ("exact", "conservative")
CONSERVATIVE_FORMS = ("support", "explicit")
EXACT_METHODS = ("auto", "kkt")
DESCENT_ROUNDS = 4
DESCENT_EVERY = 5


def strict_tolerance(epsilon):
    return 1e-6 * max(1.0, epsilon)


def _map(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _input_variables(builder, scenario):
    """u_T with the box implied by U as bounds and Q̄_u u ≤ q̄_u as rows."""
    U = scenario.input_box
    lower, upper = U.bounding_box
    u = builder.add_variables(U.dim, lower=lower, upper=upper, prefix="u")
    if U.rows:
        builder.add_block_rows([(u, U.H)], "L", U.h, prefix="input")
    return u


# ----------------------------------------------------------------------
# inner problem


@dataclass
class InnerSolution:
    pair: tuple
    delta: float
    xbar: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    mu3: np.ndarray


def build_inner(pair, u):
    """min δ  s.t.  R x̄ − [0; 1] δ ≤ r − S u,  H_x̄ x̄ ≤ h_x̄."""
    builder = ProblemBuilder(f"inner-{pair.i}-{pair.j}")
    delta = builder.add_variables(1, prefix="delta")
    xbar = builder.add_variables(pair.eta, prefix="xbar")
    builder.add_block_rows([(xbar, pair.R), (delta, -pair.delta_column.reshape(-1, 1))],
                           "L", pair.rhs(u), prefix="sep")
    builder.add_block_rows([(xbar, pair.Hxbar)], "L", pair.hxbar, prefix="unc")
    builder.add_cost(delta, [1.0])
    return builder.build(), delta, xbar


def solve_inner(pair, u, params=None):
    """δ*(u) of one pair together with the optimal x̄ and the row multipliers."""
    problem, delta, xbar = build_inner(pair, u)
    lp = solve_lp(problem, params)
    if lp.status == Status.INFEASIBLE:
        raise InnerProblemInfeasible(pair.pair)
    if lp.status != Status.OPTIMAL:
        raise InnerProblemInfeasible(pair.pair, f"inner LP of pair {pair.pair} ended with {lp.status.value}")
    sep = pair.xi + pair.rho
    return InnerSolution(
        pair=pair.pair,
        delta=float(lp.x[delta[0]]),
        xbar=lp.x[xbar],
        mu1=lp.duals[sep:],
        mu2=lp.duals[:pair.xi],
        mu3=lp.duals[pair.xi:sep],
    )


# ----------------------------------------------------------------------
# objective epigraphs


@dataclass
class ObjectiveEncoding:
    kind: ObjectiveKind
    u: np.ndarray
    m_u: int
    one: Optional[np.ndarray] = None
    inf: Optional[np.ndarray] = None
    delta: Optional[np.ndarray] = None

    @property
    def variables(self):
        parts = [p for p in (self.one, self.inf, self.delta) if p is not None]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=int)

    def complete(self, u):
        """Tight epigraph values for a given input, as {variable index: value}."""
        values = {}
        u = np.asarray(u, dtype=float)
        if self.one is not None:
            values.update(zip(self.one.tolist(), np.abs(u).tolist()))
        if self.inf is not None:
            values[int(self.inf[0])] = float(np.abs(u).max(initial=0.0))
        if self.delta is not None:
            steps = u.reshape(-1, self.m_u)
            values[int(self.delta[0])] = float(np.abs(np.diff(steps, axis=0)).max(initial=0.0))
        return values


def encode_objective(builder, spec, u, T, m_u):
    """Add epigraph variables and rows for ``spec`` and set the linear cost."""
    enc = ObjectiveEncoding(kind=spec.kind, u=u, m_u=m_u)
    n = len(u)
    eye = np.eye(n)
    if spec.kind == ObjectiveKind.EXTERNAL_QUADRATIC:
        builder.quadratic = {int(j): 1.0 for j in u}
        builder.tags["objective"] = "quad"
        return enc

    if spec.kind == ObjectiveKind.ONE_NORM:
        w_one, w_inf, w_delta = 1.0, 0.0, 0.0
    elif spec.kind == ObjectiveKind.INF_NORM:
        w_one, w_inf, w_delta = 0.0, 1.0, 0.0
    elif spec.kind == ObjectiveKind.WEIGHTED_SUM:
        w_one, w_inf, w_delta = spec.w1, spec.w2, 0.0
    else:
        w_one, w_inf, w_delta = spec.w1, 0.0, spec.w2

    if w_one > 0:
        t = builder.add_variables(n, lower=0.0, prefix="t_one")
        builder.add_block_rows([(u, eye), (t, -eye)], "L", np.zeros(n), prefix="one_pos")
        builder.add_block_rows([(u, -eye), (t, -eye)], "L", np.zeros(n), prefix="one_neg")
        builder.add_cost(t, w_one)
        enc.one = t
    if w_inf > 0:
        t = builder.add_variables(1, lower=0.0, prefix="t_inf")
        col = -np.ones((n, 1))
        builder.add_block_rows([(u, eye), (t, col)], "L", np.zeros(n), prefix="inf_pos")
        builder.add_block_rows([(u, -eye), (t, col)], "L", np.zeros(n), prefix="inf_neg")
        builder.add_cost(t, w_inf)
        enc.inf = t
    if w_delta > 0:
        t = builder.add_variables(1, lower=0.0, prefix="t_delta")
        if T > 1:
            diff = np.zeros(((T - 1) * m_u, n))
            for k in range(1, T):
                for c in range(m_u):
                    diff[(k - 1) * m_u + c, k * m_u + c] = 1.0
                    diff[(k - 1) * m_u + c, (k - 1) * m_u + c] = -1.0
            col = -np.ones((diff.shape[0], 1))
            zeros = np.zeros(diff.shape[0])
            builder.add_block_rows([(u, diff), (t, col)], "L", zeros, prefix="delta_pos")
            builder.add_block_rows([(u, -diff), (t, col)], "L", zeros, prefix="delta_neg")
        builder.add_cost(t, w_delta)
        enc.delta = t
    builder.tags["objective"] = spec.label
    return enc


# ----------------------------------------------------------------------
# exact formulation


@dataclass
class PairVariables:
    pair: tuple
    delta: np.ndarray
    xbar: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray
    mu3: np.ndarray
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray


@dataclass
class ExactAssembly:
    problem: object
    u: np.ndarray
    pairs: list
    pair_data: list
    objective: ObjectiveEncoding
    scenario: object = None

    def heuristic(self, params=None, every=DESCENT_EVERY):
        """Primal heuristic: solve every inner LP at the node's u and, when
        each pair separates, assemble the complete KKT point.  Every
        ``every``-th call first moves u with :func:`dual_descent`."""
        params = params or SolverParams()
        cache = {}
        calls = itertools.count()

        def candidate(x):
            u = np.asarray(x[self.u], dtype=float)
            if self.scenario is not None and next(calls) % every == 0:
                cert = dual_descent(self.scenario, self.pair_data, u, params)
                if cert is not None:
                    u = cert.u
            key = tuple(np.round(u, 12))
            if key in cache:
                return cache[key]
            cache[key] = point = self.kkt_point(u, params)
            return point

        return candidate

    def kkt_point(self, u, params=None):
        params = params or SolverParams()
        x = np.zeros(self.problem.num_vars)
        x[self.u] = u
        for j, value in self.objective.complete(u).items():
            x[j] = value
        for vars_, pair in zip(self.pairs, self.pair_data):
            try:
                inner = solve_inner(pair, u, params)
            except InnerProblemInfeasible:
                return None
            if inner.delta < pair.epsilon - params.feas_tol:
                return None
            delta = max(inner.delta, pair.epsilon)
            x[vars_.delta] = delta
            x[vars_.xbar] = inner.xbar
            x[vars_.s1] = np.maximum(pair.hxbar - pair.Hxbar @ inner.xbar, 0.0)
            s23 = np.maximum(pair.rhs(u) - pair.R @ inner.xbar + pair.delta_column * delta, 0.0)
            x[vars_.s2] = s23[:pair.xi]
            x[vars_.s3] = s23[pair.xi:]
            x[vars_.mu1] = np.maximum(inner.mu1, 0.0)
            x[vars_.mu2] = np.maximum(inner.mu2, 0.0)
            x[vars_.mu3] = np.maximum(inner.mu3, 0.0)
        return x


def _stationarity_rows(builder, pair, mu1, mu2, mu3, tag):
    """Dual feasibility of the inner LP: stationarity in x̄ and δ."""
    builder.add_block_rows([(mu1, pair.Hxbar.T), (mu2, pair.R[:pair.xi].T),
                            (mu3, pair.R[pair.xi:].T)],
                           "E", np.zeros(pair.eta), prefix=f"{tag}_stat")
    builder.add_block_rows([(mu3, np.ones((1, pair.rho)))], "E", [1.0], prefix=f"{tag}_dualsum")


def build_exact(scenario, pairs):
    """Single-level MILP: outer objective, δ ≥ ε per pair and the inner LPs'
    KKT systems with complementarity as SOS-1 groups {μ_k, slack_k}."""
    if not pairs:
        raise ValueError("the exact formulation needs at least one retained pair")
    builder = ProblemBuilder(f"exact-{scenario.name}")
    u = _input_variables(builder, scenario)
    objective = encode_objective(builder, scenario.objective, u, scenario.horizon,
                                 scenario.models[0].m_u)
    handles = []
    for pair in pairs:
        tag = f"p{pair.i}{pair.j}"
        delta = builder.add_variables(1, lower=pair.epsilon, prefix=f"{tag}_delta")
        xbar = builder.add_variables(pair.eta, prefix=f"{tag}_xbar")
        mu1 = builder.add_variables(pair.kappa, lower=0.0, prefix=f"{tag}_mu1")
        mu2 = builder.add_variables(pair.xi, lower=0.0, prefix=f"{tag}_mu2")
        mu3 = builder.add_variables(pair.rho, lower=0.0, prefix=f"{tag}_mu3")
        s1 = builder.add_variables(pair.kappa, lower=0.0, prefix=f"{tag}_s1")
        s2 = builder.add_variables(pair.xi, lower=0.0, prefix=f"{tag}_s2")
        s3 = builder.add_variables(pair.rho, lower=0.0, prefix=f"{tag}_s3")
        s23 = np.concatenate([s2, s3])

        # primal feasibility with explicit slacks
        builder.add_block_rows([(xbar, pair.Hxbar), (s1, np.eye(pair.kappa))],
                               "E", pair.hxbar, prefix=f"{tag}_unc")
        builder.add_block_rows([(xbar, pair.R), (delta, -pair.delta_column.reshape(-1, 1)),
                                (u, pair.S), (s23, np.eye(pair.xi + pair.rho))],
                               "E", pair.r, prefix=f"{tag}_sep")
        _stationarity_rows(builder, pair, mu1, mu2, mu3, tag)
        for mu, s in ((mu1, s1), (mu2, s2), (mu3, s3)):
            for a, b in zip(mu, s):
                builder.add_sos1([a, b])
        handles.append(PairVariables(pair.pair, delta, xbar, mu1, mu2, mu3, s1, s2, s3))
    builder.tags["formulation"] = "exact"
    problem = builder.build()
    logger.info("exact MILP: %d variables, %d rows, %d SOS-1 groups",
                problem.num_vars, problem.num_rows, len(problem.sos1))
    return ExactAssembly(problem, u, handles, list(pairs), objective, scenario)


# ----------------------------------------------------------------------
# dual certificates and the spatial search


def _responsibility_rows(builder, pair, u, tag):
    """Primal feasibility of the responsibility rows: some x̄ in the
    uncertainty set meets them at the input ``u``."""
    xbar = builder.add_variables(pair.eta, prefix=f"{tag}_xbar")
    xi = pair.xi
    builder.add_block_rows([(xbar, pair.R[:xi]), (u, pair.S[:xi])], "L", pair.r[:xi],
                           prefix=f"{tag}_resp")
    builder.add_block_rows([(xbar, pair.Hxbar)], "L", pair.hxbar, prefix=f"{tag}_unc")
    return xbar


@dataclass
class Certificate:
    """An input with one inner multiplier set per pair proving δ ≥ ε."""

    u: np.ndarray
    objective: float
    duals: list
    xbars: list


def _certified_input_lp(scenario, pairs, duals):
    # g(u) = (Sᵀμ₂₃)ᵀu − μ₂₃ᵀr − μ₁ᵀh bounds δ*(u) from below for fixed μ
    builder = ProblemBuilder(f"certified-{scenario.name}")
    u = _input_variables(builder, scenario)
    encode_objective(builder, scenario.objective, u, scenario.horizon, scenario.models[0].m_u)
    xbars = []
    for pair, inner in zip(pairs, duals):
        tag = f"p{pair.i}{pair.j}"
        mu23 = np.concatenate([inner.mu2, inner.mu3])
        lam = pair.S.T @ mu23
        const = float(mu23 @ pair.r + inner.mu1 @ pair.hxbar)
        builder.add_block_rows([(u, -lam.reshape(1, -1))], "L", [-(pair.epsilon + const)],
                               prefix=f"{tag}_cert")
        xbars.append(_responsibility_rows(builder, pair, u, tag) if pair.xi else None)
    return builder.build(), u, xbars


def dual_descent(scenario, pairs, u, params=None, rounds=DESCENT_ROUNDS):
    """Local improvement of an input through fixed inner multipliers.

    Each round takes the optimal multipliers of every inner LP at the
    current input and minimises J over the inputs they certify (weak
    duality keeps every such input separating).  Returns the last
    improving :class:`Certificate`, or ``None`` when the first round fails.
    """
    if scenario.objective.kind == ObjectiveKind.EXTERNAL_QUADRATIC or not pairs:
        return None
    params = params or SolverParams()
    u = np.asarray(u, dtype=float)
    best = None
    for _ in range(rounds):
        try:
            duals = [solve_inner(pair, u, params) for pair in pairs]
        except InnerProblemInfeasible:
            break
        problem, u_idx, xbar_idx = _certified_input_lp(scenario, pairs, duals)
        lp = solve_lp(problem, params)
        if lp.status != Status.OPTIMAL:
            break
        if best is not None and lp.objective >= best.objective - params.opt_tol:
            break
        best = Certificate(u=lp.x[u_idx].copy(), objective=lp.objective, duals=duals,
                           xbars=[None if idx is None else lp.x[idx].copy() for idx in xbar_idx])
        u = best.u
    return best


def multiplier_ranges(pair, params=None):
    """Bounds of λ = Sᵀμ₂₃ over the dual feasible set of the inner LP.

    Returns ``(lower, upper)`` or ``None`` when some entry is unbounded.
    """
    builder = ProblemBuilder(f"dual-{pair.i}-{pair.j}")
    mu1 = builder.add_variables(pair.kappa, lower=0.0, prefix="mu1")
    mu2 = builder.add_variables(pair.xi, lower=0.0, prefix="mu2")
    mu3 = builder.add_variables(pair.rho, lower=0.0, prefix="mu3")
    _stationarity_rows(builder, pair, mu1, mu2, mu3, "dual")
    problem = builder.build()
    A = problem.A.toarray()
    mu23 = np.concatenate([mu2, mu3])
    n_u = pair.S.shape[1]
    lower, upper = np.empty(n_u), np.empty(n_u)
    for k in range(n_u):
        for sign, out in ((1.0, lower), (-1.0, upper)):
            cost = np.zeros(problem.num_vars)
            cost[mu23] = sign * pair.S[:, k]
            lp = DenseSimplex(A, problem.senses, problem.rhs, cost, params).solve(
                problem.lower, problem.upper)
            if lp.status != Status.OPTIMAL:
                logger.debug("λ[%d] of pair %s is %s", k, pair.pair, lp.status.value)
                return None
            out[k] = sign * lp.objective
    return lower, upper


@dataclass
class DualPairVariables:
    pair: tuple
    mu1: np.ndarray
    mu2: np.ndarray
    mu3: np.ndarray
    lam: np.ndarray
    w: np.ndarray
    xbar: Optional[np.ndarray] = None


@dataclass
class DualAssembly:
    problem: object
    u: np.ndarray
    pairs: list
    pair_data: list
    objective: ObjectiveEncoding
    products: list
    scenario: object

    def point(self, certificate):
        """Full vector of the dual problem for a certified input."""
        x = np.zeros(self.problem.num_vars)
        u = certificate.u
        x[self.u] = u
        for j, value in self.objective.complete(u).items():
            x[j] = value
        lower, upper = self.problem.lower, self.problem.upper
        for vars_, pair, inner, xbar in zip(self.pairs, self.pair_data,
                                            certificate.duals, certificate.xbars):
            mu1, mu2, mu3 = (np.maximum(m, 0.0) for m in (inner.mu1, inner.mu2, inner.mu3))
            x[vars_.mu1], x[vars_.mu2], x[vars_.mu3] = mu1, mu2, mu3
            lam = np.clip(pair.S.T @ np.concatenate([mu2, mu3]), lower[vars_.lam], upper[vars_.lam])
            x[vars_.lam] = lam
            x[vars_.w] = lam * u
            if vars_.xbar is not None:
                x[vars_.xbar] = xbar
        return x

    def heuristic(self, params=None, every=DESCENT_EVERY):
        params = params or SolverParams()
        calls = itertools.count()

        def candidate(x):
            if next(calls) % every:
                return None
            cert = dual_descent(self.scenario, self.pair_data, x[self.u], params)
            return None if cert is None else self.point(cert)

        return candidate


def build_exact_dual(scenario, pairs, params=None):
    """Exact design with every inner LP replaced by its dual.

    Per pair: multipliers on the dual feasible set, λ = Sᵀμ₂₃, w = λ·u
    (left to the spatial search) and Σw − μ₂₃ᵀr − μ₁ᵀh ≥ ε.  Pairs with
    responsibility rows also keep a primal x̄ meeting them.  Returns
    ``None`` when a λ or an input is unbounded.
    """
    if not pairs:
        raise ValueError("the exact formulation needs at least one retained pair")
    u_lower, u_upper = scenario.input_box.bounding_box
    if not (np.all(np.isfinite(u_lower)) and np.all(np.isfinite(u_upper))):
        return None
    ranges = []
    for pair in pairs:
        bounds = multiplier_ranges(pair, params)
        if bounds is None:
            logger.info("pair %s has unbounded multipliers; no dual search", pair.pair)
            return None
        ranges.append(bounds)

    builder = ProblemBuilder(f"exact-dual-{scenario.name}")
    u = _input_variables(builder, scenario)
    objective = encode_objective(builder, scenario.objective, u, scenario.horizon,
                                 scenario.models[0].m_u)
    n_u = len(u)
    handles, products = [], []
    for pair, (lo, hi) in zip(pairs, ranges):
        tag = f"p{pair.i}{pair.j}"
        mu1 = builder.add_variables(pair.kappa, lower=0.0, prefix=f"{tag}_mu1")
        mu2 = builder.add_variables(pair.xi, lower=0.0, prefix=f"{tag}_mu2")
        mu3 = builder.add_variables(pair.rho, lower=0.0, prefix=f"{tag}_mu3")
        _stationarity_rows(builder, pair, mu1, mu2, mu3, tag)
        mu23 = np.concatenate([mu2, mu3])
        corners = np.stack([lo * u_lower, lo * u_upper, hi * u_lower, hi * u_upper])
        lam = builder.add_variables(n_u, lower=lo, upper=hi, prefix=f"{tag}_lam")
        w = builder.add_variables(n_u, lower=corners.min(axis=0), upper=corners.max(axis=0),
                                  prefix=f"{tag}_w")
        builder.add_block_rows([(lam, np.eye(n_u)), (mu23, -pair.S.T)], "E", np.zeros(n_u),
                               prefix=f"{tag}_lam")
        builder.add_block_rows([(w, -np.ones((1, n_u))), (mu23, pair.r.reshape(1, -1)),
                                (mu1, pair.hxbar.reshape(1, -1))], "L", [-pair.epsilon],
                               prefix=f"{tag}_gap")
        xbar = _responsibility_rows(builder, pair, u, tag) if pair.xi else None
        handles.append(DualPairVariables(pair.pair, mu1, mu2, mu3, lam, w, xbar))
        products.extend(Product(int(w[k]), int(lam[k]), int(u[k]), float(lo[k]), float(hi[k]))
                        for k in range(n_u))
    builder.tags["formulation"] = "exact-dual"
    problem = builder.build()
    logger.info("exact dual problem: %d variables, %d rows, %d products",
                problem.num_vars, problem.num_rows, len(products))
    return DualAssembly(problem, u, handles, list(pairs), objective, products, scenario)


# ----------------------------------------------------------------------
# conservative formulation


@dataclass
class ConservativeAssembly:
    problem: object
    u: np.ndarray
    s: np.ndarray
    a: np.ndarray
    row_index: list
    form: str
    objective: ObjectiveEncoding
    support: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None
    warning: Optional[str] = None


def _support_values(stacked, rows):
    """max_x̄ row·x̄ over Φ x̄ ≤ φ for each given row (±inf when unbounded/empty)."""
    Phi, phi = stacked.Phi, stacked.phi
    values = np.empty(len(rows))
    lower = np.full(Phi.shape[1], -INF)
    upper = np.full(Phi.shape[1], INF)
    for q, row in enumerate(rows):
        kernel = DenseSimplex(Phi, np.full(Phi.shape[0], "L"), phi, -row)
        lp = kernel.solve(lower, upper)
        if lp.status == Status.OPTIMAL:
            values[q] = -lp.objective
        elif lp.status == Status.UNBOUNDED:
            values[q] = INF
        else:
            values[q] = -INF
    return values


def build_conservative(scenario, stacked=None, form="support"):
    """Robust MILP in which each pair commits to one separating (k, l, sign).

    ``support`` replaces every dual column of Π by the optimal value of its
    support LP (Φ and φ are constant); ``explicit`` keeps Π as variables
    with ΠᵀΦ = R and Πᵀφ ≤ r(u, s).
    """
    if form not in CONSERVATIVE_FORMS:
        raise ValueError(f"form must be one of {CONSERVATIVE_FORMS}")
    stacked = stacked or stack_all(scenario)
    warning = None
    coupling = stacked.y_input_coupling
    if coupling > WARNING_TOL:
        warning = (f"P̄_y Γ_yu ≠ 0 (max |entry| {coupling:.3g}); the conservative design "
                   "may be sub-optimal")
        warnings.warn(warning, SuboptimalityWarning, stacklevel=2)

    eps = scenario.epsilon
    builder = ProblemBuilder(f"conservative-{scenario.name}")
    u = _input_variables(builder, scenario)
    objective = encode_objective(builder, scenario.objective, u, scenario.horizon,
                                 scenario.models[0].m_u)
    n_sep = stacked.Lam.shape[0]
    s = builder.add_variables(n_sep, lower=0.0, prefix="s")
    a = builder.add_variables(n_sep, lower=0.0, upper=1.0, binary=True, prefix="a")
    eye = np.eye(n_sep)

    support = None
    pi = None
    beta_sep = _support_values(stacked, -stacked.Lam)
    # an output difference unbounded over the uncertainty can never be the committed one
    unbounded = np.flatnonzero(beta_sep == INF)
    if unbounded.size:
        builder.set_bounds(a[unbounded], upper=0.0)
        logger.info("%d separating rows have unbounded uncertainty and are excluded", unbounded.size)
    if form == "support":
        beta_x = _support_values(stacked, stacked.Hx)
        support = np.concatenate([beta_sep, beta_x])
        for q in range(n_sep):
            if beta_sep[q] > -INF and beta_sep[q] < INF:
                builder.add_block_rows([(u, -stacked.Su[q:q + 1]), (s[q:q + 1], [[-1.0]])], "L",
                                       [stacked.c[q] - eps - beta_sep[q]], prefix=f"sep{q}")
        for q in range(stacked.Hx.shape[0]):
            if beta_x[q] == INF:
                # no input meets this responsibility for every uncertainty
                builder.add_block_rows([], "L", [-1.0], prefix=f"resp_unbounded{q}")
            elif beta_x[q] > -INF:
                builder.add_block_rows([(u, stacked.Sx[q:q + 1])], "L",
                                       [stacked.rx[q] - beta_x[q]], prefix=f"resp{q}")
    else:
        Phi, phi, R = stacked.Phi, stacked.phi, stacked.R
        n_phi, n_R = Phi.shape[0], R.shape[0]
        pi = builder.add_variables(n_phi * n_R, lower=0.0, prefix="pi").reshape(n_R, n_phi)
        for q in range(n_R):
            if q < n_sep and beta_sep[q] == INF:
                builder.set_bounds(pi[q], upper=0.0)
                continue
            builder.add_block_rows([(pi[q], Phi.T)], "E", R[q], prefix=f"dual{q}")
        for q in range(n_sep):
            if beta_sep[q] == INF:
                continue
            builder.add_block_rows([(pi[q], phi.reshape(1, -1)), (u, -stacked.Su[q:q + 1]),
                                    (s[q:q + 1], [[-1.0]])], "L", [stacked.c[q] - eps], prefix=f"sep{q}")
        for q in range(stacked.Hx.shape[0]):
            builder.add_block_rows([(pi[n_sep + q], phi.reshape(1, -1)), (u, stacked.Sx[q:q + 1])],
                                   "L", [stacked.rx[q]], prefix=f"resp{q}")

    # every pair commits to at least one separating index
    per_pair = 2 * (scenario.horizon + 1) * scenario.models[0].p
    for k, pair in enumerate(stacked.pairs):
        idx = a[k * per_pair:(k + 1) * per_pair]
        builder.add_block_rows([(idx, -np.ones((1, per_pair)))], "L", [-1.0], prefix=f"choose{pair[0]}{pair[1]}")
    for q in range(n_sep):
        builder.add_sos1([a[q], s[q]])
    builder.tags["formulation"] = f"conservative-{form}"
    problem = builder.build()
    logger.info("conservative MILP (%s): %d variables, %d rows, %d binaries",
                form, problem.num_vars, problem.num_rows, problem.num_binaries)
    return ConservativeAssembly(problem, u, s, a, stacked.row_index, form, objective,
                                support=support, pi=pi, warning=warning)


# ----------------------------------------------------------------------
# pair elimination and verification


def _elimination_lp(scenario, pair):
    builder = ProblemBuilder(f"elim-{pair.i}-{pair.j}")
    u = _input_variables(builder, scenario)
    delta = builder.add_variables(1, upper=scenario.epsilon - strict_tolerance(scenario.epsilon),
                                  prefix="delta")
    xbar = builder.add_variables(pair.eta, prefix="xbar")
    builder.add_block_rows([(xbar, pair.R), (delta, -pair.delta_column.reshape(-1, 1)), (u, pair.S)],
                           "L", pair.r, prefix="sep")
    builder.add_block_rows([(xbar, pair.Hxbar)], "L", pair.hxbar, prefix="unc")
    return builder.build()


@dataclass
class EliminationResult:
    retained: list
    eliminated: list

    def to_dict(self):
        return {"retained": [list(p.pair) for p in self.retained],
                "eliminated": [list(p.pair) for p in self.eliminated]}


def pair_elimination(scenario, pairs, params=None, jobs=1):
    """Drop pairs that no admissible input can bring below ε."""
    def feasible(pair):
        return solve_lp(_elimination_lp(scenario, pair), params).status == Status.OPTIMAL

    flags = _map(feasible, list(pairs), jobs)
    retained = [p for p, keep in zip(pairs, flags) if keep]
    eliminated = [p for p, keep in zip(pairs, flags) if not keep]
    logger.info("pair elimination: %d retained, %d eliminated", len(retained), len(eliminated))
    return EliminationResult(retained, eliminated)


@dataclass
class VerificationReport:
    epsilon: float
    deltas: list
    tol: float = VERIFY_TOL

    @property
    def passed(self):
        return all(entry["passed"] for entry in self.deltas)

    @property
    def min_delta(self):
        return min((entry["delta"] for entry in self.deltas), default=INF)

    def to_dict(self):
        return {"success": self.passed, "epsilon": self.epsilon, "min_delta": self.min_delta,
                "pairs": self.deltas}


def verify_design(scenario, pairs, u_star, params=None, jobs=1, tol=VERIFY_TOL):
    """Re-solve the inner LP of every pair at ``u_star``."""
    u_star = np.asarray(u_star, dtype=float)

    def check(pair):
        inner = solve_inner(pair, u_star, params)
        return {"pair": list(pair.pair), "delta": inner.delta,
                "passed": bool(inner.delta >= pair.epsilon - tol)}

    return VerificationReport(scenario.epsilon, _map(check, list(pairs), jobs), tol)


# ----------------------------------------------------------------------
# complexity


def complexity_report(scenario):
    """Closed-form variable counts next to counts taken from built problems."""
    ref = scenario.models[0]
    T, N = scenario.horizon, scenario.N
    I = N * (N - 1) // 2
    Tp = T + 1
    n_u = ref.m_u
    c0, cw, cv = scenario.x0_set.rows, scenario.w_set.rows, scenario.v_set.rows
    cd, cx, cy = ref.c_d, ref.c_x, ref.c_y
    c1 = ref.n + T * (ref.m_d + ref.m_w + ref.m_v)
    c2 = c0 + T * (cd + cw + cv)
    c3 = c2 + T * (cx + cy)
    p = ref.p
    inputs = {"c_0": c0, "c_d": cd, "c_w": cw, "c_v": cv, "c_x": cx, "c_y": cy,
              "c_u": scenario.u_set.rows, "n": ref.n, "m_d": ref.m_d, "m_w": ref.m_w,
              "m_v": ref.m_v, "p": p, "T": T, "I": I, "n_u": n_u}
    exact_closed = {
        "sos1_count": 2 * I * (c3 + Tp * p),
        "binary_count": 0,
        "continuous_count": 2 * I * (c3 + Tp * p) + T * n_u + 2 * I * c1 + I,
    }
    cons_closed = {
        "sos1_count": 2 * I * Tp * p,
        "binary_count": 2 * I * Tp * p,
        # Π entries counted as NT(c2 + T c_y)(N c_x + 2 I p)
        "continuous_count": 2 * I * Tp * p + T * n_u + N * T * (c2 + T * cy) * (N * cx + 2 * I * p),
    }

    pairs = stack_pairs(scenario)
    exact = build_exact(scenario, pairs)
    slack_count = sum(len(h.s1) + len(h.s2) + len(h.s3) for h in exact.pairs)
    epigraph = len(exact.objective.variables)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SuboptimalityWarning)
        cons = build_conservative(scenario, form="explicit")
    cons_epigraph = len(cons.objective.variables)

    def measured(problem, extra):
        return {"sos1_count": len(problem.sos1), "binary_count": problem.num_binaries,
                "continuous_count": problem.num_continuous, **extra}

    return {
        "inputs": inputs,
        "exact": {"closed_form": exact_closed,
                  "measured": measured(exact.problem, {"slack_count": slack_count,
                                                       "epigraph_count": epigraph})},
        "conservative": {"closed_form": cons_closed,
                         "measured": measured(cons.problem, {"epigraph_count": cons_epigraph,
                                                             "pi_count": int(cons.pi.size)})},
    }


# ----------------------------------------------------------------------
# pipeline


@dataclass
class DesignResult:
    formulation: str
    objective_label: str
    status: str
    objective: Optional[float]
    u: Optional[list]
    deltas: list = field(default_factory=list)
    retained: list = field(default_factory=list)
    eliminated: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    verified: Optional[bool] = None
    stats: dict = field(default_factory=dict)

    @property
    def success(self):
        return self.u is not None

    def u_steps(self, m_u):
        if self.u is None:
            return None
        return np.asarray(self.u).reshape(-1, m_u).tolist()

    def to_dict(self):
        return {
            "formulation": self.formulation,
            "objective_kind": self.objective_label,
            "status": self.status,
            "objective": self.objective,
            "u": self.u,
            "deltas": self.deltas,
            "retained_pairs": self.retained,
            "eliminated_pairs": self.eliminated,
            "warnings": self.warnings,
            "verified": self.verified,
            "solver": self.stats,
        }


def _solve(problem, params, heuristic, backend, log_stream, starts=()):
    if problem.quadratic or backend is not None:
        if backend is None and problem.quadratic:
            raise UnsupportedObjectiveError(
                "the quadratic objective needs an external backend (set --backend or DISCRIMINATION_BACKEND_CMD)")
        return external_backend_solve(problem, backend)
    return solve_milp(problem, params, heuristic=heuristic, log_stream=log_stream, starts=starts)


def _objective_only(scenario):
    """All pairs eliminated: the design reduces to minimising J over U."""
    builder = ProblemBuilder(f"unconstrained-{scenario.name}")
    u = _input_variables(builder, scenario)
    encode_objective(builder, scenario.objective, u, scenario.horizon, scenario.models[0].m_u)
    return builder.build(), u


def _solve_exact(scenario, retained, params, backend, log_stream, use_heuristic, method, start):
    """Returns (solution, problem, u indices, method label)."""
    linear = scenario.objective.kind != ObjectiveKind.EXTERNAL_QUADRATIC
    certified = None
    if start is not None and linear:
        certified = dual_descent(scenario, retained, start, params)

    if method == "auto" and backend is None and linear:
        dual = build_exact_dual(scenario, retained, params)
        if dual is not None:
            starts = [dual.point(certified)] if certified is not None else []
            heuristic = dual.heuristic(params) if use_heuristic else None
            solution = solve_bilinear(dual.problem, dual.products, params, heuristic=heuristic,
                                      log_stream=log_stream, starts=starts)
            return solution, dual.problem, dual.u, "dual"

    assembly = build_exact(scenario, retained)
    heuristic = assembly.heuristic(params) if use_heuristic else None
    starts = []
    if start is not None:
        starts.append(assembly.kkt_point(np.asarray(start, dtype=float), params))
    if certified is not None:
        starts.append(assembly.kkt_point(certified.u, params))
    solution = _solve(assembly.problem, params, heuristic, backend, log_stream, starts)
    return solution, assembly.problem, assembly.u, "kkt"


def design(scenario, formulation="exact", params=None, eliminate=True, backend=None,
           jobs=1, log_stream=None, conservative_form="support", use_heuristic=True,
           exact_method="auto", start=None):
    """Eliminate, build, solve and verify; returns a :class:`DesignResult`.

    The exact design runs the spatial search over the inner duals when
    ``exact_method`` is ``auto`` and every multiplier range is finite, and
    the KKT/SOS-1 MILP otherwise.  ``start`` is an input known to separate
    every pair (e.g. the conservative design) used as a first incumbent.
    """
    if formulation not in FORMULATIONS:
        raise ValueError(f"formulation must be one of {FORMULATIONS}")
    if exact_method not in EXACT_METHODS:
        raise ValueError(f"exact_method must be one of {EXACT_METHODS}")
    params = params or SolverParams()
    pairs = stack_pairs(scenario)
    retained, eliminated = pairs, []
    caught_warnings = []

    if formulation == "exact":
        if eliminate:
            elim = pair_elimination(scenario, pairs, params, jobs)
            retained, eliminated = elim.retained, elim.eliminated
        if retained:
            solution, problem, u_idx, method = _solve_exact(
                scenario, retained, params, backend, log_stream, use_heuristic, exact_method, start)
        else:
            problem, u_idx = _objective_only(scenario)
            solution = _solve(problem, params, None, backend, log_stream)
            method = "objective-only"
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SuboptimalityWarning)
            assembly = build_conservative(scenario, form=conservative_form)
        for w in caught:
            caught_warnings.append(str(w.message))
            warnings.warn(w.message, w.category, stacklevel=2)
        problem, u_idx = assembly.problem, assembly.u
        solution = _solve(problem, params, None, backend, log_stream)
        method = f"conservative-{conservative_form}"

    result = DesignResult(
        formulation=formulation,
        objective_label=scenario.objective.label,
        status=Status(solution.status).value,
        objective=float(solution.objective) if solution.has_solution else None,
        u=None,
        retained=[list(p.pair) for p in retained],
        eliminated=[list(p.pair) for p in eliminated],
        warnings=caught_warnings,
        stats={"method": method, "nodes": solution.nodes, "wall_time": solution.wall_time,
               "best_bound": _finite(solution.best_bound),
               "variables": problem.num_vars, "rows": problem.num_rows,
               "sos1": len(problem.sos1), "binaries": problem.num_binaries},
    )
    if solution.has_solution:
        u_star = np.asarray(solution.x)[u_idx]
        result.u = u_star.tolist()
        report = verify_design(scenario, pairs, u_star, params, jobs)
        eliminated_keys = {tuple(p) for p in result.eliminated}
        result.deltas = [dict(entry, eliminated=tuple(entry["pair"]) in eliminated_keys)
                         for entry in report.deltas]
        result.verified = report.passed
        if not report.passed:
            logger.warning("designed input fails verification: min δ = %.6g < ε = %.6g",
                           report.min_delta, scenario.epsilon)
    return result


def _finite(value):
    value = float(value)
    return value if np.isfinite(value) else None


def compare(exact, conservative):
    """Conservatism gap between two design results (values and ratio)."""
    block = {"exact": exact.objective, "conservative": conservative.objective,
             "gap": None, "ratio": None}
    if exact.objective is not None and conservative.objective is not None:
        block["gap"] = conservative.objective - exact.objective
        if exact.objective != 0:
            block["ratio"] = conservative.objective / exact.objective
    return block


__all__ = [
    "CONSERVATIVE_FORMS",
    "Certificate",
    "DesignResult",
    "DualAssembly",
    "EXACT_METHODS",
    "EliminationResult",
    "ExactAssembly",
    "ConservativeAssembly",
    "InnerSolution",
    "build_conservative",
    "build_exact",
    "build_exact_dual",
    "build_inner",
    "compare",
    "complexity_report",
    "design",
    "dual_descent",
    "encode_objective",
    "multiplier_ranges",
    "pair_elimination",
    "solve_inner",
    "strict_tolerance",
    "verify_design",
]
