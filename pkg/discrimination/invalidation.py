"""Model invalidation from an observed input/output window.

A model stays Consistent while some admissible (x0, d, w, v) reproduces the
observed outputs exactly with every constraint satisfied.  The feasibility
LP maximises a common margin θ on the inequality rows, so the verdict also
carries how much room the data leaves.
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .errors import AllInvalidated, InvalidationError
from .solver.problem import ProblemBuilder, SolverParams, Status
from .solver.simplex import solve_lp
from .stack import responsibility_rows, stack_single

logger = logging.getLogger(__name__)

_rank_warned = set()


class ModelStatus(str, Enum):
    CONSISTENT = "Consistent"
    INVALIDATED = "Invalidated"


@dataclass
class ObservationWindow:
    """Applied inputs u(0..T_w−1) and observed outputs z(0..T_w)."""

    u_applied: np.ndarray
    z_observed: np.ndarray

    def __post_init__(self):
        # 1-D sequences are single-channel signals, one sample per entry
        self.u_applied = np.asarray(self.u_applied, dtype=float)
        self.z_observed = np.asarray(self.z_observed, dtype=float)
        if self.u_applied.ndim == 1:
            self.u_applied = self.u_applied.reshape(-1, 1)
        if self.z_observed.ndim == 1:
            self.z_observed = self.z_observed.reshape(-1, 1)
        if self.u_applied.shape[0] < 1:
            raise InvalidationError("a window needs at least one input sample")
        if self.z_observed.shape[0] != self.u_applied.shape[0] + 1:
            raise InvalidationError(
                f"window has {self.u_applied.shape[0]} inputs but {self.z_observed.shape[0]} outputs; "
                "expected one more output than inputs")

    @property
    def length(self):
        return self.u_applied.shape[0]

    def prefix(self, t):
        """The window restricted to [0, t]."""
        if not 1 <= t <= self.length:
            raise InvalidationError(f"prefix length {t} outside 1..{self.length}")
        return ObservationWindow(self.u_applied[:t], self.z_observed[:t + 1])


@dataclass
class ModelVerdict:
    model: int
    status: ModelStatus
    margin: Optional[float]

    @property
    def consistent(self):
        return self.status == ModelStatus.CONSISTENT


@dataclass
class InvalidationVerdict:
    verdicts: list
    identified: Optional[int] = None
    t: Optional[int] = None

    @property
    def statuses(self):
        return [v.status.value for v in self.verdicts]

    @property
    def consistent(self):
        return [v.model for v in self.verdicts if v.consistent]

    def to_dict(self):
        return {"t": self.t, "statuses": self.statuses,
                "margins": [v.margin for v in self.verdicts], "identified": self.identified}


def _check_rank(model, index):
    rank = np.linalg.matrix_rank(model.Dv)
    if rank < model.p and index not in _rank_warned:
        _rank_warned.add(index)
        logger.warning("model %s: D_v has rank %d < p = %d; measurement noise is confined to range(D_v)",
                       index, rank, model.p)


def invalidate_model(model, scenario, window, params=None, index=None):
    """Feasibility LP over (x0, d, w, v) for one model; returns a ModelVerdict."""
    params = params or SolverParams()
    T = window.length
    if window.u_applied.shape[1] != model.m_u or window.z_observed.shape[1] != model.p:
        raise InvalidationError(
            f"window shapes {window.u_applied.shape}/{window.z_observed.shape} do not fit "
            f"m_u = {model.m_u}, p = {model.p}")
    _check_rank(model, index)
    st = stack_single(model, T)
    u = window.u_applied.reshape(-1)
    z = window.z_observed.reshape(-1)

    builder = ProblemBuilder(f"invalidate-{index}")
    x0 = builder.add_variables(model.n, prefix="x0")
    d = builder.add_variables(T * model.m_d, prefix="d")
    w = builder.add_variables(T * model.m_w, prefix="w")
    v = builder.add_variables((T + 1) * model.m_v, prefix="v")
    theta = builder.add_variables(1, upper=1.0, prefix="theta")

    def margin_rows(blocks, H, h, prefix):
        if H.shape[0]:
            builder.add_block_rows(blocks + [(theta, np.ones((H.shape[0], 1)))], "L", h, prefix=prefix)

    margin_rows([(x0, scenario.x0_set.H)], scenario.x0_set.H, scenario.x0_set.h, "x0")
    if model.m_d:
        D = model.d_set.repeat(T)
        margin_rows([(d, D.H)], D.H, D.h, "d")
    W, V = scenario.w_set.repeat(T), scenario.v_set.repeat(T + 1)
    margin_rows([(w, W.H)], W.H, W.h, "w")
    margin_rows([(v, V.H)], V.H, V.h, "v")
    for which in ("x", "y"):
        resp = responsibility_rows(model, st, which)
        if resp is None:
            continue
        PM, PGu, PGd, PGw, const = resp
        margin_rows([(x0, PM), (d, PGd), (w, PGw)], PM, const - PGu @ u, f"resp_{which}")

    builder.add_block_rows([(x0, st.full_O), (d, st.full_Zd), (w, st.full_Zw), (v, st.full_Zv)],
                           "E", z - st.full_Zu @ u - st.full_z0, prefix="output")
    builder.add_cost(theta, [-1.0])
    lp = solve_lp(builder.build(), params)

    if lp.status != Status.OPTIMAL:
        return ModelVerdict(index, ModelStatus.INVALIDATED, None)
    margin = float(lp.x[theta[0]])
    status = ModelStatus.CONSISTENT if margin >= -params.feas_tol else ModelStatus.INVALIDATED
    return ModelVerdict(index, status, margin)


def identify(scenario, window, params=None):
    """Run invalidation for every model; raises AllInvalidated if none survives."""
    verdicts = [invalidate_model(m, scenario, window, params, index=i)
                for i, m in enumerate(scenario.models)]
    survivors = [v.model for v in verdicts if v.consistent]
    verdict = InvalidationVerdict(verdicts, survivors[0] if len(survivors) == 1 else None,
                                  t=window.length)
    if not survivors:
        raise AllInvalidated(verdict)
    return verdict


def timeline(scenario, window, params=None, stream=None):
    """Verdicts on the growing windows [0, t], t = 1..T_w.

    Each entry is also written as one JSON line to ``stream`` when given.
    A step where every model is invalidated is recorded with
    ``all_invalidated`` set instead of raising.
    """
    entries = []
    for t in range(1, window.length + 1):
        try:
            verdict = identify(scenario, window.prefix(t), params)
            entry = dict(verdict.to_dict(), all_invalidated=False)
        except AllInvalidated as exc:
            entry = dict(exc.verdict.to_dict(), all_invalidated=True)
        entries.append(entry)
        if stream is not None:
            stream.write(json.dumps(entry) + "\n")
    return entries
