"""Time-concatenated (lifted) matrices for single models, model pairs and the
whole model set, plus a step-by-step simulation used as their oracle.

Conventions: states are stacked for k = 1..T, outputs for k = 0..T.  The
uncertainty vector of one model is [x0; d; w; v] with T samples of d and w
and T+1 samples of v.  No input is applied at k = T, so the feedthrough
block of u and d at the last output sample is zero.
"""
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ShapeError

logger = logging.getLogger(__name__)


def _block_diag(block, times):
    return np.kron(np.eye(times), block)


def _with_zero_tail(block, times):
    """diag_times(block) followed by a zero block row (the k = T output sample)."""
    body = _block_diag(block, times)
    return np.vstack([body, np.zeros((block.shape[0], body.shape[1]))])


@dataclass
class StackedSingle:
    """Lifted maps of one model over horizon T.

    ``x_{1..T} = Abar x0 + Gu u + Gd d + Gw w + ftilde`` and
    ``z_{0..T} = E [x0; x_{1..T}] + Fu u + Fd d + Fv v + gtilde``.
    """

    T: int
    Abar: np.ndarray
    Theta: np.ndarray
    fbar: np.ndarray
    ftilde: np.ndarray
    gtilde: np.ndarray
    E: np.ndarray
    Fu: np.ndarray
    Fd: np.ndarray
    Fv: np.ndarray
    Gu: np.ndarray
    Gd: np.ndarray
    Gw: np.ndarray

    @property
    def n(self):
        return self.Abar.shape[1]

    @cached_property
    def full_O(self):
        n = self.n
        return self.E @ np.vstack([np.eye(n), self.Abar])

    def _lift(self, G):
        return self.E @ np.vstack([np.zeros((self.n, G.shape[1])), G])

    @cached_property
    def full_Zu(self):
        return self._lift(self.Gu) + self.Fu

    @cached_property
    def full_Zd(self):
        return self._lift(self.Gd) + self.Fd

    @cached_property
    def full_Zw(self):
        return self._lift(self.Gw)

    @property
    def full_Zv(self):
        return self.Fv

    @cached_property
    def full_z0(self):
        return self.E @ np.concatenate([np.zeros(self.n), self.ftilde]) + self.gtilde

    def predict_states(self, x0, u, d, w):
        return self.Abar @ x0 + self.Gu @ u + self.Gd @ d + self.Gw @ w + self.ftilde

    def predict_outputs(self, x0, u, d, w, v):
        return (self.full_O @ x0 + self.full_Zu @ u + self.full_Zd @ d
                + self.full_Zw @ w + self.full_Zv @ v + self.full_z0)

    def to_debug_dict(self):
        names = ("Abar", "Theta", "fbar", "ftilde", "gtilde", "E", "Fu", "Fd", "Fv", "Gu", "Gd", "Gw")
        out = {name: np.asarray(getattr(self, name)).tolist() for name in names}
        out["T"] = self.T
        return out


@dataclass
class PartitionMaps:
    """Rows of the lifted state map that belong to one partition (x or y)."""

    M: np.ndarray
    Gu: np.ndarray
    Gd: np.ndarray
    Gw: np.ndarray
    f: np.ndarray


def stack_single(model, T):
    """All lifted matrices of ``model`` over ``T`` steps."""
    if T < 1:
        raise ShapeError("horizon must be at least 1")
    A, n = model.A, model.n
    powers = [np.eye(n)]
    for _ in range(T):
        powers.append(powers[-1] @ A)
    Abar = np.vstack(powers[1:])
    Theta = np.zeros((T * n, T * n))
    for r in range(T):
        for c in range(r + 1):
            Theta[r * n:(r + 1) * n, c * n:(c + 1) * n] = powers[r - c]
    fbar = np.tile(model.f, T)
    return StackedSingle(
        T=T,
        Abar=Abar,
        Theta=Theta,
        fbar=fbar,
        ftilde=Theta @ fbar,
        gtilde=np.tile(model.g, T + 1),
        E=_block_diag(model.C, T + 1),
        Fu=_with_zero_tail(model.D_u, T),
        Fd=_with_zero_tail(model.D_d, T),
        Fv=_block_diag(model.Dv, T + 1),
        Gu=Theta @ _block_diag(model.B_u, T),
        Gd=Theta @ _block_diag(model.B_d, T),
        Gw=Theta @ _block_diag(model.Bw, T),
    )


def partition_maps(model, stacked, which):
    """Select the x (first n_x) or y (last n_y) rows of every state block."""
    n, T = model.n, stacked.T
    if which == "x":
        sel = np.eye(n)[:model.n_x]
    elif which == "y":
        sel = np.eye(n)[model.n_x:]
    else:
        raise ValueError("which must be 'x' or 'y'")
    S = _block_diag(sel, T)
    return PartitionMaps(M=S @ stacked.Abar, Gu=S @ stacked.Gu, Gd=S @ stacked.Gd,
                         Gw=S @ stacked.Gw, f=S @ stacked.ftilde)


def responsibility_rows(model, stacked, which):
    """(P̄ M, P̄ Γ_u, P̄ Γ_d, P̄ Γ_w, p̄ − P̄ f̃) for one partition, or None if unconstrained."""
    poly = model.x_set if which == "x" else model.y_set
    if poly is None or poly.rows == 0:
        return None
    maps = partition_maps(model, stacked, which)
    P = _block_diag(poly.H, stacked.T)
    p = np.tile(poly.h, stacked.T)
    return P @ maps.M, P @ maps.Gu, P @ maps.Gd, P @ maps.Gw, p - P @ maps.f


# ----------------------------------------------------------------------
# uncertainty layout


@dataclass
class Layout:
    """Column offsets of named blocks inside a stacked uncertainty vector."""

    blocks: dict = field(default_factory=dict)
    size: int = 0

    def add(self, name, width):
        self.blocks[name] = (self.size, self.size + width)
        self.size += width
        return self.blocks[name]

    def slice(self, name):
        start, end = self.blocks[name]
        return slice(start, end)


def _uncertainty_domain(model, scenario, T):
    """Per-model diagonal blocks of H_x̄ and h_x̄ in [x0; d; w; v] order."""
    H0, h0 = scenario.x0_set.H, scenario.x0_set.h
    if model.m_d:
        Dp = model.d_set.repeat(T)
        Hd, hd = Dp.H, Dp.h
    else:
        Hd, hd = np.zeros((0, 0)), np.zeros(0)
    Wp = scenario.w_set.repeat(T)
    Vp = scenario.v_set.repeat(T + 1)
    return (H0, h0), (Hd, hd), (Wp.H, Wp.h), (Vp.H, Vp.h)


def _place(rows, layout, name, block):
    out = np.zeros((rows, layout.size))
    out[:, layout.slice(name)] = block
    return out


@dataclass
class StackedPair:
    """Inner-problem data of one model pair ι = (i, j).

    The inner LP at input u is  min δ  s.t.  R x̄ − [0; 1] δ ≤ r − S u,
    H_x̄ x̄ ≤ h_x̄, where the first ξ rows of R are the responsibility rows
    and the last ρ rows bound |z_i − z_j| entrywise.
    """

    i: int
    j: int
    epsilon: float
    layout: Layout
    R: np.ndarray
    r: np.ndarray
    S: np.ndarray
    Hxbar: np.ndarray
    hxbar: np.ndarray
    Lam: np.ndarray
    Hx: np.ndarray
    Hy: np.ndarray
    eta: int
    kappa: int
    xi: int
    rho: int
    single_i: StackedSingle = None
    single_j: StackedSingle = None

    @property
    def pair(self):
        return (self.i, self.j)

    @property
    def delta_column(self):
        return np.concatenate([np.zeros(self.xi), np.ones(self.rho)])

    def rhs(self, u):
        return self.r - self.S @ np.asarray(u, dtype=float)

    def difference(self, xbar, u):
        """Stacked z_i − z_j for a given uncertainty vector and input."""
        half = self.rho // 2
        return self.Lam[:half] @ xbar + self.S[self.xi:self.xi + half] @ u - self.r[self.xi:self.xi + half]

    def to_debug_dict(self):
        out = {name: np.asarray(getattr(self, name)).tolist()
               for name in ("R", "r", "S", "Hxbar", "hxbar", "Lam", "Hx", "Hy")}
        out.update({"pair": [self.i, self.j], "eta": self.eta, "kappa": self.kappa,
                    "xi": self.xi, "rho": self.rho, "layout": self.layout.blocks})
        return out


def stack_pair(model_i, model_j, scenario, T=None, epsilon=None, index=(0, 1)):
    """Assemble R, r, S, H_x̄, h_x̄ and Λ for the pair (model_i, model_j)."""
    T = scenario.horizon if T is None else T
    epsilon = scenario.epsilon if epsilon is None else epsilon
    si, sj = stack_single(model_i, T), stack_single(model_j, T)
    n, m_w, m_v = model_i.n, model_i.m_w, model_i.m_v

    layout = Layout()
    for name, width in (("x0_i", n), ("x0_j", n), ("d_i", T * model_i.m_d), ("d_j", T * model_j.m_d),
                        ("w_i", T * m_w), ("w_j", T * m_w), ("v_i", (T + 1) * m_v), ("v_j", (T + 1) * m_v)):
        layout.add(name, width)
    eta = layout.size

    # output difference rows z_i − z_j = Lrow x̄ + Su u + c
    rows = si.full_O.shape[0]
    Lrow = (_place(rows, layout, "x0_i", si.full_O) - _place(rows, layout, "x0_j", sj.full_O)
            + _place(rows, layout, "d_i", si.full_Zd) - _place(rows, layout, "d_j", sj.full_Zd)
            + _place(rows, layout, "w_i", si.full_Zw) - _place(rows, layout, "w_j", sj.full_Zw)
            + _place(rows, layout, "v_i", si.full_Zv) - _place(rows, layout, "v_j", sj.full_Zv))
    Su = si.full_Zu - sj.full_Zu
    c = si.full_z0 - sj.full_z0
    Lam = np.vstack([Lrow, -Lrow])

    Hx_parts, Hy_parts, Sx_parts, Sy_parts, rx_parts, ry_parts = [], [], [], [], [], []
    for tag, model, st in (("i", model_i, si), ("j", model_j, sj)):
        for which, H_parts, S_parts, r_parts in (("x", Hx_parts, Sx_parts, rx_parts),
                                                 ("y", Hy_parts, Sy_parts, ry_parts)):
            resp = responsibility_rows(model, st, which)
            if resp is None:
                continue
            PM, PGu, PGd, PGw, const = resp
            k = PM.shape[0]
            H_parts.append(_place(k, layout, f"x0_{tag}", PM) + _place(k, layout, f"d_{tag}", PGd)
                           + _place(k, layout, f"w_{tag}", PGw))
            S_parts.append(PGu)
            r_parts.append(const)
    m_u_T = T * model_i.m_u

    def stacked(parts, width):
        return np.vstack(parts) if parts else np.zeros((0, width))

    Hx, Hy = stacked(Hx_parts, eta), stacked(Hy_parts, eta)
    Sx, Sy = stacked(Sx_parts, m_u_T), stacked(Sy_parts, m_u_T)
    rx = np.concatenate(rx_parts) if rx_parts else np.zeros(0)
    ry = np.concatenate(ry_parts) if ry_parts else np.zeros(0)

    R = np.vstack([Hx, Hy, Lam])
    S = np.vstack([Sx, Sy, Su, -Su])
    r = np.concatenate([rx, ry, -c, c])

    dom_i = _uncertainty_domain(model_i, scenario, T)
    dom_j = _uncertainty_domain(model_j, scenario, T)
    H_blocks, h_blocks = [], []
    for (Hi, hi), (Hj, hj) in zip(dom_i, dom_j):
        H_blocks.extend([Hi, Hj])
        h_blocks.extend([hi, hj])
    Hxbar = scipy.linalg.block_diag(*H_blocks)
    hxbar = np.concatenate(h_blocks)

    pair = StackedPair(
        i=index[0], j=index[1], epsilon=epsilon, layout=layout,
        R=R, r=r, S=S, Hxbar=Hxbar, hxbar=hxbar, Lam=Lam, Hx=Hx, Hy=Hy,
        eta=eta, kappa=Hxbar.shape[0], xi=Hx.shape[0] + Hy.shape[0], rho=Lam.shape[0],
        single_i=si, single_j=sj,
    )
    logger.debug("stacked pair %s: eta=%d kappa=%d xi=%d rho=%d",
                 pair.pair, pair.eta, pair.kappa, pair.xi, pair.rho)
    return pair


def stack_pairs(scenario, pairs=None):
    pairs = scenario.pairs if pairs is None else pairs
    return [stack_pair(scenario.models[i], scenario.models[j], scenario, index=(i, j))
            for i, j in pairs]


# ----------------------------------------------------------------------
# whole model set


@dataclass
class StackedGlobal:
    """Concatenation over all models, used by the conservative formulation.

    The uncertainty vector is x̄ = [x0_1..x0_N; d_1..d_N; w_1..w_N; v_1..v_N].
    ``Lam`` holds one block row per ordered pair (i < j) and per sign, i.e.
    the rows of Ē[Ā Γ_d Γ_w 0] + [0 F̄_d 0 F̄_v]; ``Su``/``c`` are the matching
    input and constant terms so that the signed differences equal
    Lam x̄ + Su u + c.  Φ x̄ ≤ φ is the uncertainty set (y-responsibility
    and the uncertainty polytopes); ``Hx`` x̄ + ``Sx`` u ≤ ``rx`` are the
    x-responsibility rows that must hold robustly.
    """

    pairs: list
    layout: Layout
    Lam: np.ndarray
    Su: np.ndarray
    c: np.ndarray
    row_index: list
    Hx: np.ndarray
    Sx: np.ndarray
    rx: np.ndarray
    Hy: np.ndarray
    Sy: np.ndarray
    ry: np.ndarray
    Hxbar: np.ndarray
    hxbar: np.ndarray
    singles: list

    @property
    def Phi(self):
        return np.vstack([self.Hy, self.Hxbar])

    @property
    def phi(self):
        """ψ with the input-dependent part of the y rows dropped."""
        return np.concatenate([self.ry, self.hxbar])

    @property
    def R(self):
        return np.vstack([-self.Lam, self.Hx])

    @property
    def y_input_coupling(self):
        """‖P̄_y Γ_yu‖∞ over all models; nonzero means φ is only a restriction."""
        return float(np.abs(self.Sy).max(initial=0.0))

    def to_debug_dict(self):
        out = {name: np.asarray(getattr(self, name)).tolist()
               for name in ("Lam", "Su", "c", "Hx", "Sx", "rx", "Hy", "Sy", "ry", "Hxbar", "hxbar")}
        out["pairs"] = [list(p) for p in self.pairs]
        out["row_index"] = [list(r) for r in self.row_index]
        out["layout"] = self.layout.blocks
        return out


def stack_all(scenario):
    T, N = scenario.horizon, scenario.N
    singles = [stack_single(m, T) for m in scenario.models]
    ref = scenario.models[0]
    layout = Layout()
    for i in range(N):
        layout.add(f"x0_{i}", ref.n)
    for i, m in enumerate(scenario.models):
        layout.add(f"d_{i}", T * m.m_d)
    for i in range(N):
        layout.add(f"w_{i}", T * ref.m_w)
    for i in range(N):
        layout.add(f"v_{i}", (T + 1) * ref.m_v)

    pairs = scenario.pairs
    blocks, su_blocks, c_blocks, row_index = [], [], [], []
    rows = (T + 1) * ref.p
    for i, j in pairs:
        si, sj = singles[i], singles[j]
        diff = (_place(rows, layout, f"x0_{i}", si.full_O) - _place(rows, layout, f"x0_{j}", sj.full_O)
                + _place(rows, layout, f"d_{i}", si.full_Zd) - _place(rows, layout, f"d_{j}", sj.full_Zd)
                + _place(rows, layout, f"w_{i}", si.full_Zw) - _place(rows, layout, f"w_{j}", sj.full_Zw)
                + _place(rows, layout, f"v_{i}", si.full_Zv) - _place(rows, layout, f"v_{j}", sj.full_Zv))
        su = si.full_Zu - sj.full_Zu
        c = si.full_z0 - sj.full_z0
        for sign in (1.0, -1.0):
            blocks.append(sign * diff)
            su_blocks.append(sign * su)
            c_blocks.append(sign * c)
            for k in range(T + 1):
                for l in range(ref.p):
                    row_index.append((i, j, k, l, int(sign)))

    m_u_T = T * ref.m_u
    Hx_parts, Sx_parts, rx_parts, Hy_parts, Sy_parts, ry_parts = [], [], [], [], [], []
    for i, (model, st) in enumerate(zip(scenario.models, singles)):
        for which, H_parts, S_parts, r_parts in (("x", Hx_parts, Sx_parts, rx_parts),
                                                 ("y", Hy_parts, Sy_parts, ry_parts)):
            resp = responsibility_rows(model, st, which)
            if resp is None:
                continue
            PM, PGu, PGd, PGw, const = resp
            k = PM.shape[0]
            H_parts.append(_place(k, layout, f"x0_{i}", PM) + _place(k, layout, f"d_{i}", PGd)
                           + _place(k, layout, f"w_{i}", PGw))
            S_parts.append(PGu)
            r_parts.append(const)

    def stacked(parts, width):
        return np.vstack(parts) if parts else np.zeros((0, width))

    H_blocks, h_blocks = [[], [], [], []], [[], [], [], []]
    for model in scenario.models:
        for slot, (H, h) in enumerate(_uncertainty_domain(model, scenario, T)):
            H_blocks[slot].append(H)
            h_blocks[slot].append(h)
    ordered_H = [H for slot in H_blocks for H in slot]
    ordered_h = [h for slot in h_blocks for h in slot]
    Hxbar = scipy.linalg.block_diag(*ordered_H)

    return StackedGlobal(
        pairs=pairs, layout=layout,
        Lam=np.vstack(blocks), Su=np.vstack(su_blocks), c=np.concatenate(c_blocks),
        row_index=row_index,
        Hx=stacked(Hx_parts, layout.size), Sx=stacked(Sx_parts, m_u_T),
        rx=np.concatenate(rx_parts) if rx_parts else np.zeros(0),
        Hy=stacked(Hy_parts, layout.size), Sy=stacked(Sy_parts, m_u_T),
        ry=np.concatenate(ry_parts) if ry_parts else np.zeros(0),
        Hxbar=Hxbar, hxbar=np.concatenate(ordered_h), singles=singles,
    )


def dump_debug(structure, path):
    Path(path).write_text(json.dumps(structure.to_debug_dict()) + "\n")


# ----------------------------------------------------------------------
# simulation


def _as_sequence(seq, length, dim, name):
    arr = np.asarray(seq, dtype=float)
    if arr.size == 0 and dim == 0:
        return np.zeros((length, 0))
    if arr.ndim == 1:
        if arr.size != length * dim:
            raise ShapeError(f"{name} has {arr.size} entries, expected {length}×{dim}")
        arr = arr.reshape(length, dim)
    if arr.shape != (length, dim):
        raise ShapeError(f"{name} has shape {arr.shape}, expected ({length}, {dim})")
    return arr


def simulate(model, x0, u_seq, d_seq, w_seq, v_seq):
    """Run the recursion for k = 0..T and return (states, outputs).

    ``u_seq``, ``d_seq`` and ``w_seq`` carry T samples, ``v_seq`` T+1; the
    horizon is taken from ``v_seq``, or from ``u_seq`` when the model has no
    measurement noise.  The output at k = T has no input feedthrough.
    """
    if model.m_v:
        v = np.asarray(v_seq, dtype=float)
        if v.ndim != 2 and v.size % model.m_v:
            raise ShapeError("v must hold T+1 samples of the measurement noise")
        T = (v.shape[0] if v.ndim == 2 else v.size // model.m_v) - 1
        if T < 0:
            raise ShapeError("v must hold at least one sample")
    else:
        u = np.asarray(u_seq, dtype=float)
        if model.m_u == 0 or u.ndim != 2 and u.size % model.m_u:
            raise ShapeError("u must hold T samples of the controlled input")
        T = u.shape[0] if u.ndim == 2 else u.size // model.m_u
    w = _as_sequence(w_seq, T, model.m_w, "w")
    u = _as_sequence(u_seq, T, model.m_u, "u")
    d = _as_sequence(d_seq, T, model.m_d, "d")
    v = _as_sequence(v_seq, T + 1, model.m_v, "v")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != model.n:
        raise ShapeError(f"x0 has length {x0.shape[0]}, expected {model.n}")

    xs = np.zeros((T + 1, model.n))
    zs = np.zeros((T + 1, model.p))
    xs[0] = x0
    for k in range(T + 1):
        z = model.C @ xs[k] + model.Dv @ v[k] + model.g
        if k < T:
            z = z + model.D_u @ u[k] + model.D_d @ d[k]
            xs[k + 1] = model.A @ xs[k] + model.B_u @ u[k] + model.B_d @ d[k] + model.Bw @ w[k] + model.f
        zs[k] = z
    return xs, zs
