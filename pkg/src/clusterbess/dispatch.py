"""Receding-horizon dispatch programs over cluster (or cell) energy models.

Per cluster j and step t the decision vector is (P_S, P_l, E, T, xi_E, xi_T).
States at t = 0 are measurements and enter as constants, so the program
carries 6Hk - k counted variables:

    P_S[t], P_l[t]   t = 0..H-1
    E[t]             t = 1..H
    T[t]             t = 2..H   (T[1] is an affine image of P_l[0])
    xi_E[t], xi_T[t] t = 1..H

Counting convention for constraints (11Hk + 5k + H in total):

* per cluster-step (11): current lower/upper, temperature min/max, energy
  window min/max, energy balancing, temperature balancing, loss cone, energy
  dynamics, thermal dynamics.  An absolute-value row is one constraint even
  though it is stored as two inequalities; the thermal row at t = 0 is folded
  into the T[1] substitution and still counts.
* per cluster (5): the two initial-state pins, the E0 anchor and the two
  current-bound scale factors frozen at the measured energy.  All five are
  folded into constants.
* per step (1): the supply-demand row.

Auxiliary mean variables (used when k is large to keep balancing rows sparse)
and the auxiliary variables of the exact current-bound mode are not counted.

With ``groups`` set, the clusters form independent sub-packs that share one
solve: balancing is against each group's own mean and every group has its
own demand row per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregate import ClusterSet, squared_voltage_bound
from .conic import ConicProblem, ProblemBuilder, Solution

DENSE_MEAN_MAX_K = 4


def table1_variables(H: int, k: int) -> int:
    return 6 * H * k - k


def table1_constraints(H: int, k: int) -> int:
    return 11 * H * k + 5 * k + H


@dataclass
class HorizonInput:
    """Everything one dispatch solve needs.

    ``dq_bar`` is a SoC bound per cluster (or shared) that becomes the
    squared-voltage bound (alpha + beta*dq)^2 - alpha^2.  Penalties are per
    cell; a cluster of n cells carries n times the weight when
    ``penalty_per_cell`` is set, which keeps the slack cost per unit of
    balancing error independent of how the pack is partitioned.
    """

    clusters: ClusterSet
    demand: np.ndarray
    dt: float = 1.0
    t_env: float = 298.0
    dq_bar: float | np.ndarray = 0.005
    dT_bar: float = 0.5
    lambda_E: float = 20.0
    lambda_T: float = 2.0
    energy: np.ndarray | None = None  # measured E at horizon start, relative to E0
    penalty_per_cell: bool = True
    exact_current: bool = False
    dense_mean: bool | None = None
    groups: np.ndarray | None = None  # group label per cluster; demand is then (G, H)

    def __post_init__(self):
        self.demand = np.atleast_1d(np.asarray(self.demand, dtype=float))
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=int)
            if self.groups.shape != (self.clusters.k,):
                raise ValueError("groups needs one label per cluster")
            G = int(self.groups.max()) + 1
            if self.groups.min() < 0 or np.bincount(self.groups, minlength=G).min() == 0:
                raise ValueError("group labels must be 0..G-1 with no empty group")
            if self.demand.ndim == 1 and G == 1:
                self.demand = self.demand[None, :]
            if self.demand.ndim != 2 or self.demand.shape[0] != G:
                raise ValueError(f"grouped demand must have shape ({G}, H)")
        elif self.demand.ndim != 1:
            raise ValueError("demand must be 1-D")
        if self.demand.size < 1:
            raise ValueError("horizon needs at least one step")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if np.any(np.asarray(self.dq_bar) < 0) or self.dT_bar < 0:
            raise ValueError("balancing bounds must be non-negative")
        if self.lambda_E < 0 or self.lambda_T < 0:
            raise ValueError("penalties must be non-negative")
        if not np.all(np.isfinite(self.demand)):
            raise ValueError("demand must be finite")

    @property
    def H(self) -> int:
        return self.demand.shape[-1]

    @property
    def k(self) -> int:
        return self.clusters.k


@dataclass(frozen=True)
class Layout:
    k: int
    H: int
    P_S: np.ndarray  # (k, H)
    P_l: np.ndarray  # (k, H)
    E: np.ndarray  # (k, H) for t = 1..H
    T: np.ndarray  # (k, H-1) for t = 2..H
    xi_E: np.ndarray  # (k, H)
    xi_T: np.ndarray  # (k, H)
    # T[1] = t1_const + t1_gain * P_l[0]
    t1_const: np.ndarray
    t1_gain: np.ndarray
    energy0: np.ndarray
    e0: np.ndarray
    rc: np.ndarray  # R_bar * C_bar

    def temperatures(self, x: np.ndarray) -> np.ndarray:
        """(k, H) predicted temperatures for t = 1..H."""
        out = np.empty((self.k, self.H))
        out[:, 0] = self.t1_const + self.t1_gain * x[self.P_l[:, 0]]
        if self.H > 1:
            out[:, 1:] = x[self.T]
        return out

    def energies(self, x: np.ndarray) -> np.ndarray:
        """(k, H+1) energies for t = 0..H."""
        return np.column_stack([self.energy0, x[self.E]])


def build_inter_cluster(inp: HorizonInput) -> ConicProblem:
    cs = inp.clusters
    k, H, dt = inp.k, inp.H, inp.dt
    b = ProblemBuilder()

    lam_scale = cs.n_members if inp.penalty_per_cell else np.ones(k)
    # conditioning hints: full-current power, its loss, energy moved over the horizon
    s_p = (cs.u * np.maximum(cs.i_max, -cs.i_min))[:, None]
    s_l = (cs.resistance * np.maximum(cs.i_max, -cs.i_min) ** 2)[:, None]
    P_S = b.var((k, H), "P_S", scale=s_p)
    P_l = b.var((k, H), "P_l", cost=1.0, scale=s_l)
    E = b.var((k, H), "E", scale=s_p * dt * H)
    T = b.var((k, max(H - 1, 0)), "T", scale=300.0)
    xi_E = b.var((k, H), "xi_E", lb=0.0, cost=np.repeat(inp.lambda_E * lam_scale, H).reshape(k, H))
    xi_T = b.var((k, H), "xi_T", lb=0.0, cost=np.repeat(inp.lambda_T * lam_scale, H).reshape(k, H))

    C, E0, R = cs.capacitance, cs.e0, cs.resistance
    e_meas = np.zeros(k) if inp.energy is None else np.asarray(inp.energy, dtype=float)
    tc = cs.thermal_capacitance
    a_th = 1.0 - dt / (tc * cs.r_conv)
    b_th = dt / tc
    c_th = dt * inp.t_env / (tc * cs.r_conv)
    t1_const = a_th * cs.temperature + c_th
    none = -np.ones(k, dtype=int)

    def t_expr(t):
        """(cols, coefs, const) of T[t] for t >= 1, one row per cluster."""
        if t == 1:
            return P_l[:, 0][:, None], b_th[:, None], t1_const
        return T[:, t - 2][:, None], np.ones((k, 1)), np.zeros(k)

    def e_expr(t):
        if t == 0:
            return none[:, None], np.zeros((k, 1)), e_meas
        return E[:, t - 1][:, None], np.ones((k, 1)), np.zeros(k)

    # the current bound scale sqrt(2/C (E + E0)) frozen at the measurement
    u_meas = np.sqrt(np.maximum(2.0 / C * (e_meas + E0), 0.0))
    if inp.exact_current:
        s_hi = b.var((k, H), "s_hi", lb=0.0, aux=True, scale=s_p)
        s_lo = b.var((k, H), "s_lo", lb=0.0, aux=True, scale=s_p)
        for t in range(H):
            ec, ek, e_c = e_expr(t)
            b.le(np.column_stack([P_S[:, t], s_hi[:, t]]), [[1.0, -1.0]], np.zeros(k), "current", counted=k)
            b.le(np.column_stack([P_S[:, t], s_lo[:, t]]), [[-1.0, -1.0]], np.zeros(k), "current", counted=k)
            for s, lim in ((s_hi, cs.i_max), (s_lo, -cs.i_min)):
                g = lim**2 / C
                b.rcone((ec, ek * g[:, None], g * (e_c + E0)), (none, 0.0, np.ones(k)), (s[:, t], 1.0, np.zeros(k)), "current-cone", counted=0)
    else:
        for t in range(H):
            b.le(P_S[:, t][:, None], [[1.0]], u_meas * cs.i_max, "current")
            b.le(P_S[:, t][:, None], [[-1.0]], -u_meas * cs.i_min, "current")

    t_min, t_max = cs.temp_limits
    e_lo = 0.5 * C * cs.u_qmin**2 - E0
    e_hi = 0.5 * C * cs.u_qmax**2 - E0
    for t in range(1, H + 1):
        cols, coefs, const = t_expr(t)
        b.le(cols, coefs, t_max - const, "temperature")
        b.le(cols, -coefs, const - t_min, "temperature")
        b.le(E[:, t - 1][:, None], [[1.0]], e_hi, "energy-window")
        b.le(E[:, t - 1][:, None], [[-1.0]], -e_lo, "energy-window")

    # balancing on eps = (2/C)(E + E0), the squared OCV, against the cluster mean
    dE = squared_voltage_bound(cs.alpha, cs.beta, np.broadcast_to(inp.dq_bar, (k,)))
    grouped = inp.groups is not None
    groups = inp.groups if grouped else np.zeros(k, dtype=int)
    G = int(groups.max()) + 1
    dense = not grouped and (inp.dense_mean if inp.dense_mean is not None else k <= DENSE_MEAN_MAX_K)
    g = 2.0 / C
    if not dense:
        mu = b.var((G, H), "mean_eps", aux=True, scale=10.0)
        tau = b.var((G, H), "mean_T", aux=True, scale=300.0)
    for t in range(1, H + 1):
        if dense:
            _balance_rows(b, k, E[:, t - 1], g, g * E0, dE, xi_E[:, t - 1], "balance-E")
            cols, coefs, const = t_expr(t)
            _balance_rows(b, k, cols[:, 0], coefs[:, 0], const, np.full(k, inp.dT_bar), xi_T[:, t - 1], "balance-T")
            continue
        _group_balance_rows(b, groups, E[:, t - 1], g, g * E0, dE, xi_E[:, t - 1], mu[:, t - 1], "balance-E")
        cols, coefs, const = t_expr(t)
        _group_balance_rows(b, groups, cols[:, 0], coefs[:, 0], const, np.full(k, inp.dT_bar), xi_T[:, t - 1], tau[:, t - 1], "balance-T")

    # loss cone 2 * (P_l / (R C)) * (E + E0) >= P_S^2
    rc = R * C
    for t in range(H):
        ec, ek, e_c = e_expr(t)
        b.rcone((P_l[:, t], 1.0 / rc, np.zeros(k)), (ec, ek, e_c + E0), (P_S[:, t], 1.0, np.zeros(k)), "loss")

    # energy dynamics E[t+1] - E[t] + dt P_S[t] = 0
    b.eq(np.column_stack([E[:, 0], P_S[:, 0]]), [[1.0, dt]], e_meas, "energy-dynamics")
    for t in range(1, H):
        b.eq(np.column_stack([E[:, t], E[:, t - 1], P_S[:, t]]), [[1.0, -1.0, dt]], np.zeros(k), "energy-dynamics")

    # thermal dynamics T[t+1] = a T[t] + b P_l[t] + c; t = 0 is the T[1] substitution
    b.count("thermal-dynamics", k)
    for t in range(1, H):
        cols, coefs, const = t_expr(t)
        row_cols = np.column_stack([T[:, t - 1], cols[:, 0], P_l[:, t]])
        row_coefs = np.column_stack([np.ones(k), -a_th * coefs[:, 0], -b_th])
        b.eq(row_cols, row_coefs, a_th * const + c_th, "thermal-dynamics")

    # supply-demand balance, one row per group and step
    pad = _group_index(groups)
    present = pad >= 0
    demand = inp.demand.reshape(G, H)
    for t in range(H):
        cols = np.column_stack([np.where(present, P_S[:, t][pad], -1), np.where(present, P_l[:, t][pad], -1)])
        coefs = np.column_stack([present * 1.0, present * -1.0])
        b.eq(cols, coefs, demand[:, t], "demand")

    b.count("folded-per-cluster", 5 * k)
    layout = Layout(k, H, P_S, P_l, E, T, xi_E, xi_T, t1_const, b_th, e_meas, E0, rc)
    return b.build(layout)


def _group_index(groups: np.ndarray) -> np.ndarray:
    """(G, max group size) member indices, padded with -1."""
    G = int(groups.max()) + 1
    sizes = np.bincount(groups, minlength=G)
    order = np.argsort(groups, kind="stable")
    pad = -np.ones((G, int(sizes.max())), dtype=int)
    pos = np.arange(len(groups)) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    pad[groups[order], pos] = order
    return pad


def _group_balance_rows(b: ProblemBuilder, groups, cols, coefs, const, bound, slack, mean_vars, tag):
    """|x_j - m_g(j)| <= bound_j + slack_j with one auxiliary mean m_g per group."""
    k = len(groups)
    pad = _group_index(groups)
    present = pad >= 0
    sizes = present.sum(axis=1)
    row_cols = np.column_stack([mean_vars, np.where(present, cols[pad], -1)])
    row_coefs = np.column_stack([sizes.astype(float), np.where(present, -coefs[pad], 0.0)])
    b.eq(row_cols, row_coefs, np.bincount(groups, weights=const), "aux-mean", counted=0)
    rc = np.column_stack([cols, mean_vars[groups], slack])
    for sign in (1.0, -1.0):
        cf = np.column_stack([sign * coefs, np.full(k, -sign), -np.ones(k)])
        b.le(rc, cf, bound - sign * const, tag, counted=0)
    b.count(tag, k)


def _balance_rows(b: ProblemBuilder, k, cols, coefs, const, bound, slack, tag):
    """|x_j - mean_l x_l| <= bound_j + slack_j with x_j = coefs_j * v[cols_j] + const_j.

    Stored as two inequalities per cluster, counted once; every row carries
    the full mean.
    """
    centered = np.eye(k) - 1.0 / k
    M = centered * coefs[None, :]
    shift = const - const.mean()
    rc = np.column_stack([np.broadcast_to(cols, (k, k)), slack])
    for sign in (1.0, -1.0):
        cf = np.column_stack([sign * M, -np.ones(k)])
        b.le(rc, cf, bound - sign * shift, tag, counted=0)
    b.count(tag, k)


def extract_first_step(solution: Solution, layout: Layout) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster (P_S*, P_l*) at t = 0."""
    if not solution.optimal:
        raise RuntimeError(f"no first step from a {solution.status} solve")
    x = solution.x
    return x[layout.P_S[:, 0]].copy(), x[layout.P_l[:, 0]].copy()


def relaxation_gap(solution: Solution, layout: Layout) -> np.ndarray:
    """(k, H) relative slack of the loss cone: 0 means the loss is exact."""
    x = solution.x
    ps, pl = x[layout.P_S], x[layout.P_l]
    e = layout.energies(x)[:, :-1] + layout.e0[:, None]
    lhs = 2.0 * pl * e
    rhs = layout.rc[:, None] * ps * ps
    return (lhs - rhs) / np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))


def slack_sums(solution: Solution, layout: Layout, step: int = 0) -> tuple[float, float]:
    """Sum over clusters of the energy and temperature slacks at horizon step ``step`` + 1."""
    x = solution.x
    return float(x[layout.xi_E[:, step]].sum()), float(x[layout.xi_T[:, step]].sum())
