"""Cluster-to-cell power split schemes and the power-to-current conversion."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .aggregate import singleton_set
from .cell import DomainError
from .conic import DEFAULT_TOL, solve
from .dispatch import HorizonInput, build_inter_cluster
from .pack import Pack, PackState

log = logging.getLogger(__name__)

SCHEMES = ("equal", "resistance", "optimal")


@dataclass(frozen=True)
class SplitResult:
    power: np.ndarray  # internal power P_b per member
    current: np.ndarray
    scheme: str
    clamped: np.ndarray
    fallback: bool = False


def split_equal(p_star: float, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("cluster must have at least one cell")
    return np.full(n, p_star / n)


def split_resistance(p_star: float, resistances) -> np.ndarray:
    """Shares proportional to 1/R."""
    r = np.asarray(resistances, dtype=float)
    if r.size == 0 or np.any(r <= 0):
        raise ValueError("resistances must be positive")
    g = 1.0 / r
    return g / g.sum() * p_star


@dataclass(frozen=True)
class IntraBounds:
    dq: float = 0.005
    dT: float = 0.5
    lambda_E: float = 20.0
    lambda_T: float = 2.0


def split_optimal(
    pack: Pack,
    state: PackState,
    members,
    p_star: float,
    p_loss_star: float,
    bounds: IntraBounds = IntraBounds(),
    dt: float = 1.0,
    t_env: float = 298.0,
    tol: float = DEFAULT_TOL,
    resistance_with_converter: bool = False,
) -> tuple[np.ndarray, bool]:
    """Per-cell loss-minimizing split with cell balancing; returns (P_b, fell_back).

    The member program is the one-step dispatch program over singleton models
    with supply P_S* - P_l*.  A failed solve falls back to the resistance split.
    """
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ValueError("cluster must have at least one cell")
    sub = pack.subset(members)
    sub_state = PackState(state.soc[members], state.temperature[members])
    inp = HorizonInput(
        singleton_set(sub, sub_state),
        demand=[p_star - p_loss_star],
        dt=dt,
        t_env=t_env,
        dq_bar=bounds.dq,
        dT_bar=bounds.dT,
        lambda_E=bounds.lambda_E,
        lambda_T=bounds.lambda_T,
    )
    problem = build_inter_cluster(inp)
    sol = solve(problem, tol=tol)
    if sol.optimal:
        return sol.x[problem.layout.P_S[:, 0]].copy(), False
    log.warning("intra-cluster solve %s for %d cells; using resistance split", sol.status, members.size)
    r = sub.r_total if resistance_with_converter else sub.resistance
    return split_resistance(p_star, r), True


def split_optimal_all(
    pack: Pack,
    state: PackState,
    labels,
    p_star,
    p_loss_star,
    bounds: IntraBounds = IntraBounds(),
    dt: float = 1.0,
    t_env: float = 298.0,
    tol: float = DEFAULT_TOL,
    resistance_with_converter: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal split for every cluster at once; returns (P_b per cell, fell_back per cluster).

    The per-cluster member programs are independent, so they are stacked into
    one block-separable solve.  Singleton clusters take their cluster power
    directly.  If the stacked solve fails each cluster is solved on its own.
    """
    labels = np.asarray(labels, dtype=int)
    p_star = np.asarray(p_star, dtype=float)
    p_loss_star = np.asarray(p_loss_star, dtype=float)
    k = len(p_star)
    sizes = np.bincount(labels, minlength=k)
    power = np.empty(pack.n)
    fell_back = np.zeros(k, dtype=bool)
    single = sizes[labels] == 1
    power[single] = p_star[labels[single]]
    multi = np.flatnonzero(sizes > 1)
    if multi.size == 0:
        return power, fell_back
    cells = np.flatnonzero(~single)
    remap = -np.ones(k, dtype=int)
    remap[multi] = np.arange(multi.size)
    sub = pack.subset(cells)
    sub_state = PackState(state.soc[cells], state.temperature[cells])
    inp = HorizonInput(
        singleton_set(sub, sub_state),
        demand=(p_star[multi] - p_loss_star[multi])[:, None],
        dt=dt,
        t_env=t_env,
        dq_bar=bounds.dq,
        dT_bar=bounds.dT,
        lambda_E=bounds.lambda_E,
        lambda_T=bounds.lambda_T,
        groups=remap[labels[cells]],
    )
    problem = build_inter_cluster(inp)
    sol = solve(problem, tol=tol)
    if sol.optimal:
        power[cells] = sol.x[problem.layout.P_S[:, 0]]
        return power, fell_back
    log.warning("stacked intra-cluster solve %s; solving clusters one by one", sol.status)
    for j in multi:
        idx = np.flatnonzero(labels == j)
        power[idx], fell_back[j] = split_optimal(
            pack, state, idx, p_star[j], p_loss_star[j], bounds, dt, t_env, tol, resistance_with_converter
        )
    return power, fell_back


def power_to_current(u, p_b, current_limits) -> tuple[np.ndarray, np.ndarray]:
    """i = P_b / u clamped to the current limits; returns (current, clamped)."""
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0):
        raise DomainError("OCV must be positive to convert power to current")
    i = np.asarray(p_b, dtype=float) / u
    lo, hi = current_limits
    clamped = (i < lo) | (i > hi)
    return np.clip(i, lo, hi), clamped


def member_losses(pack: Pack, members, current) -> np.ndarray:
    return pack.r_total[np.asarray(members)] * np.asarray(current) ** 2
