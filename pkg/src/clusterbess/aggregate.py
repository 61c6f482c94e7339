"""Virtual-parallel aggregation of member cells into cluster models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .cell import DomainError, OcvCurve, OcvSegment
from .pack import Pack, PackState


@dataclass(frozen=True)
class ClusterModel:
    """Electro-thermal surrogate of one cell group."""

    members: np.ndarray
    capacity: float  # Q_bar, C
    i_min: float
    i_max: float
    resistance: float  # R_bar, parallel equivalent including R_C
    breaks: np.ndarray
    alpha: np.ndarray  # per-segment mean intercepts
    beta: np.ndarray  # per-segment mean slopes
    mass: float
    specific_heat: float
    r_conv: float
    soc: float  # capacity-weighted mean
    temperature: float  # unweighted mean
    u_weighted: float  # conductance-weighted mean of member OCVs
    soc_limits: tuple[float, float]
    temp_limits: tuple[float, float]

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def ocv_curve(self) -> OcvCurve:
        hi = list(self.breaks[1:]) + [1.0]
        return OcvCurve(
            tuple(OcvSegment(float(a), float(b), float(al), float(be)) for a, b, al, be in zip(self.breaks, hi, self.alpha, self.beta))
        )

    def segment(self, q) -> np.ndarray:
        return np.clip(np.searchsorted(self.breaks, q, side="right") - 1, 0, len(self.breaks) - 1)

    @property
    def active_alpha(self) -> float:
        return float(self.alpha[self.segment(self.soc)])

    @property
    def active_beta(self) -> float:
        return float(self.beta[self.segment(self.soc)])

    @property
    def capacitance(self) -> float:
        """C_bar = Q_bar / beta_bar of the segment holding the current SoC."""
        return self.capacity / self.active_beta

    @property
    def e0(self) -> float:
        return 0.5 * self.capacitance * cluster_ocv(self, self.soc) ** 2

    @property
    def thermal_capacitance(self) -> float:
        return self.mass * self.specific_heat


def cluster_ocv(model: ClusterModel, q):
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr < 0.0) or np.any(q_arr > 1.0) or np.any(np.isnan(q_arr)):
        raise DomainError(f"cluster SoC outside [0, 1]: {q}")
    seg = model.segment(q_arr)
    u = model.alpha[seg] + model.beta[seg] * q_arr
    return float(u) if u.ndim == 0 else u


def aggregate(pack: Pack, state: PackState, members) -> ClusterModel:
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ValueError("cluster needs at least one member")
    g = np.reciprocal(pack.r_total[members])
    u = pack.ocv_of(members, state.soc[members])
    cap = pack.capacity[members]
    return ClusterModel(
        members=members,
        capacity=float(cap.sum()),
        i_min=pack.current_limits[0] * len(members),
        i_max=pack.current_limits[1] * len(members),
        resistance=float(1.0 / g.sum()),
        breaks=pack.breaks,
        alpha=pack.alpha[members].mean(axis=0),
        beta=pack.beta[members].mean(axis=0),
        mass=float(pack.mass[members].sum()),
        specific_heat=pack.specific_heat,
        r_conv=float(1.0 / (pack.heat_transfer * pack.area[members].sum())),
        soc=float(np.dot(cap, state.soc[members]) / cap.sum()),
        temperature=float(state.temperature[members].mean()),
        u_weighted=float(np.dot(g, u) / g.sum()),
        soc_limits=pack.soc_limits,
        temp_limits=pack.temp_limits,
    )


@dataclass
class ClusterSet:
    """Array view of k cluster models, the form the dispatch builder consumes."""

    models: list[ClusterModel]
    capacity: np.ndarray
    resistance: np.ndarray
    capacitance: np.ndarray
    e0: np.ndarray
    u: np.ndarray  # cluster OCV at the current SoC
    alpha: np.ndarray  # active-segment coefficients
    beta: np.ndarray
    i_min: np.ndarray
    i_max: np.ndarray
    thermal_capacitance: np.ndarray
    r_conv: np.ndarray
    soc: np.ndarray
    temperature: np.ndarray
    u_qmin: np.ndarray  # cluster OCV at the SoC limits
    u_qmax: np.ndarray
    n_members: np.ndarray
    temp_limits: tuple[float, float]

    @property
    def k(self) -> int:
        return len(self.models)

    @classmethod
    def from_models(cls, models: list[ClusterModel]) -> ClusterSet:
        if not models:
            raise ValueError("need at least one cluster")

        def arr(f):
            return np.array([f(m) for m in models], dtype=float)

        return cls(
            models=list(models),
            capacity=arr(lambda m: m.capacity),
            resistance=arr(lambda m: m.resistance),
            capacitance=arr(lambda m: m.capacitance),
            e0=arr(lambda m: m.e0),
            u=arr(lambda m: cluster_ocv(m, m.soc)),
            alpha=arr(lambda m: m.active_alpha),
            beta=arr(lambda m: m.active_beta),
            i_min=arr(lambda m: m.i_min),
            i_max=arr(lambda m: m.i_max),
            thermal_capacitance=arr(lambda m: m.thermal_capacitance),
            r_conv=arr(lambda m: m.r_conv),
            soc=arr(lambda m: m.soc),
            temperature=arr(lambda m: m.temperature),
            u_qmin=arr(lambda m: cluster_ocv(m, m.soc_limits[0])),
            u_qmax=arr(lambda m: cluster_ocv(m, m.soc_limits[1])),
            n_members=arr(lambda m: m.n),
            temp_limits=models[0].temp_limits,
        )


def aggregate_all(pack: Pack, state: PackState, labels, k: int | None = None) -> ClusterSet:
    """Aggregate every cluster of a labelling; cluster j holds cells with label j."""
    labels = np.asarray(labels, dtype=int)
    k = int(labels.max()) + 1 if k is None else k
    if k == pack.n and np.array_equal(labels, np.arange(pack.n)):
        return singleton_set(pack, state)
    order = np.argsort(labels, kind="stable")
    splits = np.searchsorted(labels[order], np.arange(1, k))
    return ClusterSet.from_models([aggregate(pack, state, idx) for idx in np.split(order, splits)])


def singleton_set(pack: Pack, state: PackState) -> ClusterSet:
    """Every cell its own cluster, built without per-cell Python loops."""
    q = state.soc
    rows = np.arange(pack.n)
    seg = pack.segment(q)
    alpha, beta = pack.alpha[rows, seg], pack.beta[rows, seg]
    u = alpha + beta * q
    cap_c = pack.capacity / beta

    def ocv_at(qq):
        s = pack.segment(np.full(pack.n, qq))
        return pack.alpha[rows, s] + pack.beta[rows, s] * qq

    members = [np.array([i]) for i in rows]
    lazy = _LazyModels(pack, state, members)
    return ClusterSet(
        models=lazy,
        capacity=pack.capacity.copy(),
        resistance=pack.r_total.copy(),
        capacitance=cap_c,
        e0=0.5 * cap_c * u * u,
        u=u,
        alpha=alpha,
        beta=beta,
        i_min=np.full(pack.n, pack.current_limits[0]),
        i_max=np.full(pack.n, pack.current_limits[1]),
        thermal_capacitance=pack.thermal_capacitance.copy(),
        r_conv=pack.r_conv.copy(),
        soc=q.copy(),
        temperature=state.temperature.copy(),
        u_qmin=ocv_at(pack.soc_limits[0]),
        u_qmax=ocv_at(pack.soc_limits[1]),
        n_members=np.ones(pack.n),
        temp_limits=pack.temp_limits,
    )


class _LazyModels(list):
    """List of singleton ClusterModels materialized on first access."""

    def __init__(self, pack, state, members):
        super().__init__([None] * len(members))
        self._pack, self._state, self._members = pack, state, members

    def __getitem__(self, j):
        if isinstance(j, slice):
            return [self[i] for i in range(*j.indices(len(self)))]
        m = super().__getitem__(j)
        if m is None:
            m = aggregate(self._pack, self._state, self._members[j])
            super().__setitem__(j, m)
        return m

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def soc_energy_maps(model: ClusterModel) -> tuple[Callable, Callable]:
    """(E(q), q(E)) on the active segment, E relative to the model's current SoC."""
    c, e0 = model.capacitance, model.e0
    a, b = model.active_alpha, model.active_beta

    def energy_from_soc(q):
        return 0.5 * c * cluster_ocv(model, q) ** 2 - e0

    def soc_from_energy(e):
        total = np.asarray(e, dtype=float) + e0
        if np.any(total < 0):
            raise DomainError("E + E0 must be non-negative")
        q = (np.sqrt(2.0 * total / c) - a) / b
        return float(q) if np.ndim(q) == 0 else q

    return energy_from_soc, soc_from_energy


def delta_E_bound(model: ClusterModel, dq: float):
    """Squared-voltage image of an SoC bound on the model's active segment."""
    return squared_voltage_bound(model.active_alpha, model.active_beta, dq)


def squared_voltage_bound(alpha, beta, dq):
    """(alpha + beta*dq)^2 - alpha^2, elementwise."""
    dq = np.asarray(dq, dtype=float)
    if np.any(dq < 0):
        raise ValueError("dq must be non-negative")
    out = (alpha + beta * dq) ** 2 - alpha**2
    return float(out) if np.ndim(out) == 0 else out
