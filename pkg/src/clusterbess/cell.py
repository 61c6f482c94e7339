"""Rint electrical model and lumped thermal model for a single cell.

Sign convention: positive current discharges the cell.  All step functions
are forward Euler so the plant advances exactly like the discrete optimizer
dynamics.  Functions that take a state accept numpy arrays as well, which the
simulator uses to advance a whole pack in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

AH = 3600.0  # coulombs per amp-hour


class DomainError(ValueError):
    """An input lies outside the domain where the model is defined."""


@dataclass(frozen=True)
class OcvSegment:
    q_lo: float
    q_hi: float
    alpha: float
    beta: float


@dataclass(frozen=True)
class OcvCurve:
    """Piecewise-linear open-circuit voltage, u(q) = alpha + beta * q per segment."""

    segments: tuple[OcvSegment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("OCV curve needs at least one segment")
        if abs(segs[0].q_lo) > 1e-12 or abs(segs[-1].q_hi - 1.0) > 1e-12:
            raise ValueError("OCV segments must cover [0, 1]")
        for a, b in zip(segs, segs[1:]):
            if abs(a.q_hi - b.q_lo) > 1e-12:
                raise ValueError(f"OCV segments leave a gap or overlap at q={a.q_hi}")
            ua = a.alpha + a.beta * a.q_hi
            ub = b.alpha + b.beta * b.q_lo
            if abs(ua - ub) > 1e-9:
                raise ValueError(f"OCV discontinuous at q={a.q_hi}: {ua} vs {ub}")
        for s in segs:
            if not s.q_lo < s.q_hi:
                raise ValueError("each OCV segment needs q_lo < q_hi")
            if not s.beta > 0:
                raise ValueError("OCV slope must be positive in every segment")

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> OcvCurve:
        return cls(tuple(OcvSegment(*map(float, r)) for r in rows))

    @property
    def breaks(self) -> np.ndarray:
        return np.array([s.q_lo for s in self.segments])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([s.alpha for s in self.segments])

    @property
    def betas(self) -> np.ndarray:
        return np.array([s.beta for s in self.segments])

    def segment_index(self, q):
        """Index of the segment containing q; at a join, the upper segment."""
        idx = np.searchsorted(self.breaks, q, side="right") - 1
        return np.clip(idx, 0, len(self.segments) - 1)

    def rows(self) -> list[list[float]]:
        return [[s.q_lo, s.q_hi, s.alpha, s.beta] for s in self.segments]


def default_ocv() -> OcvCurve:
    """Three-segment 3.0-4.2 V curve used when no characterization is supplied."""
    return OcvCurve.from_rows(
        [
            (0.0, 0.1, 3.0, 5.0),
            (0.1, 0.9, 3.425, 0.75),
            (0.9, 1.0, 3.2, 1.0),
        ]
    )


@dataclass(frozen=True)
class CellParams:
    capacity: float = 2.5 * AH
    resistance: float = 31.3e-3
    converter_resistance: float = 10e-3
    mass: float = 0.0438
    area: float = 0.0042
    heat_transfer: float = 5.8
    specific_heat: float = 918.49
    ocv: OcvCurve = field(default_factory=default_ocv)
    soc_limits: tuple[float, float] = (0.05, 0.95)
    current_limits: tuple[float, float] = (-7.5, 7.5)
    temp_limits: tuple[float, float] = (273.15, 323.15)

    def __post_init__(self):
        for name in ("capacity", "resistance", "mass", "area", "heat_transfer", "specific_heat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.converter_resistance < 0:
            raise ValueError("converter_resistance must be non-negative")
        i_min, i_max = self.current_limits
        if not i_min < 0 < i_max:
            raise ValueError("current limits must straddle zero")
        q_min, q_max = self.soc_limits
        if not 0 <= q_min < q_max <= 1:
            raise ValueError("SoC limits must satisfy 0 <= q_min < q_max <= 1")
        t_min, t_max = self.temp_limits
        if not 0 < t_min < t_max:
            raise ValueError("temperature limits must satisfy 0 < T_min < T_max")

    @property
    def r_conv(self) -> float:
        return 1.0 / (self.heat_transfer * self.area)

    @property
    def r_total(self) -> float:
        return self.resistance + self.converter_resistance

    @property
    def thermal_capacitance(self) -> float:
        return self.mass * self.specific_heat

    def with_resistance(self, r: float) -> CellParams:
        return replace(self, resistance=float(r))


@dataclass(frozen=True)
class CellState:
    soc: float
    temperature: float
    saturated: bool = False

    def __post_init__(self):
        if not 0.0 <= self.soc <= 1.0:
            raise DomainError(f"SoC {self.soc} outside [0, 1]")
        if not self.temperature > 0:
            raise DomainError("temperature must be positive (kelvin)")


def ocv(curve: OcvCurve, q):
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr < 0.0) or np.any(q_arr > 1.0) or np.any(np.isnan(q_arr)):
        raise DomainError(f"SoC outside [0, 1]: {q}")
    idx = curve.segment_index(q_arr)
    u = curve.alphas[idx] + curve.betas[idx] * q_arr
    return float(u) if u.ndim == 0 else u


def electrical_step(state: CellState, params: CellParams, i_load: float, dt: float) -> CellState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = state.soc - i_load / params.capacity * dt
    saturated = q < 0.0 or q > 1.0
    return CellState(min(max(q, 0.0), 1.0), state.temperature, saturated)


def terminal_voltage(params: CellParams, state: CellState, i_load: float) -> float:
    return ocv(params.ocv, state.soc) - params.resistance * i_load


@dataclass(frozen=True)
class ModulePower:
    output: float
    internal: float
    loss: float


def module_output_power(params: CellParams, state: CellState, i_load: float) -> ModulePower:
    u = ocv(params.ocv, state.soc)
    internal = u * i_load
    loss = params.r_total * i_load * i_load
    return ModulePower(internal - loss, internal, loss)


def thermal_step(state: CellState, params: CellParams, i_load: float, t_env: float, dt: float) -> CellState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    # heat source is the cell's own R*i^2; converter loss does not heat the cell
    heat = params.resistance * i_load * i_load
    dT = dt / params.thermal_capacitance * (heat - (state.temperature - t_env) / params.r_conv)
    return CellState(state.soc, state.temperature + dT, state.saturated)


@dataclass(frozen=True)
class CellEnergy:
    energy: float
    capacitance: float
    e0: float


def cell_energy(params: CellParams, q: float, q_initial: float) -> CellEnergy:
    """Energy of the cell relative to its state at ``q_initial``.

    Uses C = Q / beta of the segment containing ``q``; the expression is only
    exact while ``q`` and ``q_initial`` share a segment (see EnergyTracker).
    """
    idx = int(params.ocv.segment_index(q))
    beta = params.ocv.segments[idx].beta
    c = params.capacity / beta
    e0 = 0.5 * c * ocv(params.ocv, q_initial) ** 2
    return CellEnergy(0.5 * c * ocv(params.ocv, q) ** 2 - e0, c, e0)


class EnergyTracker:
    """Keeps a cell's relative energy continuous across OCV segment changes.

    Within a segment E(q) = C/2 * u(q)^2 - E0 with C = Q / beta.  When the SoC
    moves to a different segment, C changes and E0 is re-based so that E at
    the crossing point is unchanged.
    """

    def __init__(self, params: CellParams, q_initial: float):
        self.params = params
        self.segment = int(params.ocv.segment_index(q_initial))
        self.offset = 0.0
        self.e0 = 0.5 * self._c(self.segment) * ocv(params.ocv, q_initial) ** 2

    def _c(self, seg: int) -> float:
        return self.params.capacity / self.params.ocv.segments[seg].beta

    def _raw(self, seg: int, q: float) -> float:
        s = self.params.ocv.segments[seg]
        return 0.5 * self._c(seg) * (s.alpha + s.beta * q) ** 2

    def update(self, q: float) -> float:
        seg = int(self.params.ocv.segment_index(q))
        while seg != self.segment:
            step = 1 if seg > self.segment else -1
            s = self.params.ocv.segments[self.segment]
            joint = s.q_hi if step > 0 else s.q_lo
            before = self._raw(self.segment, joint) - self.e0 + self.offset
            self.segment += step
            self.offset = before - (self._raw(self.segment, joint) - self.e0)
        return self._raw(self.segment, q) - self.e0 + self.offset

    @property
    def capacitance(self) -> float:
        return self._c(self.segment)


def quadratic_current(u, r, p):
    """Current giving module output ``p`` = u*i - r*i^2, on the low-current root.

    Demands beyond the module's maximum output u^2/(4r) return the current at
    that maximum.
    """
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    disc = np.maximum(u * u - 4.0 * r * p, 0.0)
    return 2.0 * p / (u + np.sqrt(disc))


def relaxation_decay(params: CellParams, dt: float) -> float:
    return 1.0 - dt / (params.thermal_capacitance * params.r_conv)
