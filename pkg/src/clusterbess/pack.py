"""Array form of many cells, so the plant advances a whole pack per call."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cell import CellParams, DomainError, OcvCurve, OcvSegment, quadratic_current


@dataclass
class Pack:
    """Per-cell parameters as arrays.  Cells share OCV breakpoints."""

    capacity: np.ndarray
    resistance: np.ndarray
    converter_resistance: float
    mass: np.ndarray
    area: np.ndarray
    heat_transfer: float
    specific_heat: float
    breaks: np.ndarray  # (s,) segment lower edges
    alpha: np.ndarray  # (n, s)
    beta: np.ndarray  # (n, s)
    soc_limits: tuple[float, float]
    current_limits: tuple[float, float]
    temp_limits: tuple[float, float]

    @property
    def n(self) -> int:
        return len(self.capacity)

    @classmethod
    def from_cells(cls, cells: Sequence[CellParams]) -> Pack:
        if not cells:
            raise ValueError("pack needs at least one cell")
        first = cells[0]
        breaks = first.ocv.breaks
        for c in cells:
            if c.ocv.breaks.shape != breaks.shape or np.any(c.ocv.breaks != breaks):
                raise ValueError("cells in a pack must share OCV breakpoints")
            if (
                c.converter_resistance != first.converter_resistance
                or c.heat_transfer != first.heat_transfer
                or c.specific_heat != first.specific_heat
                or c.soc_limits != first.soc_limits
                or c.current_limits != first.current_limits
                or c.temp_limits != first.temp_limits
            ):
                raise ValueError("cells in a pack must share R_C, h, C_th and limits")
        return cls(
            capacity=np.array([c.capacity for c in cells]),
            resistance=np.array([c.resistance for c in cells]),
            converter_resistance=first.converter_resistance,
            mass=np.array([c.mass for c in cells]),
            area=np.array([c.area for c in cells]),
            heat_transfer=first.heat_transfer,
            specific_heat=first.specific_heat,
            breaks=breaks,
            alpha=np.array([c.ocv.alphas for c in cells]),
            beta=np.array([c.ocv.betas for c in cells]),
            soc_limits=first.soc_limits,
            current_limits=first.current_limits,
            temp_limits=first.temp_limits,
        )

    def cell(self, i: int) -> CellParams:
        hi = list(self.breaks[1:]) + [1.0]
        curve = OcvCurve(
            tuple(
                OcvSegment(float(lo), float(h), float(a), float(b))
                for lo, h, a, b in zip(self.breaks, hi, self.alpha[i], self.beta[i])
            )
        )
        return CellParams(
            capacity=float(self.capacity[i]),
            resistance=float(self.resistance[i]),
            converter_resistance=self.converter_resistance,
            mass=float(self.mass[i]),
            area=float(self.area[i]),
            heat_transfer=self.heat_transfer,
            specific_heat=self.specific_heat,
            ocv=curve,
            soc_limits=self.soc_limits,
            current_limits=self.current_limits,
            temp_limits=self.temp_limits,
        )

    def subset(self, idx) -> Pack:
        idx = np.asarray(idx)
        return replace(
            self,
            capacity=self.capacity[idx],
            resistance=self.resistance[idx],
            mass=self.mass[idx],
            area=self.area[idx],
            alpha=self.alpha[idx],
            beta=self.beta[idx],
        )

    @property
    def r_total(self) -> np.ndarray:
        return self.resistance + self.converter_resistance

    @property
    def r_conv(self) -> np.ndarray:
        return 1.0 / (self.heat_transfer * self.area)

    @property
    def thermal_capacitance(self) -> np.ndarray:
        return self.mass * self.specific_heat

    def segment(self, q: np.ndarray) -> np.ndarray:
        return np.clip(np.searchsorted(self.breaks, q, side="right") - 1, 0, len(self.breaks) - 1)

    def ocv(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if np.any(q < 0.0) or np.any(q > 1.0):
            raise DomainError("SoC outside [0, 1]")
        seg = self.segment(q)
        rows = np.arange(self.n)
        return self.alpha[rows, seg] + self.beta[rows, seg] * q

    def ocv_of(self, idx, q) -> np.ndarray:
        """OCV of cells ``idx`` at SoC ``q`` (same length as idx)."""
        idx = np.asarray(idx)
        q = np.asarray(q, dtype=float)
        if np.any(q < 0.0) or np.any(q > 1.0):
            raise DomainError("SoC outside [0, 1]")
        seg = self.segment(q)
        return self.alpha[idx, seg] + self.beta[idx, seg] * q

    def active_coefficients(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        seg = self.segment(q)
        rows = np.arange(self.n)
        return self.alpha[rows, seg], self.beta[rows, seg]


@dataclass
class PackState:
    soc: np.ndarray
    temperature: np.ndarray

    def copy(self) -> PackState:
        return PackState(self.soc.copy(), self.temperature.copy())


@dataclass
class StepResult:
    state: PackState
    output: np.ndarray  # per-module output power, W
    loss: np.ndarray  # (R + R_C) i^2, W
    saturated: np.ndarray  # SoC clipped to [0, 1]


def advance(pack: Pack, state: PackState, current: np.ndarray, t_env: float, dt: float) -> StepResult:
    """One forward-Euler step of every cell's electrical and thermal model."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = pack.ocv(state.soc)
    q = state.soc - current / pack.capacity * dt
    saturated = (q < 0.0) | (q > 1.0)
    q = np.clip(q, 0.0, 1.0)
    heat = pack.resistance * current * current
    T = state.temperature + dt / pack.thermal_capacitance * (heat - (state.temperature - t_env) / pack.r_conv)
    loss = pack.r_total * current * current
    return StepResult(PackState(q, T), u * current - loss, loss, saturated)


def uniform_currents(pack: Pack, state: PackState, p_out: float) -> np.ndarray:
    """Currents that make every module deliver p_out / n."""
    u = pack.ocv(state.soc)
    return quadratic_current(u, pack.r_total, np.full(pack.n, p_out / pack.n))


def table2_population(
    n: int,
    seed: int,
    soc_range=(0.70, 0.75),
    temp_range=(301.0, 305.0),
    resistance_range=(31.3e-3, 41.3e-3),
    base: CellParams | None = None,
) -> tuple[Pack, PackState]:
    """Heterogeneous population drawn uniformly as in the 400-cell study."""
    base = base or CellParams()
    rng = np.random.default_rng(seed)
    soc = rng.uniform(*soc_range, size=n)
    temp = rng.uniform(*temp_range, size=n)
    res = rng.uniform(*resistance_range, size=n)
    pack = Pack.from_cells([base.with_resistance(r) for r in res])
    return pack, PackState(soc, temp)
