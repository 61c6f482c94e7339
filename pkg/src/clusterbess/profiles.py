"""Load profiles: CSV ingestion, drive-cycle synthesis, and the bundled reference."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

REFERENCE_SEED = 2024
REFERENCE_DURATION = 2400.0
REFERENCE_PEAKS = (6000.0, 10000.0)  # charge, discharge


class ProfileError(ValueError):
    """A load profile file is malformed."""


@dataclass(frozen=True)
class LoadProfile:
    time: np.ndarray
    power: np.ndarray
    dt: float

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if t.shape != p.shape or t.ndim != 1 or t.size == 0:
            raise ProfileError("time and power must be equal-length 1-D series")
        if t.size > 1:
            steps = np.diff(t)
            if np.any(steps <= 0):
                raise ProfileError("time must be strictly increasing")
            if np.max(np.abs(steps - self.dt)) > 1e-9:
                raise ProfileError(f"samples are not uniformly spaced at dt={self.dt}")
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "power", p)

    def __len__(self) -> int:
        return len(self.power)

    def window(self, start: int, length: int) -> np.ndarray:
        """Demand for steps start..start+length-1, holding the last sample past the end."""
        idx = np.minimum(np.arange(start, start + length), len(self.power) - 1)
        return self.power[idx]


def load_profile_csv(path, dt: float = 1.0) -> LoadProfile:
    """Read a ``t,p_out`` CSV, resampling linearly onto a ``dt`` grid when needed."""
    path = Path(path)
    if not dt > 0:
        raise ProfileError("dt must be positive")
    try:
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["t", "p_out"]:
        raise ProfileError(f"{path}:1: header must be 't,p_out'")
    t, p = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ProfileError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
        try:
            t.append(float(row[0]))
            p.append(float(row[1]))
        except ValueError:
            raise ProfileError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
        if len(t) > 1 and t[-1] <= t[-2]:
            raise ProfileError(f"{path}:{lineno}: time {t[-1]} does not increase")
    if not t:
        raise ProfileError(f"{path}: no samples")
    t_arr, p_arr = np.array(t), np.array(p)
    if len(t_arr) > 1 and np.max(np.abs(np.diff(t_arr) - dt)) > 1e-9:
        n = int(np.floor((t_arr[-1] - t_arr[0]) / dt + 1e-9)) + 1
        grid = t_arr[0] + dt * np.arange(n)
        return LoadProfile(grid, np.interp(grid, t_arr, p_arr), dt)
    return LoadProfile(t_arr, p_arr, dt)


def write_profile_csv(profile: LoadProfile, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("t,p_out\n")
        for t, p in zip(profile.time, profile.power):
            fh.write(f"{t:.17g},{p:.17g}\n")


def synth_udds_like(
    duration: float = REFERENCE_DURATION,
    peak_charge: float = REFERENCE_PEAKS[0],
    peak_discharge: float = REFERENCE_PEAKS[1],
    dt: float = 1.0,
    seed: int = 0,
) -> LoadProfile:
    """Urban stop-and-go demand built from idle, accelerate, cruise and brake phases.

    Positive samples are scaled so the maximum equals ``peak_discharge`` and
    negative samples so the minimum equals ``-peak_charge``; idle stays at zero.
    """
    if not (peak_charge > 0 and peak_discharge > 0):
        raise ValueError("peaks must be positive")
    n = int(round(duration / dt))
    if n < 1 or abs(n * dt - duration) > 1e-9:
        raise ValueError("duration must be a positive multiple of dt")
    rng = np.random.default_rng(seed)
    out: list[np.ndarray] = []
    total = 0

    def phase(seconds):
        return max(1, int(round(seconds / dt)))

    while total < n:
        idle = np.zeros(phase(rng.uniform(5, 35)))
        m = phase(rng.uniform(8, 25))
        top = rng.uniform(0.45, 1.0)
        accel = top * np.sin(np.linspace(0, np.pi / 2, m)) ** 0.7
        m = phase(rng.uniform(20, 110))
        level = rng.uniform(0.12, 0.4)
        wobble = np.convolve(rng.normal(0, 0.04, m + 8), np.ones(9) / 9, mode="valid")[:m]
        cruise = np.maximum(level + wobble, 0.02)
        m = phase(rng.uniform(6, 18))
        depth = rng.uniform(0.3, 1.0)
        brake = -depth * np.sin(np.linspace(0, np.pi, m + 2)[1:-1])
        for seg in (idle, accel, cruise, brake):
            out.append(seg)
            total += len(seg)
    raw = np.concatenate(out)[:n]
    # force at least one sample of each sign so both peaks are reachable
    if raw.max() <= 0:
        raw[np.argmax(raw)] = 1.0
    if raw.min() >= 0:
        raw[np.argmin(raw)] = -1.0
    power = np.where(raw > 0, raw / raw.max() * peak_discharge, raw / -raw.min() * peak_charge)
    power[np.argmax(raw)] = peak_discharge
    power[np.argmin(raw)] = -peak_charge
    return LoadProfile(dt * np.arange(n), power, dt)


def reference_profile() -> LoadProfile:
    """The fixed 2,400 s reference cycle shipped with the package."""
    ref = resources.files("clusterbess").joinpath("data/reference_profile.csv")
    with resources.as_file(ref) as path:
        return load_profile_csv(path, 1.0)
