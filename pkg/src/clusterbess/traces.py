"""Trace, timing and report serialization.

``trace.csv`` holds one row per control step in the fixed column order of
:data:`TRACE_COLUMNS`.  Floats use 17 significant digits so a re-parse is
exact and two runs with equal seeds produce byte-identical files.  Wall-clock
solver time is the only nondeterministic metric; it lives in a separate
``timing.csv`` with columns ``time,solver_time``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .sim import METRIC_FIELDS, SimTrace, StepMetrics

SCHEMA_VERSION = 1
TRACE_COLUMNS = tuple(name for name in METRIC_FIELDS if name != "solver_time")
TIMING_COLUMNS = ("time", "solver_time")
_TYPES = {f.name: f.type for f in fields(StepMetrics)}


class TraceFormatError(ValueError):
    """A trace or report file does not match the documented schema."""


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _parse(name: str, text: str):
    kind = _TYPES[name]
    if kind == "bool":
        if text not in ("0", "1"):
            raise ValueError(f"expected 0 or 1, got {text!r}")
        return text == "1"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def _open(path: Path, mode: str):
    try:
        return path.open(mode, newline="")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def write_trace_csv(trace: SimTrace, path) -> None:
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for m in trace.steps:
            fh.write(",".join(_fmt(getattr(m, c)) for c in TRACE_COLUMNS) + "\n")


def write_timing_csv(trace: SimTrace, path) -> None:
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        fh.write(",".join(TIMING_COLUMNS) + "\n")
        for m in trace.steps:
            fh.write(f"{_fmt(m.time)},{_fmt(m.solver_time)}\n")


def read_trace_csv(path, timing_path=None) -> SimTrace:
    """Parse a trace file; solver times come from ``timing_path`` or are NaN."""
    path = Path(path)
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != f"# schema_version: {SCHEMA_VERSION}":
        raise TraceFormatError(f"{path}:1: expected '# schema_version: {SCHEMA_VERSION}'")
    if len(lines) < 2 or tuple(lines[1].split(",")) != TRACE_COLUMNS:
        raise TraceFormatError(f"{path}:2: header does not match the trace schema")
    times = {}
    if timing_path is not None:
        timing_path = Path(timing_path)
        with _open(timing_path, "r") as fh:
            rows = list(csv.reader(line for line in fh if not line.startswith("#")))
        if not rows or tuple(rows[0]) != TIMING_COLUMNS:
            raise TraceFormatError(f"{timing_path}: header does not match the timing schema")
        times = {float(t): float(s) for t, s in rows[1:]}
    trace = SimTrace()
    for lineno, line in enumerate(lines[2:], start=3):
        cells = line.split(",")
        if len(cells) != len(TRACE_COLUMNS):
            raise TraceFormatError(f"{path}:{lineno}: expected {len(TRACE_COLUMNS)} fields, got {len(cells)}")
        try:
            values = {c: _parse(c, v) for c, v in zip(TRACE_COLUMNS, cells)}
        except ValueError as exc:
            raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
        values["solver_time"] = times.get(values["time"], math.nan)
        trace.steps.append(StepMetrics(**values))
    return trace


@dataclass
class RunReport:
    """Summary scalars of one run plus the artifacts it wrote."""

    label: str
    scheme: str
    seed: int
    n_cells: int
    duration_s: float
    cumulative_loss_J: float
    baseline_loss_J: float | None = None
    loss_reduction_pct: float | None = None
    soc_balance_time_s: float | None = None
    temp_balance_time_s: float | None = None
    mean_solver_time_s: float = 0.0
    max_solver_time_s: float = 0.0
    mean_k: float = 0.0
    fallback_fraction: float = 0.0
    artifacts: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_trace(cls, trace: SimTrace, config, baseline: SimTrace | None = None) -> RunReport:
        s = trace.summary()
        base = baseline.final_loss if baseline is not None else None
        return cls(
            label=trace.label,
            scheme=config.scheme if not config.cell_level else "cell-level",
            seed=config.seed,
            n_cells=config.n_cells,
            duration_s=config.duration,
            cumulative_loss_J=trace.final_loss,
            baseline_loss_J=base,
            loss_reduction_pct=None if not base else 100.0 * (base - trace.final_loss) / base,
            soc_balance_time_s=s.get("soc_balance_time_s"),
            temp_balance_time_s=s.get("temp_balance_time_s"),
            mean_solver_time_s=s.get("mean_solver_time_s", 0.0),
            max_solver_time_s=s.get("max_solver_time_s", 0.0),
            mean_k=s.get("mean_k", 0.0),
            fallback_fraction=s.get("fallback_fraction", 0.0),
        )


def write_report(report: RunReport, path) -> None:
    """Flat ``key = value`` text; missing values are written as ``none``."""
    path = Path(path)
    with _open(path, "w") as fh:
        fh.write(f"schema_version = {SCHEMA_VERSION}\n")
        for f in fields(RunReport):
            value = getattr(report, f.name)
            if f.name == "artifacts":
                for key in sorted(value):
                    fh.write(f"artifact.{key} = {value[key]}\n")
                continue
            fh.write(f"{f.name} = {'none' if value is None else _fmt(value)}\n")


def read_report(path) -> dict[str, str]:
    path = Path(path)
    out: dict[str, str] = {}
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            key, sep, value = line.partition(" = ")
            if not sep:
                raise TraceFormatError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = value.rstrip("\n")
    return out
