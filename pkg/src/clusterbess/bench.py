"""Optimization-time benchmark against cell-level dispatch."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .profiles import reference_profile
from .sim import Profile, SimConfig, baseline_cell_level, run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchRow:
    n: int
    scheme: str  # split scheme, or "cell-level"
    k_cap: int | None
    steps: int
    mean_time_s: float  # per-step build + solve
    total_time_s: float
    mean_k: float
    reduction_pct: float | None  # relative to the cell-level run at the same n


BENCH_COLUMNS = ("n", "scheme", "k_cap", "steps", "mean_time_s", "total_time_s", "mean_k", "reduction_pct")


def cmd_benchmark(
    n_values=(50, 100, 400),
    k_caps=(15,),
    schemes=("equal",),
    base: SimConfig | None = None,
    profile=None,
    duration: float = 30.0,
    cell_level_duration: dict[int, float] | None = None,
    repeats: int = 3,
) -> list[BenchRow]:
    """Time the optimization portion of short runs.

    Every cluster run uses exactly ``k_cap`` clusters (capped at n) so the
    timing isolates problem size.  The per-step time covers aggregation,
    problem build and solve, plus the member solves of the optimal split;
    plant stepping and clustering are excluded.  Cell-level runs can be
    shortened per n through ``cell_level_duration`` since per-step cost is
    what gets compared.  The profile is sized for ``base.n_cells`` and is
    scaled by ``n / base.n_cells`` so every pack sees the same per-cell demand.

    Runs are deterministic, so each is repeated ``repeats`` times and every
    step keeps its fastest time; wall-clock noise only ever adds time.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    base = base or SimConfig()
    profile = profile if profile is not None else reference_profile()
    cell_level_duration = cell_level_duration or {}
    power = np.asarray(getattr(profile, "power", profile), dtype=float)
    rows: list[BenchRow] = []
    for n in n_values:
        cfg_n = replace(base, n_cells=int(n), duration=duration)
        pack, state = cfg_n.population()
        demand = Profile(power * (n / base.n_cells), base.dt)
        cl_cfg = replace(cfg_n, duration=cell_level_duration.get(int(n), duration))
        log.info("benchmark: cell-level n=%d", n)
        ref = _timed([baseline_cell_level(cl_cfg, demand, pack, state) for _ in range(repeats)])
        rows.append(BenchRow(int(n), "cell-level", None, ref[0], ref[1], ref[2], float(n), None))
        for scheme in schemes:
            for cap in k_caps:
                k = min(int(cap), int(n))
                cfg = replace(cfg_n, scheme=scheme, k_method="fixed", k_fixed=k, k_max=k)
                log.info("benchmark: %s n=%d k=%d", scheme, n, k)
                traces = [run(cfg, demand, pack, state) for _ in range(repeats)]
                steps, mean_t, total_t = _timed(traces)
                rows.append(
                    BenchRow(
                        int(n), scheme, int(cap), steps, mean_t, total_t,
                        float(traces[0].column("k").mean()),
                        100.0 * (1.0 - mean_t / ref[1]),
                    )
                )
    return rows


def _timed(traces) -> tuple[int, float, float]:
    t = np.min([tr.column("solver_time") for tr in traces], axis=0)
    return len(t), float(t.mean()), float(t.sum())


def write_bench_csv(rows: list[BenchRow], path) -> None:
    path = Path(path)
    try:
        fh = path.open("w", newline="")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        fh.write(",".join(BENCH_COLUMNS) + "\n")
        for r in rows:
            vals = [getattr(r, c) for c in BENCH_COLUMNS]
            fh.write(",".join("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)) for v in vals) + "\n")


def format_table(rows: list[BenchRow]) -> str:
    head = f"{'n':>5} {'scheme':<11} {'k_cap':>5} {'steps':>5} {'mean s':>10} {'reduction %':>12}"
    out = [head]
    for r in rows:
        red = "" if r.reduction_pct is None else f"{r.reduction_pct:.2f}"
        cap = "" if r.k_cap is None else str(r.k_cap)
        out.append(f"{r.n:>5} {r.scheme:<11} {cap:>5} {r.steps:>5} {r.mean_time_s:>10.5f} {red:>12}")
    return "\n".join(out)


def scaling_ratio(rows: list[BenchRow], scheme: str, k_cap: int, n_a: int, n_b: int) -> float:
    """|t(n_b) - t(n_a)| / t(n_a) for one scheme at a fixed cluster cap."""
    pick = {r.n: r.mean_time_s for r in rows if r.scheme == scheme and r.k_cap == k_cap}
    return float(np.abs(pick[n_b] - pick[n_a]) / pick[n_a])
