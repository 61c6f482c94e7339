"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 run dominated by solver
failures (more than 10% fallback steps), 4 input/output error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import cmd_benchmark, format_table, write_bench_csv
from .config import ConfigError, parse_config
from .profiles import ProfileError, load_profile_csv, reference_profile, synth_udds_like, write_profile_csv
from .sim import SimConfig, baseline_cell_level, baseline_uniform, oracle_instances, run
from .split import SCHEMES
from .traces import RunReport, write_report, write_timing_csv, write_trace_csv

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
FALLBACK_LIMIT = 0.10

log = logging.getLogger("clusterbess")


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="configuration file")
    p.add_argument("--profile", type=Path, help="load profile CSV with header t,p_out (default: bundled reference)")
    p.add_argument("--seed", type=int, help="population seed")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="directory for artifacts (default: out)")
    p.add_argument("--duration", type=float, help="simulated seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterbess", description="Clustered battery pack dispatch simulator.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="closed-loop run under a split scheme")
    _common(p)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--recluster-period", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--no-baseline", action="store_true", help="skip the uniform baseline used for the loss reduction")

    p = sub.add_parser("baseline", help="uniform or cell-level reference run")
    _common(p)
    p.add_argument("--kind", choices=("uniform", "cell-level"), default="uniform")

    p = sub.add_parser("benchmark", help="optimization time versus cell-level dispatch")
    _common(p)
    p.add_argument("--n", type=_int_list, default=[50, 100, 400], help="cell counts (default 50,100,400)")
    p.add_argument("--k-cap", type=_int_list, default=[15], help="cluster caps (default 15)")
    p.add_argument("--scheme", choices=SCHEMES, action="append", help="schemes to time (repeatable; default equal)")
    p.add_argument("--cell-level-duration", type=float, help="shorter duration for the cell-level reference runs")
    p.add_argument("--repeats", type=int, default=3, help="timed repeats per run; the fastest time per step is kept (default 3)")

    p = sub.add_parser("oracle", help="compare the conic program with exhaustive search")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--resolution", type=int, default=201)

    p = sub.add_parser("synth-profile", help="write a synthetic stop-and-go load profile")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--duration", type=float, default=2400.0)
    p.add_argument("--peak-charge", type=float, default=6000.0)
    p.add_argument("--peak-discharge", type=float, default=10000.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args) -> SimConfig:
    """Defaults, then the config file, then command-line flags."""
    cfg = parse_config(args.config) if getattr(args, "config", None) else SimConfig()
    flags = {
        "seed": getattr(args, "seed", None),
        "duration": getattr(args, "duration", None),
        "recluster_period": getattr(args, "recluster_period", None),
        "k_max": getattr(args, "k_max", None),
    }
    scheme = getattr(args, "scheme", None)
    if isinstance(scheme, str):
        flags["scheme"] = scheme
    flags = {k: v for k, v in flags.items() if v is not None}
    try:
        return replace(cfg, **flags)
    except ValueError as exc:
        raise ConfigError(f"command line: {exc}") from None


def _profile(args, cfg: SimConfig):
    if getattr(args, "profile", None):
        return load_profile_csv(args.profile, cfg.dt)
    return reference_profile()


def _out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    return path


def _emit(trace, cfg, out: Path, name: str, baseline=None) -> RunReport:
    report = RunReport.from_trace(trace, cfg, baseline)
    paths = {"trace": out / f"{name}_trace.csv", "timing": out / f"{name}_timing.csv"}
    write_trace_csv(trace, paths["trace"])
    write_timing_csv(trace, paths["timing"])
    if baseline is not None:
        paths["baseline_trace"] = out / "uniform_trace.csv"
        write_trace_csv(baseline, paths["baseline_trace"])
    report.artifacts = {k: str(v) for k, v in paths.items()}
    write_report(report, out / f"{name}_report.txt")
    return report


def _print_report(report: RunReport) -> None:
    print(f"{report.label}: cumulative loss {report.cumulative_loss_J:.1f} J")
    if report.loss_reduction_pct is not None:
        print(f"  loss reduction vs uniform: {report.loss_reduction_pct:.3f} %")
    print(f"  SoC balanced at: {report.soc_balance_time_s} s, temperature balanced at: {report.temp_balance_time_s} s")
    print(f"  mean k {report.mean_k:.2f}, mean solver time {report.mean_solver_time_s:.4f} s, fallback {100 * report.fallback_fraction:.1f} %")


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    profile = _profile(args, cfg)
    out = _out_dir(args.out_dir)
    pack, state = cfg.population()
    trace = run(cfg, profile, pack, state)
    baseline = None if args.no_baseline else baseline_uniform(cfg, profile, pack, state)
    report = _emit(trace, cfg, out, cfg.scheme, baseline)
    _print_report(report)
    if trace.fallback_fraction > FALLBACK_LIMIT:
        print(f"solver fallback on {100 * trace.fallback_fraction:.1f} % of steps", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    profile = _profile(args, cfg)
    out = _out_dir(args.out_dir)
    pack, state = cfg.population()
    if args.kind == "uniform":
        trace = baseline_uniform(cfg, profile, pack, state)
    else:
        trace = baseline_cell_level(cfg, profile, pack, state)
    report = _emit(trace, replace(cfg, cell_level=args.kind == "cell-level"), out, args.kind)
    _print_report(report)
    if trace.fallback_fraction > FALLBACK_LIMIT:
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    profile = _profile(args, cfg)
    out = _out_dir(args.out_dir)
    duration = args.duration or 30.0
    if args.repeats < 1:
        raise ConfigError("command line: --repeats must be at least 1")
    cl = {n: args.cell_level_duration for n in args.n} if args.cell_level_duration else None
    rows = cmd_benchmark(args.n, args.k_cap, tuple(args.scheme or ["equal"]), cfg, profile, duration, cl, args.repeats)
    write_bench_csv(rows, out / "benchmark.csv")
    print(format_table(rows))
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = resolve_config(args)
    worst = 0.0
    for n in (2, 3):
        checks = oracle_instances(n, args.instances, args.seed, replace(cfg, n_cells=n, horizon=1), args.resolution)
        errs = [c.relative_error for c in checks]
        worst = max([worst, *errs])
        print(f"n={n}: {len(checks)} instances, max relative error {max(errs, default=float('nan')):.3e}")
    print(f"worst relative error {worst:.3e}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        profile = synth_udds_like(args.duration, args.peak_charge, args.peak_discharge, args.dt, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_profile_csv(profile, args.out)
    print(f"wrote {len(profile)} samples to {args.out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "baseline": cmd_baseline, "benchmark": cmd_bench, "oracle": cmd_oracle, "synth-profile": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ProfileError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
