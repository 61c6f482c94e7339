from __future__ import annotations

import numpy as np
import pytest

from clusterbess.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SOLVER, main, resolve_config, build_parser
from clusterbess.profiles import load_profile_csv
from clusterbess.traces import TRACE_COLUMNS, read_report, read_trace_csv

SMALL = "[cells]\nn_cells = 6\n[simulation]\nduration = 5\nhorizon = 2\nk_max = 3\n"


@pytest.fixture
def setup(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    prof = tmp_path / "load.csv"
    prof.write_text("t,p_out\n" + "".join(f"{t},{p}\n" for t, p in enumerate([40, 60, -20, 0, 80, 30])))
    return tmp_path, cfg, prof


class TestRun:
    def test_artifacts(self, setup, capsys):
        tmp, cfg, prof = setup
        out = tmp / "out"
        code = main(["run", "--config", str(cfg), "--profile", str(prof), "--out-dir", str(out), "--scheme", "equal"])
        assert code == EXIT_OK
        for name in ("equal_trace.csv", "equal_timing.csv", "uniform_trace.csv", "equal_report.txt"):
            assert (out / name).exists()
        trace = read_trace_csv(out / "equal_trace.csv", out / "equal_timing.csv")
        assert len(trace.steps) == 5
        rep = read_report(out / "equal_report.txt")
        assert rep["scheme"] == "equal" and rep["n_cells"] == "6"
        assert "loss reduction vs uniform" in capsys.readouterr().out

    def test_reruns_identical(self, setup):
        tmp, cfg, prof = setup
        args = ["run", "--config", str(cfg), "--profile", str(prof), "--no-baseline", "--seed", "4"]
        main(args + ["--out-dir", str(tmp / "a")])
        main(args + ["--out-dir", str(tmp / "b")])
        a = (tmp / "a" / "optimal_trace.csv").read_bytes()
        assert a == (tmp / "b" / "optimal_trace.csv").read_bytes()
        assert a.splitlines()[1].decode() == ",".join(TRACE_COLUMNS)

    def test_solver_failures_exit_3(self, setup):
        tmp, cfg, _ = setup
        huge = tmp / "huge.csv"
        huge.write_text("t,p_out\n" + "".join(f"{t},1e6\n" for t in range(5)))
        code = main(["run", "--config", str(cfg), "--profile", str(huge), "--out-dir", str(tmp / "o"), "--no-baseline"])
        assert code == EXIT_SOLVER


class TestErrors:
    def test_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[simulation]\nhorizon = 0\n")
        assert main(["run", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
        assert f"{bad}:2: horizon must be at least 1" in capsys.readouterr().err

    def test_missing_profile(self, setup):
        tmp, cfg, _ = setup
        assert main(["run", "--config", str(cfg), "--profile", str(tmp / "nope.csv"), "--out-dir", str(tmp)]) == EXIT_IO

    def test_malformed_profile(self, setup):
        tmp, cfg, _ = setup
        bad = tmp / "bad.csv"
        bad.write_text("time,p\n0,1\n")
        assert main(["run", "--config", str(cfg), "--profile", str(bad), "--out-dir", str(tmp)]) == EXIT_IO

    def test_bad_flag_value(self, setup):
        tmp, cfg, prof = setup
        assert main(["run", "--config", str(cfg), "--profile", str(prof), "--k-max", "0", "--out-dir", str(tmp)]) == EXIT_CONFIG

    def test_unknown_scheme_rejected_by_parser(self):
        with pytest.raises(SystemExit):
            main(["run", "--scheme", "fastest"])


class TestPrecedence:
    def test_flags_over_file_over_defaults(self, setup):
        _, cfg, _ = setup
        args = build_parser().parse_args(["run", "--config", str(cfg), "--duration", "3", "--scheme", "resistance"])
        resolved = resolve_config(args)
        assert resolved.n_cells == 6  # file
        assert resolved.duration == 3.0  # flag over file
        assert resolved.scheme == "resistance"
        assert resolved.tol_q == 0.004  # default


class TestOtherVerbs:
    def test_baseline_cell_level(self, setup):
        tmp, cfg, prof = setup
        out = tmp / "o"
        assert main(["baseline", "--kind", "cell-level", "--config", str(cfg), "--profile", str(prof), "--out-dir", str(out)]) == EXIT_OK
        assert read_report(out / "cell-level_report.txt")["scheme"] == "cell-level"

    def test_synth_profile(self, tmp_path):
        out = tmp_path / "p.csv"
        assert main(["synth-profile", "--out", str(out), "--duration", "60", "--seed", "2"]) == EXIT_OK
        prof = load_profile_csv(out)
        assert len(prof) == 60 and prof.power.max() == pytest.approx(10000.0)

    def test_synth_profile_bad_duration(self, tmp_path):
        assert main(["synth-profile", "--out", str(tmp_path / "p.csv"), "--duration", "0"]) == EXIT_CONFIG

    def test_oracle(self, capsys):
        assert main(["oracle", "--instances", "2", "--resolution", "101"]) == EXIT_OK
        out = capsys.readouterr().out
        worst = float(out.strip().splitlines()[-1].split()[-1])
        assert np.isfinite(worst) and worst < 1e-2

    def test_benchmark(self, setup, capsys):
        tmp, cfg, prof = setup
        code = main(["benchmark", "--config", str(cfg), "--profile", str(prof), "--n", "6,8", "--k-cap", "3",
                     "--duration", "3", "--out-dir", str(tmp / "b")])
        assert code == EXIT_OK
        lines = (tmp / "b" / "benchmark.csv").read_text().splitlines()
        assert lines[0].startswith("n,scheme,k_cap")
        assert len(lines) == 1 + 4

    def test_benchmark_bad_repeats(self, setup):
        tmp, cfg, prof = setup
        args = ["benchmark", "--config", str(cfg), "--profile", str(prof), "--repeats", "0", "--out-dir", str(tmp)]
        assert main(args) == EXIT_CONFIG
