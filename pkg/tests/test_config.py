from __future__ import annotations

import pytest

from clusterbess.cell import AH
from clusterbess.config import ConfigError, KEYS, apply_overrides, default_config_text, parse_config, parse_config_text
from clusterbess.sim import SimConfig


class TestParse:
    def test_empty_is_defaults(self):
        assert parse_config_text("") == SimConfig()

    def test_default_text_round_trips(self):
        assert parse_config_text(default_config_text()) == SimConfig()

    def test_every_key_is_written(self):
        text = default_config_text()
        for keys in KEYS.values():
            for key in keys:
                assert f"\n{key} = " in text

    def test_values_land(self):
        cfg = parse_config_text(
            "[cells]\nn_cells = 12\ncapacity_ah = 3.0\ninit_soc_max = 0.8\ncurrent_max = 6\n"
            "[bounds]\ndT = 0.4\nlambda_E = 3\nrelax_bounds = no\n"
            "[simulation]\nscheme = equal\nk_fixed = none\ndt = 1\n"
        )
        assert cfg.n_cells == 12
        assert cfg.cell.capacity == 3.0 * AH
        assert cfg.soc_range == (0.70, 0.8)
        assert cfg.cell.current_limits == (-7.5, 6.0)
        assert cfg.dT == 0.4 and cfg.dt == 1.0
        assert cfg.lambda_E == 3.0 and cfg.relax_bounds is False
        assert cfg.scheme == "equal" and cfg.k_fixed is None

    def test_keys_case_sensitive(self):
        cfg = parse_config_text("[bounds]\ndT = 0.3\n[simulation]\ndt = 2\nduration = 20\n")
        assert cfg.dT == 0.3 and cfg.dt == 2.0

    def test_inline_comments(self):
        assert parse_config_text("[simulation]\nhorizon = 5  # shorter\n").horizon == 5

    def test_base_config(self):
        base = SimConfig(n_cells=8)
        assert parse_config_text("[simulation]\nhorizon = 3\n", base=base).n_cells == 8


class TestErrors:
    @pytest.mark.parametrize(
        "text, match",
        [
            ("[simulation]\nhorizon = 0\n", r"<config>:2: horizon must be at least 1"),
            ("[simulation]\nhorizon = 3\nhorizon = 4\n", r"<config>:3: duplicate key 'horizon'"),
            ("[bounds]\n[bounds]\n", r"<config>:2: duplicate section"),
            ("horizon = 3\n", r"<config>:1: key outside of any section"),
            ("[simulation]\nhorizn = 3\n", r"<config>:2: unknown key\(s\): \[simulation\] horizn"),
            ("[sim]\nhorizon = 3\n", r"<config>:1: unknown section"),
            ("[simulation]\nhorizon = 2.5\n", r"<config>:2: bad value for 'horizon'"),
            ("[bounds]\nrelax_bounds = maybe\n", r"<config>:2: bad value"),
            ("[bounds]\n\ndq = \n", r"<config>:3: key 'dq' has no value"),
            ("[simulation]\nscheme = fastest\n", r"<config>:2: unknown scheme"),
            ("[cells]\nresistance = -1\n", r"<config>:2: resistance"),
        ],
    )
    def test_anchored(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)

    def test_all_unknown_keys_listed(self):
        with pytest.raises(ConfigError) as exc:
            parse_config_text("[simulation]\nfoo = 1\nbar = 2\n")
        assert "foo" in str(exc.value) and "bar" in str(exc.value)

    def test_file_path_in_message(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[simulation]\nhorizon = 0\n")
        with pytest.raises(ConfigError, match=f"{p}:2:"):
            parse_config(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "nope.ini")


class TestOverrides:
    def test_range_ends_combine(self):
        cfg = apply_overrides(SimConfig(), {"temp_range[0]": 300.0, "temp_range[1]": 306.0})
        assert cfg.temp_range == (300.0, 306.0)

    def test_cell_field(self):
        cfg = apply_overrides(SimConfig(), {"cell.mass": 0.05, "cell.temp_limits[1]": 320.0})
        assert cfg.cell.mass == 0.05
        assert cfg.cell.temp_limits[1] == 320.0
