import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boundary_le.config import ConfigError, load, profile_spec
from boundary_le.records import CheckResult, config_hash, format_report, read_csv, write_csv


def write_ini(tmp_path, text):
    p = tmp_path / "run.ini"
    p.write_text(text)
    return p


class TestConfig:
    def test_seed_required(self):
        with pytest.raises(ConfigError, match="seed"):
            load()

    def test_defaults(self):
        cfg = load(seed=3)
        assert cfg.dynamics == "walk"
        assert cfg["domain"]["L"] == 24.0
        assert cfg["h2"]["targets"] == [[1.0, 0.5], [1.0, 1.0]]

    def test_file_and_override_precedence(self, tmp_path):
        p = write_ini(tmp_path, "[run]\nseed = 1\n[domain]\nL = 30\n")
        cfg = load(p, overrides=["domain.L=40"], seed=9)
        assert cfg["domain"]["L"] == 40.0 and cfg.seed == 9

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            load(write_ini(tmp_path, "[run]\nseed = 1\n[domain]\nwidth = 3\n"))

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="unknown section"):
            load(overrides=["nope.x=1"], seed=1)

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="bad value"):
            load(overrides=["domain.L=wide"], seed=1)

    def test_one_dynamics_only(self):
        with pytest.raises(ConfigError, match="one dynamics"):
            load(overrides=["billiard.T=10"], seed=1)
        cfg = load(preset="default-billiard", overrides=["billiard.T=10"], seed=1)
        assert cfg.dynamics == "billiard" and cfg["domain"]["L"] == 20.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load(tmp_path / "absent.ini", seed=1)

    def test_hash_ignores_workers_and_output(self):
        a = load(seed=1, workers=1, out_dir="x")
        b = load(seed=1, workers=4, out_dir="y")
        assert config_hash(a.resolved()) == config_hash(b.resolved())
        assert config_hash(a.resolved()) != config_hash(load(seed=2).resolved())

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.5, 1e4, allow_nan=False), st.integers(1, 2**31))
    def test_override_round_trip(self, L, trials):
        cfg = load(overrides=[f"domain.L={L!r}", f"le.trials={trials}"], seed=0)
        assert cfg["domain"]["L"] == L and cfg["le"]["trials"] == trials

    def test_profiles(self):
        assert profile_spec("sin") == "sin"
        assert profile_spec("0") is None
        assert np.array_equal(profile_spec("0, 1, 0"), [0.0, 1.0, 0.0])
        with pytest.raises(ConfigError):
            profile_spec("1, -1")


class TestRecords:
    def test_csv_round_trip(self, tmp_path):
        path = write_csv(tmp_path / "a" / "x.csv", ["i", "v"], [(1, np.float64(0.1)), (2, 1e-300)], {"seed": 4})
        meta, header, rows = read_csv(path)
        assert meta["seed"] == "4" and header == ["i", "v"]
        assert rows == [["1", "0.1"], ["2", "1e-300"]]
        assert float(rows[0][1]) == 0.1

    def test_report_is_json_lines(self):
        res = [
            CheckResult("a", np.float64(1.5), 1.0, 0.1, np.bool_(False), "note"),
            CheckResult("b", [np.int64(2)], None, None, True),
            CheckResult("c", np.float64(np.nan), np.inf, 0.0, False),
        ]
        lines = [json.loads(x) for x in format_report(res, "abc").splitlines()]
        assert lines[0] == {"check": "a", "statistic": 1.5, "reference": 1.0, "tolerance": 0.1,
                            "pass": False, "note": "note", "config": "abc"}
        assert lines[1]["statistic"] == [2]
        assert lines[2]["statistic"] == "nan" and lines[2]["reference"] == "inf"
        assert lines[-1] == {"summary": True, "checks": 3, "passed": 1, "config": "abc"}
