import csv
import json
from pathlib import Path

import pytest

from sporesim.cli import (
    EXIT_BUDGET,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    ConfigError,
    emit_csv,
    main,
    parse_config,
    run_experiment,
)

MINIMAL_SURVIVAL = """
{
  "model": {"beta": 1.0, "rho": 0.0,
            "offspring": {"kind": "table", "probs": [0.6, 0.0, 0.4]}},
  "experiment": {"type": "survival", "k": [1, 2], "t_max": 5.0}
}
"""

LF_MODEL_BLOCK = (
    '"model": {"beta": 1.0, "rho": 0.0, '
    '"offspring": {"kind": "table", "probs": [0.6, 0.0, 0.4]}}'
)


def write_config(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "cfg.json"
    path.write_text(text, encoding="utf-8")
    return path


class TestParseConfig:
    def test_minimal_survival_defaults_filled(self):
        cfg = parse_config(MINIMAL_SURVIVAL)
        s = cfg.settings
        assert s["method"] == "ode"
        assert s["tol"] == 1e-9
        assert s["K"] == 20
        assert s["dt"] == pytest.approx(5.0 / 400.0)
        assert cfg.resolved["experiment"]["method"] == "ode"
        assert cfg.resolved["output"] == {"dir": ".", "format": "csv"}
        assert not cfg.randomized

    def test_bad_probability_sum_names_path(self):
        text = MINIMAL_SURVIVAL.replace("[0.6, 0.0, 0.4]", "[0.6, 0.0, 0.3]")
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.path == "model.offspring.probs"

    def test_gumbel_requires_subcritical(self):
        text = """
        {
          "model": {"beta": 1.0, "rho": 0.0,
                    "offspring": {"kind": "table", "probs": [0.0, 0.0, 1.0]}},
          "experiment": {"type": "gumbel", "z": {"1": 100}, "seed": 1}
        }
        """
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.path == "model"
        assert "subcritical" in str(exc.value)

    def test_unknown_keys_rejected(self):
        bad_top = MINIMAL_SURVIVAL.replace(
            '"experiment"', '"bogus": 1, "experiment"', 1
        )
        with pytest.raises(ConfigError):
            parse_config(bad_top)
        bad_exp = MINIMAL_SURVIVAL.replace('"t_max": 5.0', '"t_max": 5.0, "oops": 2')
        with pytest.raises(ConfigError) as exc:
            parse_config(bad_exp)
        assert exc.value.path == "experiment.oops"

    def test_invalid_json(self):
        with pytest.raises(ConfigError):
            parse_config("{not json")

    def test_seed_recorded_when_set(self):
        cfg = parse_config(MINIMAL_SURVIVAL)
        cfg.set_seed(99)
        assert cfg.resolved["experiment"]["seed"] == 99

    def test_K_must_cover_requested_k(self):
        text = MINIMAL_SURVIVAL.replace('"t_max": 5.0', '"t_max": 5.0, "K": 1')
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        assert exc.value.path == "experiment.K"


class TestEmitCsv:
    def test_empty_rows_header_only(self, tmp_path):
        path = tmp_path / "empty.csv"
        emit_csv(path, {"tool": "sporesim"}, ["replicate", "T"], [])
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# tool=")
        assert lines[-1] == "replicate,T"

    def test_one_point_curve_two_lines(self, tmp_path):
        path = tmp_path / "one.csv"
        emit_csv(path, {}, ["k", "t", "q"], [(1, 0.0, 1.0)])
        lines = path.read_text().splitlines()
        assert len(lines) == 2

    def test_float_round_trip_bit_equal(self, tmp_path):
        values = [0.1 + 0.2, 1.0 / 3.0, 2.0 ** -52, 123456.789e-30]
        path = tmp_path / "floats.csv"
        emit_csv(path, {}, ["x"], [(v,) for v in values])
        with open(path) as f:
            rows = [r for r in csv.reader(f) if not r[0].startswith("#")]
        parsed = [float(r[0]) for r in rows[1:]]
        assert parsed == values

    def test_lf_newlines(self, tmp_path):
        path = tmp_path / "nl.csv"
        emit_csv(path, {}, ["x"], [(1,)])
        raw = path.read_bytes()
        assert b"\r" not in raw


class TestRunExperiment:
    def test_oracle_linear_fractional_all_pass(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "oracle", "t_max": 40.0}, '
            '"output": {"dir": "%s"}}' % (LF_MODEL_BLOCK, tmp_path / "out")
        )
        result = run_experiment(cfg)
        assert result.ok
        report = json.loads((tmp_path / "out" / "oracle.json").read_text())
        assert report["all_pass"]
        assert all(c["pass"] for c in report["cases"])

    def test_constant_artifact_value(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "constant", "K": 2}, '
            '"output": {"dir": "%s"}}' % (LF_MODEL_BLOCK, tmp_path / "out")
        )
        result = run_experiment(cfg)
        assert result.ok
        report = json.loads((tmp_path / "out" / "constant.json").read_text())
        assert abs(report["c_hat"] - 0.333333) < 1e-4
        assert report["metadata"]["config_hash"]
        assert report["metadata"]["config"]["experiment"]["tol"] == 1e-8

    def test_missing_seed_rejected(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "gumbel", "z": {"1": 20}, "replicates": 5}}'
            % LF_MODEL_BLOCK
        )
        with pytest.raises(ConfigError) as exc:
            run_experiment(cfg, out_dir=str(tmp_path))
        assert exc.value.path == "experiment.seed"

    def test_gumbel_artifacts(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "gumbel", "z": {"1": 50}, '
            '"replicates": 20, "seed": 7}}' % LF_MODEL_BLOCK
        )
        result = run_experiment(cfg, out_dir=str(tmp_path / "g"))
        assert result.ok
        report = json.loads((tmp_path / "g" / "gumbel.json").read_text())
        assert report["C_source"] == "linear_fractional"
        assert report["C"] == pytest.approx(1.0 / 3.0)
        assert 0.0 <= report["ks_distance"] <= 1.0
        lines = (tmp_path / "g" / "extinction_times.csv").read_text().splitlines()
        data = [l for l in lines if not l.startswith("#")]
        assert data[0] == "replicate,T"
        assert len(data) == 21

    def test_survival_mc_and_ode(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "survival", "k": [1], "t_max": 2.0, '
            '"method": "both", "seed": 3, "replicates": 500, "dt": 0.5}}' % LF_MODEL_BLOCK
        )
        result = run_experiment(cfg, out_dir=str(tmp_path / "s"))
        assert (tmp_path / "s" / "survival_ode.csv").exists()
        assert (tmp_path / "s" / "survival_mc.csv").exists()

    def test_slope_artifact(self, tmp_path):
        cfg = parse_config(
            '{%s, "experiment": {"type": "slope", "window": [20.0, 40.0], '
            '"K": 2, "dt": 0.25}}' % LF_MODEL_BLOCK
        )
        result = run_experiment(cfg, out_dir=str(tmp_path / "sl"))
        report = json.loads((tmp_path / "sl" / "slope.json").read_text())
        assert report["rel_error"] < 0.005
        assert report["lambda_model"] == pytest.approx(0.2)


class TestMain:
    def test_validate_ok(self, tmp_path, capsys):
        cfg = write_config(tmp_path, MINIMAL_SURVIVAL)
        assert main(["validate", "--config", str(cfg)]) == EXIT_OK
        out = capsys.readouterr().out
        assert "resolved:" in out

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = write_config(
            tmp_path, MINIMAL_SURVIVAL.replace("[0.6, 0.0, 0.4]", "[0.6, 0.0, 0.3]")
        )
        assert main(["validate", "--config", str(cfg)]) == EXIT_CONFIG
        assert "model.offspring.probs" in capsys.readouterr().err

    def test_missing_file(self, capsys):
        assert main(["run", "--config", "/nonexistent/cfg.json"]) == EXIT_CONFIG

    def test_missing_seed_and_ephemeral(self, tmp_path, capsys):
        text = (
            '{%s, "experiment": {"type": "gumbel", "z": {"1": 10}, "replicates": 3}, '
            '"output": {"dir": "%s"}}' % (LF_MODEL_BLOCK, tmp_path / "e")
        )
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
        assert main(["run", "--config", str(cfg), "--ephemeral"]) == EXIT_OK
        report = json.loads((tmp_path / "e" / "gumbel.json").read_text())
        assert report["metadata"]["master_seed"] is not None

    def test_budget_exit_code(self, tmp_path, capsys):
        # supercritical survival run hits the event budget
        text = """
        {
          "model": {"beta": 1.0, "rho": 0.0,
                    "offspring": {"kind": "table", "probs": [0.0, 0.0, 1.0]}},
          "experiment": {"type": "survival", "k": [1], "t_max": 50.0, "method": "mc",
                         "seed": 5, "replicates": 4, "max_events": 100},
          "output": {"dir": "OUT"}
        }
        """.replace("OUT", str(tmp_path / "b"))
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", str(cfg)]) == EXIT_BUDGET

    def test_numerical_failure_exit_code(self, tmp_path, capsys):
        # constant extraction with an unreachable settling threshold
        text = (
            '{%s, "experiment": {"type": "constant", "K": 2, "tol": 1e-16, '
            '"t_max": 60.0}, "output": {"dir": "%s"}}' % (LF_MODEL_BLOCK, tmp_path / "n")
        )
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", str(cfg)]) == EXIT_NUMERICAL

    def test_seed_override_recorded(self, tmp_path):
        text = (
            '{%s, "experiment": {"type": "gumbel", "z": {"1": 10}, "replicates": 3, '
            '"seed": 1}, "output": {"dir": "%s"}}' % (LF_MODEL_BLOCK, tmp_path / "o")
        )
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", str(cfg), "--seed", "555"]) == EXIT_OK
        report = json.loads((tmp_path / "o" / "gumbel.json").read_text())
        assert report["metadata"]["master_seed"] == 555
        assert report["metadata"]["config"]["experiment"]["seed"] == 555

    def test_rerun_byte_identical_across_threads(self, tmp_path):
        text = (
            '{%s, "experiment": {"type": "gumbel", "z": {"1": 40, "3": 5}, '
            '"replicates": 30, "seed": 11}}' % LF_MODEL_BLOCK
        )
        cfg = write_config(tmp_path, text)
        assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "r1")]) == EXIT_OK
        assert (
            main(
                ["run", "--config", str(cfg), "--out-dir", str(tmp_path / "r2"), "--threads", "4"]
            )
            == EXIT_OK
        )
        for name in ("gumbel.json", "extinction_times.csv"):
            assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


class TestShippedConfigs:
    def test_all_parse(self):
        for path in sorted(Path(__file__).parent.parent.glob("configs/*.json")):
            cfg = parse_config(path.read_text(encoding="utf-8"))
            assert cfg.kind in ("survival", "constant", "gumbel", "oracle", "slope")
