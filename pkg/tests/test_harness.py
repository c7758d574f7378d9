import copy
import json
import os

import numpy as np
import pytest

from speclab.cli import main
from speclab.errors import ConfigError
from speclab.harness import (
    CSV_SCHEMAS,
    emit_csv,
    emit_json,
    run_experiment,
    validate_config,
)


def weyl_config(out_dir=None):
    cfg = {
        "experiment": "weyl-sweep",
        "profile": {"family": "polynomial", "k": 2.0, "n": 4},
        "grid": {"t_max": 90.0, "h": 0.02},
        "weyl": {"lambdas": [0.0, 1.0], "t_list": [5.0, 10.0, 20.0], "p": 1},
        "seed": 3,
    }
    if out_dir is not None:
        cfg["output"] = {"dir": str(out_dir)}
    return cfg


def growth_config():
    return {
        "experiment": "growth-audit",
        "profile": {"family": "exponential", "alpha": 1.0, "n": 2},
        "growth": {
            "epsilons": [0.5],
            "r_grid": [1, 2, 4, 8, 16, 32],
            "centers": [0, 2, 5],
            "t_list": [1, 2, 4, 8, 16],
            "k0": 1.0,
            "bishop_pairs": [[2, 4], [2, 8], [2, 16], [2, 32], [2, 64], [2, 128], [2, 256], [2, 512]],
            "bishop_centers": [0, 2, 5],
            "sturm_beta": 0.1,
            "sturm_t0": 20.0,
        },
    }


# --- validation -----------------------------------------------------------------


def test_validate_fills_defaults():
    cfg = validate_config(weyl_config())
    assert cfg["weyl"]["slope_range"] == [-1.3, -0.7]
    assert cfg["weyl"]["sign"] == 1
    assert cfg["seed"] == 3


def test_validate_rejects_missing_and_unknown_keys():
    bad = weyl_config()
    del bad["grid"]["h"]
    bad["grid"]["typo"] = 1.0
    bad["weyl"]["mystery"] = True
    with pytest.raises(ConfigError) as err:
        validate_config(bad)
    text = str(err.value)
    assert "grid" in text and "typo" in text and "mystery" in text


def test_validate_aggregates_all_problems():
    with pytest.raises(ConfigError) as err:
        validate_config({"experiment": "weyl-sweep"})
    assert len(err.value.problems) >= 2


def test_validate_rejects_wrong_types():
    bad = weyl_config()
    bad["weyl"]["lambdas"] = "zero"
    with pytest.raises(ConfigError, match="lambdas"):
        validate_config(bad)


def test_validate_rejects_unknown_experiment():
    with pytest.raises(ConfigError, match="experiment"):
        validate_config({"experiment": "make-tea"})


# --- runners and reports -----------------------------------------------------------


def test_run_weyl_sweep_report_structure(tmp_path):
    report = run_experiment(weyl_config(tmp_path))
    assert report["schema_version"] == 1
    assert report["experiment"] == "weyl-sweep"
    names = {v["name"] for v in report["verdicts"]}
    assert "quotient_below_bound" in names
    assert all(v["passed"] for v in report["verdicts"])
    for verdict in report["verdicts"]:
        assert verdict["inequality"]
        assert isinstance(verdict["values"], dict) and verdict["values"]
    rows = report["tables"]["quotients"]
    assert len(rows) == 6
    assert set(rows[0]) == set(CSV_SCHEMAS["weyl-sweep"]["quotients"])
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "quotients.csv").exists()


def test_run_growth_audit_reports_expected_failures(tmp_path):
    # the exponential profile genuinely fails the subexponential and integral
    # audits; the report must record that honestly
    report = run_experiment(growth_config(), out_dir=str(tmp_path))
    by_name = {v["name"]: v for v in report["verdicts"]}
    assert not by_name["subexponential_eps_0.5"]["passed"]
    assert not by_name["sturm_integral_finite"]["passed"]
    assert not by_name["growth_condition_to_zero"]["passed"]
    assert by_name["bishop_volume_comparison"]["passed"]


def test_report_determinism_modulo_meta(tmp_path):
    r1 = run_experiment(weyl_config(), out_dir=str(tmp_path / "a"))
    r2 = run_experiment(weyl_config(), out_dir=str(tmp_path / "b"))
    for r in (r1, r2):
        r.pop("meta")
    assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    a.pop("meta"), b.pop("meta")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_threaded_sweep_matches_serial(tmp_path):
    r1 = run_experiment(weyl_config())
    r4 = run_experiment(weyl_config(), threads=4)
    r1.pop("meta"), r4.pop("meta")
    assert json.dumps(r1, sort_keys=True) == json.dumps(r4, sort_keys=True)


def test_json_round_trip(tmp_path):
    report = run_experiment(weyl_config())
    path = str(tmp_path / "r.json")
    emit_json(report, path)
    with open(path, "r", encoding="utf-8") as handle:
        parsed = json.load(handle)
    assert parsed == report


def test_csv_formatting(tmp_path):
    report = run_experiment(weyl_config())
    emit_csv(report, str(tmp_path))
    lines = (tmp_path / "quotients.csv").read_text().splitlines()
    assert lines[0] == "lambda,T,p,quotient,paper_bound,slope"
    cell = lines[1].split(",")[3]
    assert "." in cell and "," not in cell
    # 17 significant digits round-trip exactly
    assert float(cell) == report["tables"]["quotients"][0]["quotient"]


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    report = run_experiment(weyl_config())
    target = tmp_path / "report.json"
    target.write_text("sentinel")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        emit_json(report, str(target))
    monkeypatch.undo()
    assert target.read_text() == "sentinel"
    leftovers = [p for p in tmp_path.iterdir() if p.name != "report.json"]
    assert leftovers == []


def test_config_echo_contains_verdict_parameters():
    report = run_experiment(weyl_config())
    echo = report["config"]
    for verdict in report["verdicts"]:
        if "range" in verdict["values"]:
            assert verdict["values"]["range"] == echo["weyl"]["slope_range"]


def test_region_map_runner(tmp_path):
    cfg = {
        "experiment": "region-map",
        "profile": {"family": "exponential", "alpha": 1.0, "n": 2},
        "grid": {"t_max": 90.0, "h": 0.02},
        "region": {
            "re_values": [1.0],
            "im_values": [-0.5, 0.0],
            "t_list": [5.0, 10.0, 15.0, 20.0],
        },
    }
    report = run_experiment(cfg, out_dir=str(tmp_path))
    rows = {(r["re"], r["im"]): r["classification"] for r in report["tables"]["region"]}
    assert rows[(1.0, -0.5)] == "decays"
    assert (tmp_path / "region.csv").exists()


def test_spectrum_fill_runner(tmp_path):
    cfg = {
        "experiment": "spectrum-fill",
        "profile": {"family": "polynomial", "k": 1.0, "n": 3},
        "spectrum": {"t_max_list": [20.0, 40.0], "lambda_max": 1.0, "h_divisor": 2500},
    }
    report = run_experiment(cfg, out_dir=str(tmp_path))
    by_name = {v["name"]: v for v in report["verdicts"]}
    assert by_name["flat_oracle_match"]["passed"]
    assert by_name["gap_halving_20_to_40"]["passed"]


def test_heat_audit_runner(tmp_path):
    cfg = {
        "experiment": "heat-audit",
        "profile": {"family": "polynomial", "k": 2.0, "n": 4},
        "grid": {"t_max": 20.0, "m": 499},
        "heat": {
            "tau_list": [0.25, 1.0],
            "betas": [1.0],
            "laplace_alpha": -2.0,
            "laplace_power": 6,
            "laplace_tau_max": 25.0,
        },
    }
    report = run_experiment(cfg, out_dir=str(tmp_path))
    assert all(v["passed"] for v in report["verdicts"]), [
        (v["name"], v["passed"]) for v in report["verdicts"]
    ]
    forms = {row["form"] for row in report["tables"]["fits"]}
    assert {"heatg", "heat42_beta_1", "res1", "laplace_identity"} <= forms


# --- CLI ------------------------------------------------------------------------------


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_cli_pass_exit_zero(tmp_path, capsys):
    path = write_config(tmp_path, weyl_config())
    code = main(["weyl-sweep", "--config", path, "--out", str(tmp_path / "out")])
    assert code == 0
    out = capsys.readouterr().out
    assert "[PASS]" in out
    assert (tmp_path / "out" / "report.json").exists()


def test_cli_verdict_fail_exit_one(tmp_path):
    path = write_config(tmp_path, growth_config())
    code = main(["growth-audit", "--config", path, "--out", str(tmp_path / "out")])
    assert code == 1


def test_cli_config_error_exit_two(tmp_path, capsys):
    cfg = weyl_config()
    del cfg["grid"]["h"]
    path = write_config(tmp_path, cfg)
    code = main(["weyl-sweep", "--config", path])
    assert code == 2
    assert "grid" in capsys.readouterr().err


def test_cli_missing_config_exit_four(tmp_path):
    code = main(["weyl-sweep", "--config", str(tmp_path / "nope.json")])
    assert code == 4


def test_cli_experiment_mismatch_exit_two(tmp_path, capsys):
    path = write_config(tmp_path, weyl_config())
    code = main(["growth-audit", "--config", path])
    assert code == 2


def test_cli_seed_override(tmp_path):
    path = write_config(tmp_path, weyl_config())
    out = tmp_path / "out"
    assert main(["weyl-sweep", "--config", path, "--out", str(out), "--seed", "99"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["seed"] == 99
