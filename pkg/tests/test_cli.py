import json
from pathlib import Path

import pandas as pd
import pytest

from app.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_calibrate_from_quote_file(tmp_path, capsys):
    code = main(["calibrate", "--config", str(CONFIGS / "calibrate_cir.toml"), "--out", str(tmp_path)])
    assert code == 0
    fit = pd.read_csv(tmp_path / "calibration.csv")
    assert fit.loc[0, "kappa"] == pytest.approx(20.0, rel=1e-3)
    assert fit.loc[0, "theta"] == pytest.approx(0.2, rel=1e-5)
    curve = pd.read_csv(tmp_path / "fitted_curve.csv")
    assert list(curve.columns) == ["maturity_years", "price", "fitted"]
    assert len(curve) == 4
    assert "kappa=" in capsys.readouterr().out


def test_calibrate_builtin_curve(tmp_path):
    assert main(["calibrate", "--out", str(tmp_path)]) == 0
    fit = pd.read_csv(tmp_path / "calibration.csv")
    assert fit.loc[0, "kappa"] == pytest.approx(20.0, rel=1e-6)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["subcommand"] == "calibrate"
    assert manifest["outputs"] == ["calibration.csv", "fitted_curve.csv"]


def test_simulate(tmp_path):
    assert main(["simulate", "--paths", "2", "--dt", "0.01", "--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "paths.csv")
    assert list(frame.columns) == ["path_id", "t", "S"]
    assert len(frame) == 2 * 51
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["seed"] == 20240504


def test_simulate_from_config(tmp_path):
    assert main(["simulate", "--config", str(CONFIGS / "simulate.toml"), "--paths", "1", "--out", str(tmp_path)]) == 0
    frame = pd.read_csv(tmp_path / "paths.csv")
    assert list(frame.columns) == ["path_id", "t", "S", "Y1"]
    assert len(frame) == 253


def test_track(tmp_path):
    assert main(["track", "--paths", "5", "--out", str(tmp_path)]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert summary["beta"].tolist() == [-1.0, 2.0, 3.0]
    assert (summary["n_ok"] == 5).all()
    assert summary.loc[1, "predicted_log_excess"] == pytest.approx(-0.045)
    for name in ("track_beta2.csv", "holdings_beta2.csv", "plotdata.csv"):
        assert (tmp_path / name).exists()
    holdings = pd.read_csv(tmp_path / "holdings_beta2.csv")
    assert "call_K50_T0.5" in holdings.columns


def test_vxx(tmp_path):
    assert main(["vxx", "--paths", "3", "--out", str(tmp_path)]) == 0
    for name in ("vxx.csv", "vxx_weights.csv", "vxx_summary.csv", "vxx_local_beta.csv", "plotdata.csv"):
        assert (tmp_path / name).exists()
    weights = pd.read_csv(tmp_path / "vxx_weights.csv")
    assert weights.loc[0, "vxx_front"] == pytest.approx(1.0)
    summary = pd.read_csv(tmp_path / "vxx_summary.csv")
    assert len(summary) == 3


def test_missing_config_file(tmp_path):
    assert main(["track", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path)]) == 2


def test_invalid_toml(tmp_path):
    config = tmp_path / "bad.toml"
    config.write_text("[model\nkind = 'bs'\n")
    assert main(["track", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_unknown_key(tmp_path):
    config = tmp_path / "extra.toml"
    config.write_text("[model]\nkind = 'bs'\nsigma = 0.2\nvolatility = 0.3\n\n[run]\nseed = 1\n")
    assert main(["simulate", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_dt_needs_a_grid(tmp_path):
    assert main(["calibrate", "--dt", "0.01", "--out", str(tmp_path)]) == 2


def test_inconsistent_drift_target(tmp_path):
    config = tmp_path / "alpha.toml"
    config.write_text(
        """
[model]
kind = "bs"
r = 0.05
sigma = 0.2
s0 = 50.0

[grid]
T = 0.1
n_steps = 5

[target]
beta = 1.0
alpha = 0.5

[[instruments]]
kind = "futures_index"
maturity = 0.5

[run]
seed = 1
paths = 2
"""
    )
    assert main(["track", "--config", str(config), "--out", str(tmp_path)]) == 3


def test_verify_is_reproducible(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    codes = [main(["verify", "--paths", "4", "--dt", "1e-3", "--out", str(out)]) for out in (first, second)]
    assert codes[0] == codes[1]
    assert codes[0] in (0, 3)
    assert (first / "verify.csv").read_bytes() == (second / "verify.csv").read_bytes()
    frame = pd.read_csv(first / "verify.csv")
    assert list(frame.columns) == ["check", "value", "threshold", "passed"]
    assert frame.set_index("check").loc["heston_index_pair_singular", "passed"]


@pytest.mark.slow
def test_verify_default_run_passes(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["run"]["paths"] == 100
