import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nodalsteer.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from nodalsteer.grid import GridFunction
from nodalsteer.profiles import ProfileSpec
from nodalsteer.scenario import (ConfigError, load_text, profile_from_toml, profile_to_toml,
                                 set_dotted)
from nodalsteer.strategy import RunTrace
from nodalsteer.tracker import CurveTrace

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

STILL = """
name = "still"
[grid]
n_cells = 200
[initial]
fixture = "sin-k"
k = 2
[target]
fixture = "sin-k"
k = 2
[strategy]
epsilon = 0.01
eta = 0.05
"""


def _cfg(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


# --- scenario loading --------------------------------------------------------------

def test_load_shipped_scenarios():
    for p in sorted(SCENARIOS.glob("*.toml")):
        text = p.read_text()
        if p.stem == "mismatch":
            with pytest.raises(ConfigError, match="same number of sign changes"):
                load_text(text)
        else:
            sc = load_text(text)
            assert sc.grid.n_cells > 0


@pytest.mark.parametrize("text", [
    "[grid\n",
    "name = 'x'\n",
    "[grid]\nn_cells = 100\n[bogus]\n",
    "[grid]\nn_cells = 100\n[initial]\nfixture = 'nope'\n",
    "[grid]\nn_cells = 100\n[initial]\nk = 2\n",
    "[grid]\nn_cells = 100\n[nonlinearity]\nkind = 'cubic'\n",
    "[grid]\nn_cells = 100\n[strategy]\ntheta = 2.0\n",
    "[grid]\nn_cells = 100\n[initial]\nfixture = 'sin-k'\nperturb = -1.0\n",
])
def test_bad_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        load_text(text)


def test_non_alternating_profile_rejected():
    text = STILL.replace('fixture = "sin-k"\nk = 2\n[strategy]',
                         'zeros = [0.0, 0.5, 1.0]\nalphas = [1, 1, -1]\nbetas = [0.0, 0.0, 0.0]\n'
                         'rho = 0.1\n[strategy]')
    with pytest.raises(ConfigError, match="alternate"):
        load_text(text)


def test_orientation_mismatch_rejected():
    text = STILL.replace('fixture = "sin-k"\nk = 2\n[strategy]', 'zeros = [0.5]\nlambda = -1\n[strategy]')
    with pytest.raises(ConfigError, match="same number of sign changes"):
        load_text(text)


def test_set_dotted_copies():
    d = {"grid": {"n_cells": 100}}
    e = set_dotted(d, "grid.n_cells", 200)
    assert d["grid"]["n_cells"] == 100 and e["grid"]["n_cells"] == 200
    assert set_dotted(d, "strategy.eta", 0.1)["strategy"] == {"eta": 0.1}


def test_profile_toml_round_trip():
    spec = ProfileSpec.from_zeros([0.25, 0.5, 0.75], lam=-1, betas=[0.0, 1.0, 0.0, -1.0, 0.0])
    assert profile_from_toml(profile_to_toml(spec)) == spec


def test_seeded_perturbation_is_reproducible():
    text = (SCENARIOS / "steer.toml").read_text()
    a, b = load_text(text).initial_state(), load_text(text).initial_state()
    c = load_text(text, seed=8).initial_state()
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


# --- exit codes ---------------------------------------------------------------------

def test_mismatched_counts_exit_2(tmp_path, capsys):
    code = main(["simulate", "--config", str(SCENARIOS / "mismatch.toml"), "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "same number of sign changes" in capsys.readouterr().err
    assert not (tmp_path / "trace.csv").exists()


def test_missing_file_and_bad_arguments_exit_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert main(["explode", "--config", "x.toml"]) == EXIT_CONFIG


def test_build_profile_without_zeros_exit_2(tmp_path):
    assert main(["build-profile", "--config", _cfg(tmp_path, "[grid]\nn_cells = 100\n"),
                 "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_runtime_failure_exit_1(tmp_path):
    # one round allowed for one zero that has to move: the loop cannot finish
    text = STILL.replace('fixture = "sin-k"\nk = 2\n[strategy]', 'zeros = [0.55]\n[strategy]') \
        + "k_max = 2\nM0_star = 5.0\n"
    out = tmp_path / "o"
    assert main(["simulate", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_RUNTIME
    fail = json.loads((out / "failure.json").read_text())
    assert "k_max" in fail["error"]
    assert json.loads((out / "summary.json").read_text())["status"] == "failed"


def test_empty_sweep_exit_2(tmp_path):
    text = STILL + "[sweep]\n"
    assert main(["sweep", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    text = STILL + "[sweep]\n\"strategy.eta\" = []\n"
    assert main(["sweep", "--config", _cfg(tmp_path, text), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


# --- subcommands --------------------------------------------------------------------

def test_simulate_still_scenario(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", _cfg(tmp_path, STILL), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["rounds"] == 0
    assert summary["final_l2_error"] <= 0.05
    text = (out / "trace.csv").read_text()
    assert text.splitlines()[0] == "t,phase,round,xi_1,J_star,gap,l2_err"
    rows = RunTrace.read_csv(text)
    assert [r["phase"] for r in rows] == ["init", "final"]
    assert (out / "curves.dat").read_text().startswith("# round 0 phase init")


def test_two_by_two_sweep(tmp_path):
    text = STILL + '[sweep]\n"strategy.eta" = [0.05, 0.1]\n"nonlinearity.a" = [0.0, 0.5]\n' \
        + '[nonlinearity]\nkind = "sinusoidal"\na = 0.0\n'
    out = tmp_path / "o"
    assert main(["sweep", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert len(rows) == 4
    assert {(r["nonlinearity.a"], r["strategy.eta"]) for r in rows} == \
        {("0.0", "0.05"), ("0.0", "0.1"), ("0.5", "0.05"), ("0.5", "0.1")}
    assert all(r["exit_code"] == "0" for r in rows)
    assert all((out / f"cell_{i:03d}" / "trace.csv").exists() for i in range(4))


def test_sweep_extra_axis_and_parallel_cells_agree(tmp_path):
    cfg = _cfg(tmp_path, STILL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", cfg, "--out", str(a), "--axis", "strategy.eta=0.05,0.1"]) == EXIT_OK
    assert main(["sweep", "--config", cfg, "--out", str(b), "--axis", "strategy.eta=0.05,0.1",
                 "--jobs", "2"]) == EXIT_OK
    for i in range(2):
        assert (a / f"cell_{i:03d}" / "trace.csv").read_bytes() == \
            (b / f"cell_{i:03d}" / "trace.csv").read_bytes()


def test_sweep_records_failed_cells(tmp_path):
    text = STILL.replace('fixture = "sin-k"\nk = 2\n[strategy]', 'zeros = [0.55]\n[strategy]') \
        + 'k_max = 2\nM0_star = 5.0\n[sweep]\n"grid.n_cells" = [200]\n'
    out = tmp_path / "o"
    assert main(["sweep", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_RUNTIME
    row = next(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert row["exit_code"] == "1" and row["status"] == "failed"


def test_build_profile_plateaus(tmp_path):
    text = "name = 'p'\n[grid]\nn_cells = 400\n[profile]\nzeros = [0.5]\n"
    out = tmp_path / "o"
    assert main(["build-profile", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
    w = GridFunction.from_csv((out / "profile.csv").read_text())
    plateau_left = (w.x > 0.15) & (w.x < 0.35)
    plateau_right = (w.x > 0.65) & (w.x < 0.85)
    assert np.allclose(np.abs(w.values[plateau_left]), 1.0, atol=1e-12)
    assert np.allclose(np.abs(w.values[plateau_right]), 1.0, atol=1e-12)
    assert np.sign(w.values[plateau_left][0]) == -np.sign(w.values[plateau_right][0])
    spec = profile_from_toml((out / "profile.toml").read_text())
    assert spec.interior_zeros == (0.5,)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["zeros_found"] == pytest.approx([0.5], abs=1e-12)


def test_track_two_mode(tmp_path, capsys):
    out = tmp_path / "o"
    text = (SCENARIOS / "track_two_mode.toml").read_text().replace("dt = 1e-6", "dt = 1e-5")
    assert main(["track", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
    assert "max |xi_num - xi_exact|" in capsys.readouterr().out
    rows = list(csv.DictReader(io.StringIO((out / "curves.csv").read_text())))
    assert list(rows[0]) == ["t", "xi_1", "xi_exact"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_gap_to_closed_form"] <= 1e-3
    gap = max(abs(float(r["xi_1"]) - float(r["xi_exact"])) for r in rows)
    assert gap == pytest.approx(summary["max_gap_to_closed_form"])


def test_track_with_target_event(tmp_path):
    text = (SCENARIOS / "track_two_mode.toml").read_text().replace("dt = 1e-6", "dt = 1e-5\ntargets = [0.7]")
    out = tmp_path / "o"
    assert main(["track", "--config", _cfg(tmp_path, text), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["reason"] == "target"
    assert summary["event"]["position"] == pytest.approx(0.7, abs=1e-4)


def test_steer_report(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["steer", "--config", str(SCENARIOS / "steer.toml"), "--out", str(out)]) == EXIT_OK
    rep = json.loads((out / "report.json").read_text())
    for key in ("K", "m", "slack", "achieved_error", "bound", "phase_durations"):
        assert key in rep
    assert rep["slack"] >= 0
    assert rep["m"] == pytest.approx(np.log(rep["K"]) / rep["phase_durations"][0])
    assert rep["seed"] == 7
    GridFunction.from_csv((out / "state.csv").read_text())
    assert "slack=" in capsys.readouterr().out


def test_diffuse_gronwall(tmp_path):
    out = tmp_path / "o"
    assert main(["diffuse", "--config", str(SCENARIOS / "diffuse.toml"), "--out", str(out)]) == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["gronwall_holds"]
    assert s["perturbation_norm"] == pytest.approx(1e-2)
    rows = list(csv.DictReader(io.StringIO((out / "diffuse.csv").read_text())))
    assert list(rows[0]) == ["t", "l2_norm"]
    assert float(rows[-1]["t"]) == pytest.approx(s["T"])


def test_curve_csv_reparses(tmp_path):
    tr = CurveTrace()
    tr.record(0.0, (0.3, 0.7))
    tr.record(0.1, (0.31, 0.69))
    back = CurveTrace.from_csv(tr.to_csv())
    assert back.times == tr.times and back.array().tolist() == tr.array().tolist()


def test_module_entry_point(tmp_path):
    out = tmp_path / "o"
    res = subprocess.run([sys.executable, "-m", "nodalsteer", "simulate", "--config",
                          str(SCENARIOS / "mismatch.toml"), "--out", str(out)],
                         capture_output=True, text=True)
    assert res.returncode == EXIT_CONFIG


# --- end-to-end ---------------------------------------------------------------------

@pytest.mark.slow
def test_simulate_is_deterministic(tmp_path):
    cfg = str(SCENARIOS / "one_zero.toml")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == EXIT_OK
    for name in ("trace.csv", "curves.dat", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    s = json.loads((a / "summary.json").read_text())
    assert s["final_l2_error"] <= 0.05
    assert s["audit"]["ok"]


@pytest.mark.slow
def test_h_sweep_errors_non_increasing(tmp_path):
    out = tmp_path / "o"
    code = main(["sweep", "--config", str(SCENARIOS / "sweep_h.toml"), "--out", str(out), "--jobs", "3"])
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert [int(r["grid.n_cells"]) for r in rows] == [100, 200, 400]
    assert code == EXIT_OK, [r["status"] for r in rows]
    errs = [float(r["final_l2_error"]) for r in rows]
    assert all(b <= a for a, b in zip(errs, errs[1:])), errs
