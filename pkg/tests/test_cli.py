import json
import subprocess
import sys

import numpy as np
import pytest

from excursion.cli import main, read_config
from excursion.panel import PanelDataset, write_panel
from excursion.simulation import ScenarioConfig, gen_scenario, replicate_rng


@pytest.fixture
def scenario_csv(tmp_path):
    path = tmp_path / "s1.csv"
    write_panel(gen_scenario(ScenarioConfig(1, 60, 20), replicate_rng(0, 0)), path)
    return path


def test_analyze_happy_path(scenario_csv, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["analyze", "--input", str(scenario_csv), "--categorical", "Z",
                 "--output", str(out)])
    assert code == 0
    assert "p-Value" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert len(report["estimates"]) == 1
    assert np.isfinite(report["se"][0])
    assert report["config"]["estimator"] == "EMEE-NonP"
    assert (out / "report.txt").read_text().startswith("# ")


def test_analyze_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("participant,t,availability,arm\n1,1,1,0\n")
    assert main(["analyze", "--input", str(bad)]) == 2
    assert "outcome" in capsys.readouterr().err


def test_analyze_missing_file(tmp_path):
    assert main(["analyze", "--input", str(tmp_path / "nope.csv")]) == 2


def test_analyze_estimation_failure(tmp_path, capsys):
    data = gen_scenario(ScenarioConfig(1, 5, 5), replicate_rng(0, 0))
    path = tmp_path / "untreated.csv"
    write_panel(data.replace(arm=np.zeros(data.n_records, dtype=int)), path)
    assert main(["analyze", "--input", str(path)]) == 1
    assert "error" in capsys.readouterr().err


def test_analyze_decaying_moderated_effect(tmp_path, capsys):
    rng = np.random.default_rng(2024)
    n, T = 300, 30
    days = np.tile(np.arange(T, dtype=float), n)
    arm = (rng.random(n * T) < 0.5).astype(int)
    y = rng.poisson(2.0 * np.exp(arm * (0.5 - 0.03 * days)))
    data = PanelDataset(np.repeat(np.arange(1, n + 1), T), np.tile(np.arange(1, T + 1), n),
                        np.ones(n * T, dtype=int), arm, y, {"days": days}, np.full(n * T, 0.5))
    path = tmp_path / "decay.csv"
    write_panel(data, path)
    out = tmp_path / "decay"
    assert main(["analyze", "--input", str(path), "--moderator", "1", "--moderator", "days",
                 "--output", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["estimates"][1] < 0
    assert report["ci_upper"][1] < 0


def test_config_file_and_flag_precedence(tmp_path, scenario_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"input={scenario_csv}\nestimator=GEE-IND\n")
    out = tmp_path / "o"
    assert main(["analyze", "--config", str(cfg), "--estimator", "EMEE", "--control", "Z",
                 "--output", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["config"]["estimator"] == "EMEE"


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour=blue\n")
    assert main(["simulate", "--config", str(cfg)]) == 2


def _simulate(out, *extra):
    return main(["simulate", "--scenario", "1", "--n", "20", "--T", "10", "--R", "5",
                 "--estimator", "EMEE-NonP", "--seed", "3", "--output", str(out), *extra])


def test_simulate_deterministic_and_rerun_from_header(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert _simulate(a) == 0
    assert _simulate(b, "--workers", "2") == 0
    first = (a / "summary.csv").read_bytes()
    assert first == (b / "summary.csv").read_bytes()
    assert (a / "summary.txt").read_bytes() == (b / "summary.txt").read_bytes()
    embedded = read_config(a / "summary.csv")
    assert embedded["seed"] == "3" and embedded["R"] == "5"
    assert main(["simulate", "--config", str(a / "summary.csv"), "--output", str(c)]) == 0
    assert (c / "summary.csv").read_bytes() == first
    rows = [r for r in first.decode().splitlines() if not r.startswith("#")]
    assert rows[0].startswith("Estimator,Parameter,Time Length,Bias")
    assert len(rows) == 2


def test_simulate_multiple_horizons(tmp_path):
    out = tmp_path / "multi"
    assert main(["simulate", "--n", "15", "--T", "8,12", "--R", "3", "--estimator", "GEE-IND",
                 "--output", str(out)]) == 0
    rows = [r for r in (out / "summary.csv").read_text().splitlines() if not r.startswith("#")]
    assert [r.split(",")[2] for r in rows[1:]] == ["8", "12"]


def test_simulate_scenario3_probability_range(tmp_path):
    out = tmp_path / "ts"
    assert main(["simulate", "--scenario", "3", "--n", "20", "--T", "25", "--R", "50",
                 "--estimator", "EMEE-NonP", "--output", str(out), "--workers", "4"]) == 0
    diag = [line for line in (out / "summary.txt").read_text().splitlines()
            if line.startswith("# diagnostics:")][0]
    fields = dict(item.split("=") for item in diag.split(":", 1)[1].split())
    assert 0.05 <= float(fields["prob_min"]) and float(fields["prob_max"]) <= 0.95
    assert fields["replicates"] == "50"


def test_simulate_all_replicates_failed(tmp_path, capsys):
    # a single record cannot support any fit
    code = main(["simulate", "--n", "1", "--T", "1", "--R", "2", "--estimator", "GEE-IND",
                 "--output", str(tmp_path / "f")])
    assert code == 1
    assert "failed:" in capsys.readouterr().err


def test_simulate_rejects_small_R():
    assert main(["simulate", "--R", "1"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "excursion", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
