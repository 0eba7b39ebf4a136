import json
import subprocess
import sys

import pytest

from rydcav.cli import EXIT_CONFIG, EXIT_DOMAIN, EXIT_FIT, EXIT_OK, main


def write_cfg(tmp_path, **body):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(body))
    return str(p)


def test_simulate_and_refit(tmp_path, capsys):
    out = tmp_path / "spec"
    assert main(["simulate", "--scenario", "spectrum", "--out", str(out), "--seed", "3"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["converged"] is True
    assert json.loads((out / "run.json").read_text())["seed"] == 3
    assert main(["fit", "--scenario", "spectrum", "--out", str(out)]) == EXIT_OK
    refit = json.loads((out / "refit_spectrum.json").read_text())
    assert refit["fit"]["params"]["kappa"] == pytest.approx(summary["kappa_hz"] * 2 * 3.141592653589793, rel=1e-6)


def test_forecast_prints_table(tmp_path, capsys):
    assert main(["forecast", "--out", str(tmp_path)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "sigma_N" in text and (tmp_path / "forecast.json").exists()


def test_sweep(tmp_path, capsys):
    code = main(["sweep", "--scenario", "detuning_scan", "--param", "detuning_scan.n_atoms",
                 "--values", "3000,4300", "--replicas", "2", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 5


@pytest.mark.parametrize("body", [{"atom_scan": {"omega_ratio": []}}, {"scenario": "nope"}, {"extra": 1}])
def test_config_errors_exit_2(tmp_path, body):
    assert main(["simulate", "--config", write_cfg(tmp_path, **body), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_empty_sweep_exit_2(tmp_path):
    assert main(["sweep", "--scenario", "atom_scan", "--param", "atom_scan.n_max", "--values", "",
                 "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_data_exit_2(tmp_path):
    assert main(["fit", "--scenario", "spectrum", "--data", str(tmp_path / "none")]) == EXIT_CONFIG


def test_fit_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path, scenario="spectrum", spectrum={"points": 3})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_FIT


def test_domain_error_exit_4(tmp_path):
    cfg = write_cfg(tmp_path, scenario="atom_scan", atom_scan={"delta_a_hz": 0.0})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == EXIT_DOMAIN


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "rydcav", "simulate", "--scenario", "power_scan",
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "power_scan.csv").exists()
    bad = subprocess.run([sys.executable, "-m", "rydcav", "simulate", "--scenario", "nope"],
                         capture_output=True, text=True, cwd=tmp_path)
    assert bad.returncode == 2 and "config error" in bad.stderr
