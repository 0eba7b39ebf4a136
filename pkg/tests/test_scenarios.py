import json

import numpy as np
import pytest

from rydcav.detection import UndefinedPhaseError
from rydcav.config import ConfigError, ExperimentConfig, config_hash, default_config
from rydcav.scenarios import (RUNNERS, load_time_scan, read_csv, run, run_atom_scan,
                              run_detuning_scan, run_power_scan, run_spectrum, run_time_scan,
                              simulate_time_scan, sweep)

KAPPA_HZ = 4.1e6


@pytest.fixture(scope="module")
def quiet_time_scan(tmp_path_factory):
    out = tmp_path_factory.mktemp("ts_quiet")
    cfg = default_config(noise={"enabled": False})
    return run_time_scan(cfg, out), out


@pytest.fixture(scope="module")
def noisy_time_scan(tmp_path_factory):
    out = tmp_path_factory.mktemp("ts_noisy")
    return run_time_scan(default_config(), out), out


# --------------------------------------------------------------------------- spectrum

def test_spectrum_noiseless_exact(tmp_path, quiet_cfg):
    res = run_spectrum(quiet_cfg, tmp_path)
    assert res["summary"]["kappa_hz"] == pytest.approx(KAPPA_HZ, rel=1e-9)
    cols = read_csv(tmp_path / "spectrum.csv")
    # overlay: bare curve moved 1 MHz down
    u = 2 * (cols["delta_p_hz"] + 1e6) / KAPPA_HZ
    np.testing.assert_allclose(cols["A_n_shifted"], 1 / np.sqrt(1 + u**2), rtol=1e-9)
    np.testing.assert_allclose(cols["phi_shifted_deg"], -np.rad2deg(np.arctan(u)), rtol=1e-9, atol=1e-9)
    assert json.loads((tmp_path / "fit_spectrum.json").read_text())["fit"]["converged"]


def test_spectrum_without_overlay(tmp_path):
    cfg = default_config(noise={"enabled": False}, spectrum={"overlay_chi_hz": None})
    run_spectrum(cfg, tmp_path)
    assert "A_n_shifted" not in read_csv(tmp_path / "spectrum.csv")


def test_spectrum_noisy(tmp_path, cfg):
    s = run_spectrum(cfg, tmp_path)["summary"]
    assert abs(s["kappa_hz"] - KAPPA_HZ) < 3 * s["sigma_kappa_hz"]


# --------------------------------------------------------------------------- transit scan

def test_time_scan_noiseless(quiet_time_scan):
    res, out = quiet_time_scan
    s = res["summary"]
    assert s["N"] == pytest.approx(3300, rel=5e-3)
    assert abs(s["t0"] - 1e-6) < 10e-9
    assert abs(s["t_dip"] - s["t_dip_model"]) <= s["bin_width"]
    for name in ("time_scan.csv", "time_cut_dp0.csv", "freq_cut_tmin.csv", "profiles.csv", "fit_time_scan.json"):
        assert (out / name).exists()


def test_time_scan_grid(quiet_time_scan):
    data = quiet_time_scan[0]["data"]
    np.testing.assert_allclose(data.delta_p / (2 * np.pi * KAPPA_HZ), np.arange(-8, 9) / 8, atol=1e-12)
    assert data.d_phase.shape == (17, 120)


def test_time_scan_csv_round_trip(quiet_time_scan):
    res, out = quiet_time_scan
    back = load_time_scan(out / "time_scan.csv")
    np.testing.assert_allclose(back.d_phase, res["data"].d_phase, rtol=1e-9, atol=1e-15)
    np.testing.assert_allclose(back.times, res["data"].times, rtol=1e-9)


def test_time_scan_noisy_round_trip(noisy_time_scan):
    s = noisy_time_scan[0]["summary"]
    assert s["converged"]
    assert abs(s["N"] - 3300) < 2 * s["sigma_N"]
    assert s["rel_sigma_N"] <= 0.06
    assert s["dphi_min_deg"] < 0


def test_freq_cut_reproduces_freq_scan(tmp_path, noisy_time_scan):
    res, out = noisy_time_scan
    run(default_config(scenario="freq_scan"), tmp_path)
    a = read_csv(out / "freq_cut_tmin.csv")
    b = read_csv(tmp_path / "freq_scan.csv")
    for col in ("delta_p_hz", "dphi_deg", "dA_n", "dphi_err_deg"):
        np.testing.assert_array_equal(a[col], b[col])


def test_offset_removed_in_trace_reference_mode():
    cfg = default_config(noise={"enabled": False}, reference={"mode": "trace"})
    data, _ = simulate_time_scan(cfg, n_atoms=0)
    assert np.max(np.abs(np.rad2deg(data.d_phase))) < 0.005


def test_probe_off_scan_is_undefined():
    cfg = default_config(probe={"n_c": 0.0}, averaging={"inner": 10, "outer": 20},
                         time_scan={"delta_p_hz": [0.0]})
    with pytest.raises(UndefinedPhaseError):
        simulate_time_scan(cfg)


# --------------------------------------------------------------------------- detuning, atom, power scans

def test_detuning_scan_noiseless(tmp_path, quiet_cfg):
    res = run_detuning_scan(quiet_cfg, tmp_path)
    s = res["summary"]
    assert s["N"] == pytest.approx(4300, rel=5e-3)
    cols = read_csv(tmp_path / "detuning_scan.csv")
    # U = 0 row carries the zero-field detuning
    from rydcav.scenarios import _center_coupling
    _, d0 = _center_coupling(quiet_cfg)
    assert cols["u_v"][0] == 0.0
    assert cols["delta_a_hz"][0] == pytest.approx(d0 / (2 * np.pi), rel=1e-9)
    below = cols["delta_a_hz"] <= 10e6
    np.testing.assert_array_equal(cols["below_crit"], below.astype(float))
    assert s["n_excluded"] == below.sum() > 0


def test_detuning_scan_resonant_loss_is_excluded(tmp_path):
    clean = run_detuning_scan(default_config(noise={"enabled": False}), tmp_path, write=False)
    dirty = run_detuning_scan(default_config(noise={"enabled": False}, detuning_scan={"resonant_loss": 0.5}),
                              tmp_path, write=False)
    assert dirty["summary"]["N"] == clean["summary"]["N"]


def test_atom_scan_noiseless(tmp_path, quiet_cfg):
    res = run_atom_scan(quiet_cfg, tmp_path)
    s = res["summary"]
    cols = read_csv(tmp_path / "atom_scan.csv")
    assert cols["omega_ratio"][0] == 0.0 and cols["S_vns"][0] == 0.0 and cols["dphi_deg"][0] == 0.0
    assert s["N_max"] == pytest.approx(4100, rel=5e-3)
    assert s["linearity_residual"] < 1e-3


def test_power_scan(tmp_path, quiet_cfg):
    res = run_power_scan(quiet_cfg, tmp_path)
    cols = read_csv(tmp_path / "power_scan.csv")
    n_crit = res["summary"]["n_crit"]
    assert np.all(np.isfinite(cols["dphi_deg"])) and cols["n_c"][0] == 0.0
    low = cols["n_c"] < 1e-2 * n_crit
    assert np.all(np.abs(cols["ratio_to_plateau"][low] - 1) < 0.01)
    at3 = run_power_scan(default_config(noise={"enabled": False}, power_scan={"n_c": [3 * n_crit]}),
                         tmp_path, write=False)
    # small-angle regime: phase ratio tracks the shift ratio
    assert at3["columns"]["ratio_to_plateau"][0] == pytest.approx(0.5, abs=0.01)


def test_power_scan_noisy_has_finite_output(tmp_path, cfg):
    cols = run_power_scan(cfg, tmp_path, write=False)["columns"]
    assert all(np.all(np.isfinite(v)) for v in cols.values())
    assert cols["dphi_err_deg"][0] == 0.0


# --------------------------------------------------------------------------- plumbing

def test_csv_headers_name_units(tmp_path):
    for scenario in ("spectrum", "detuning_scan", "atom_scan", "power_scan"):
        run(default_config(scenario=scenario), tmp_path / scenario)
    for path in tmp_path.rglob("*.csv"):
        header = path.read_text().splitlines()[0].split(",")
        for name in header:
            if "phi" in name:
                assert name.endswith("_deg") or name.endswith("_deg_err"), (path.name, name)
            if name.startswith("delta") or name.startswith("f_"):
                assert name.endswith("_hz"), (path.name, name)


def test_reproducible_bytes(tmp_path):
    for scenario in ("spectrum", "detuning_scan", "atom_scan", "power_scan"):
        a = run(default_config(scenario=scenario), tmp_path / "a" / scenario)
        b = run(default_config(scenario=scenario), tmp_path / "b" / scenario)
        for pa, pb in zip(a.artifacts, b.artifacts):
            if pa.endswith(".csv"):
                assert open(pa, "rb").read() == open(pb, "rb").read()


def test_time_scan_reproducible(tmp_path):
    cfg = default_config(averaging={"outer": 50})
    a = run_time_scan(cfg, tmp_path / "a")
    run_time_scan(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "time_scan.csv").read_bytes() == (tmp_path / "b" / "time_scan.csv").read_bytes()
    c = run_time_scan(cfg, tmp_path / "c", seed=5)
    assert c["summary"]["N"] != a["summary"]["N"]


def test_run_record(tmp_path):
    rec = run(default_config(scenario="forecast"), tmp_path)
    body = json.loads((tmp_path / "run.json").read_text())
    assert body["config_hash"] == rec.config_hash and body["scenario"] == "forecast"
    assert all(p.startswith(str(tmp_path)) for p in body["artifacts"])
    assert body["summary"]["snr"] == pytest.approx(8.29e4, rel=0.01)


def test_sweep_order_independent(tmp_path):
    cfg = default_config(scenario="atom_scan")
    one = sweep(cfg, "atom_scan.n_max", [3000, 4100], tmp_path / "serial", replicas=2, workers=1)
    two = sweep(cfg, "atom_scan.n_max", [3000, 4100], tmp_path / "pool", replicas=2, workers=2)
    assert one.read_bytes() == two.read_bytes()
    rows = read_csv(one)
    assert rows["value"].tolist() == [3000, 3000, 4100, 4100]
    assert len(set(rows["seed"])) == 4


def test_sweep_empty_grid(tmp_path):
    with pytest.raises(ConfigError):
        sweep(default_config(scenario="atom_scan"), "atom_scan.n_max", [], tmp_path)


# --------------------------------------------------------------------------- config

def test_config_hash_ignores_key_order():
    a = {"b": 1, "a": {"y": 2.0, "x": [1, 2]}}
    b = {"a": {"x": [1, 2], "y": 2.0}, "b": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "b": 2})


def test_config_load_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"scenario": "spectrum", "cavity": {"kappa_hz": 5e6}}))
    cfg = ExperimentConfig.load(path, {"seed": 3})
    assert cfg.scenario == "spectrum" and cfg.seed == 3
    assert cfg.cavity().kappa == pytest.approx(2 * np.pi * 5e6)
    assert cfg.raw["cavity"]["f_c"] == 21.532e9


@pytest.mark.parametrize("bad", [
    {"scenario": "nope"},
    {"bogus": 1},
    {"atom_scan": {"omega_ratio": []}},
    {"power_scan": {"n_c": []}},
    {"detuning_scan": {"u_volts": []}},
    {"spectrum": {"points": 0}},
    {"cavity": {"kappa_hz": -1}},
    {"schema_version": 99},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_config_unreadable(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_all_scenarios_have_runners():
    from rydcav.config import SCENARIOS
    assert set(SCENARIOS) == set(RUNNERS)
