"""End-to-end experiment runners: forward model, noise, estimation, fit, files.

Each ``run_*`` function writes CSV data (frequencies in Hz, phases in
degrees, times in seconds) and a JSON fit report to ``out_dir`` and returns
a summary dict. Random streams derive from the master seed and a fixed
index per sweep point, so outputs do not depend on evaluation order.
"""

from __future__ import annotations

import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rydcav.cavity import complex_transmission, shift_observable
from rydcav.config import ConfigError, ExperimentConfig, set_path
from rydcav.design import forecast, phase_change_uncertainty
from rydcav.detection import (
    UndefinedPhaseError,
    amplitude_change_estimator,
    boxcar_filter,
    calibrate_noise_power,
    phase_change_estimator,
    reference_from_tail,
    snr,
    synthesize_trace,
)
from rydcav.dispersive import (
    collective_shift,
    coupling_profile,
    critical_photon_number,
    rabi_population,
    shift_trajectory,
    stark_detuning,
    suppressed_shift,
    true_detuning,
)
from rydcav.estimation import (
    FitResult,
    TimeScanData,
    fit_atom_calibration,
    fit_inverse_detuning,
    fit_lorentzian,
    fit_stark_detuning,
    fit_time_model,
    inverse_detuning_model,
    mcp_signal,
    time_model,
    window_average,
)

log = logging.getLogger(__name__)

TWO_PI = 2 * np.pi
PROBE_OFF_STREAM = 1_000_000


@dataclass
class RunRecord:
    scenario: str
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "run.json"
        path.write_text(json.dumps(asdict(self), indent=2, default=_json_default))
        return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _rng(seed, *index):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(i) for i in index]]))


def _write_csv(path, columns: dict, fmt="%.12g") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float).ravel() for n in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt=fmt)
    return path


def read_csv(path) -> dict:
    path = Path(path)
    with path.open() as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {n: data[:, i] for i, n in enumerate(names)}


def _write_report(path, fit: FitResult | None, **extra) -> Path:
    body = {"fit": fit.to_dict() if fit is not None else None, **extra}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(body, indent=2, default=_json_default))
    return Path(path)


def _window_sigma(cfg: ExperimentConfig, window, x_ratio=0.0):
    """Phase-change spread of a window average at the configured noise level."""
    cav = cfg.cavity()
    plan = cfg.plan()
    # without noise only relative weights matter, so any positive level will do
    n_noise = cfg.raw["noise"]["n_noise"] or 1.0
    s = snr(cfg.raw["probe"]["n_c"], cav.kappa_out, window, n_noise)
    return float(phase_change_uncertainty(s, x_ratio, plan.k))


# --------------------------------------------------------------------------- spectrum

def simulate_spectrum(cfg: ExperimentConfig, seed=None):
    cav = cfg.cavity()
    sp = cfg.raw["spectrum"]
    n = int(sp["points"])
    delta = np.linspace(-1, 1, n) * sp["span_linewidths"] * cav.kappa
    t = complex_transmission(delta, cav)
    amp, ph = np.array(t.amplitude_n, dtype=float), np.array(t.phase, dtype=float)
    if cfg.raw["noise"]["enabled"]:
        rng = _rng(cfg.seed if seed is None else seed, 0)
        amp = amp + sp["sigma_amp"] * rng.standard_normal(n)
        ph = ph + np.deg2rad(sp["sigma_phase_deg"]) * rng.standard_normal(n)
    return cav.omega_c + delta, amp, ph


def run_spectrum(cfg: ExperimentConfig, out_dir, seed=None) -> dict:
    out_dir = Path(out_dir or ".")
    cav = cfg.cavity()
    sp = cfg.raw["spectrum"]
    w, amp, ph = simulate_spectrum(cfg, seed)
    fit = fit_lorentzian(np.column_stack([w, amp, ph]), sigma_amp=sp["sigma_amp"],
                         sigma_phase=np.deg2rad(sp["sigma_phase_deg"]))
    cols = {"f_probe_hz": w / TWO_PI, "delta_p_hz": (w - cav.omega_c) / TWO_PI,
            "A_n": amp, "phi_deg": np.rad2deg(ph)}
    fit_cav = type(cav)(omega_c=fit["omega_c"], kappa=fit["kappa"], kappa_out=fit["kappa"])
    model = complex_transmission(w - fit["omega_c"], fit_cav)
    cols["A_n_fit"] = model.amplitude_n
    cols["phi_fit_deg"] = np.rad2deg(model.phase)
    if sp.get("overlay_chi_hz") is not None:
        shifted = complex_transmission(w - cav.omega_c - TWO_PI * sp["overlay_chi_hz"], cav)
        cols["A_n_shifted"] = shifted.amplitude_n
        cols["phi_shifted_deg"] = np.rad2deg(shifted.phase)
    files = [_write_csv(out_dir / "spectrum.csv", cols)]
    summary = {"f_c_hz": fit["omega_c"] / TWO_PI, "kappa_hz": fit["kappa"] / TWO_PI,
               "sigma_f_c_hz": fit.sigmas["omega_c"] / TWO_PI,
               "sigma_kappa_hz": fit.sigmas["kappa"] / TWO_PI, "converged": fit.converged}
    files.append(_write_report(out_dir / "fit_spectrum.json", fit, summary=summary))
    return {"artifacts": files, "summary": summary, "fit": fit}


def refit_spectrum(cfg: ExperimentConfig, data_dir):
    d = read_csv(Path(data_dir) / "spectrum.csv")
    sp = cfg.raw["spectrum"]
    return fit_lorentzian(np.column_stack([TWO_PI * d["f_probe_hz"], d["A_n"], np.deg2rad(d["phi_deg"])]),
                          sigma_amp=sp["sigma_amp"], sigma_phase=np.deg2rad(sp["sigma_phase_deg"]))


# --------------------------------------------------------------------------- transit scan

def probe_grid(cfg: ExperimentConfig):
    ts = cfg.raw["time_scan"]
    cav = cfg.cavity()
    if ts["delta_p_hz"] is not None:
        return TWO_PI * np.asarray(ts["delta_p_hz"], dtype=float)
    step = ts["delta_p_step_linewidths"]
    m = int(round(1.0 / step))
    return cav.kappa * step * np.arange(-m, m + 1)


def simulate_time_scan(cfg: ExperimentConfig, seed=None, n_atoms=None):
    """Synthesize and reduce a full transit scan.

    For every probe detuning the runner synthesizes ``outer`` records, each
    standing for ``inner`` averaged cycles, filters them with the boxcar
    (non-overlapping bins) and applies the estimators against the reference.
    Returns the binned :class:`TimeScanData` and reduction metadata.
    """
    seed = cfg.seed if seed is None else seed
    cav = cfg.cavity()
    ens = cfg.ensemble(n_atoms)
    prof = cfg.profile()
    noise = cfg.noise(seed)
    plan = cfg.plan()
    av = cfg.raw["averaging"]
    ts = cfg.raw["time_scan"]
    ref_cfg = cfg.raw["reference"]
    dt = av["dt"]
    t0 = ts["t0"]
    amp0 = np.sqrt(cfg.raw["probe"]["n_c"] * cav.kappa_out)
    if amp0 == 0:
        raise UndefinedPhaseError("no probe power: phase and amplitude changes are undefined")
    dps = probe_grid(cfg)
    tail_ref = ref_cfg["mode"] == "tail"

    def reduce(tr):
        return boxcar_filter(tr, plan.boxcar_len, decimate=True)

    common = dict(dt=dt, duration=ts["t_stop"], n_records=plan.outer_averages,
                  averages=plan.inner_averages, cycle_rate=plan.cycle_rate)

    off = reduce(synthesize_trace(lambda t: 0.0, noise, rng=_rng(seed, PROBE_OFF_STREAM), **common))
    p_bin = calibrate_noise_power(off, plan)
    p_ref = calibrate_noise_power(reference_from_tail(off, ref_cfg["window"]), plan) if tail_ref else p_bin

    d_amp, d_phase, s_amp, s_phase = [], [], [], []
    on_res = None
    order = np.argsort(np.abs(dps), kind="stable")  # resonant point first for normalization
    results = {}
    for idx in order:
        dp = dps[idx]
        first = int(idx) * plan.k

        def sig_fn(t, dp=dp):
            chi = shift_trajectory(t - t0, ens, prof, cav)
            return amp0 * np.asarray(complex_transmission(dp - chi, cav).value)

        sig = reduce(synthesize_trace(sig_fn, noise, rng=_rng(seed, idx, 0), first_cycle=first, **common))
        if tail_ref:
            ref = reference_from_tail(sig, ref_cfg["window"])
            offset = 0.0
        else:
            bare = amp0 * complex(complex_transmission(dp, cav).value)
            ref = reduce(synthesize_trace(lambda t, b=bare: b, noise, rng=_rng(seed, idx, 1),
                                          first_cycle=first, reference=True, **common))
            offset = noise.phase_offset
        if on_res is None:
            if np.isclose(dp, 0.0):
                pr = np.mean(np.abs(ref.records()) ** 2) - p_ref
                on_res = float(np.sqrt(max(pr, 0.0))) or amp0
            else:
                on_res = amp0
        ph = phase_change_estimator(sig, ref, plan, offset=offset)
        am = _amp_estimate(sig, ref, plan, p_bin, p_ref, on_res)
        results[idx] = (am.value, ph.value, am.stderr, ph.stderr)
        times = sig.times

    for idx in range(len(dps)):
        a, p, sa, sp_ = results[idx]
        d_amp.append(a), d_phase.append(p), s_amp.append(sa), s_phase.append(sp_)
    d_amp, d_phase = np.array(d_amp), np.array(d_phase)
    s_amp, s_phase = np.array(s_amp), np.array(s_phase)

    if noise.n_noise == 0:
        # noiseless records: block scatter is pure rounding, weight by the nominal spread
        nominal = _window_sigma(cfg, plan.boxcar_len)
        s_amp = np.full_like(s_amp, nominal)
        s_phase = np.full_like(s_phase, nominal)
    data = TimeScanData(times=times, delta_p=dps, d_amp=d_amp, d_phase=d_phase,
                        sigma_amp=s_amp, sigma_phase=s_phase)
    meta = {"noise_power_bin": p_bin, "noise_power_ref": p_ref, "on_resonance_amplitude": on_res,
            "bin_width": plan.boxcar_len}
    return data, meta


def _amp_estimate(sig, ref, plan, p_bin, p_ref, on_res):
    with warnings.catch_warnings():
        # isolated low-signal bins are expected far off resonance
        warnings.simplefilter("ignore")
        return amplitude_change_estimator(sig, ref, plan, p_bin, on_resonance_amplitude=on_res,
                                          reference_noise_power=p_ref)


def fit_time_scan(cfg: ExperimentConfig, data: TimeScanData, **kw) -> FitResult:
    ts = cfg.raw["time_scan"]
    ens = cfg.ensemble()
    return fit_time_model(data, cfg.cavity(), ens.g1_peak, ens.velocity, cfg.profile(),
                          t0_guess=ts["t0_guess"], weighting=ts["weighting"], **kw)


def _scan_columns(data: TimeScanData, model=None):
    n_dp, n_t = data.d_amp.shape
    cols = {
        "t_s": np.tile(data.times, n_dp),
        "delta_p_hz": np.repeat(data.delta_p / TWO_PI, n_t),
        "dA_n": data.d_amp, "dA_n_err": data.sigma_amp,
        "dphi_deg": np.rad2deg(data.d_phase), "dphi_err_deg": np.rad2deg(data.sigma_phase),
    }
    if model is not None:
        cols["dA_n_fit"] = model[0]
        cols["dphi_fit_deg"] = np.rad2deg(model[1])
    return cols


def load_time_scan(path) -> TimeScanData:
    d = read_csv(path)
    times = np.unique(d["t_s"])
    dps = np.unique(d["delta_p_hz"])
    order = np.lexsort((d["t_s"], d["delta_p_hz"]))
    shape = (dps.size, times.size)

    def grid(col):
        return d[col][order].reshape(shape)

    return TimeScanData(times=times, delta_p=TWO_PI * dps, d_amp=grid("dA_n"),
                        d_phase=np.deg2rad(grid("dphi_deg")), sigma_amp=grid("dA_n_err"),
                        sigma_phase=np.deg2rad(grid("dphi_err_deg")))


def run_time_scan(cfg: ExperimentConfig, out_dir, seed=None, write=True) -> dict:
    out_dir = Path(out_dir or ".")
    ts = cfg.raw["time_scan"]
    ens = cfg.ensemble()
    cav, prof = cfg.cavity(), cfg.profile()
    data, meta = simulate_time_scan(cfg, seed)
    fit = fit_time_scan(cfg, data)
    model = time_model(data.times, data.delta_p, fit["t0"], fit["N"], cav, ens.g1_peak,
                       ens.velocity, prof)

    # cuts: resonant probe versus time, and spectrum around the detuning minimum
    i0 = int(np.argmin(np.abs(data.delta_p)))
    t_center = fit["t0"] + prof.t_min
    fa, fa_err = window_average(data.times, data.d_amp, data.sigma_amp, t_center, ts["window"])
    fp, fp_err = window_average(data.times, data.d_phase, data.sigma_phase, t_center, ts["window"])
    ma, _ = window_average(data.times, model[0], data.sigma_amp, t_center, ts["window"])
    mp, _ = window_average(data.times, model[1], data.sigma_phase, t_center, ts["window"])
    t_dip = data.times[np.argmin(data.d_phase[i0])]
    true_shift = shift_trajectory(data.times - ts["t0"], ens, prof, cav)
    t_dip_model = data.times[np.argmin(shift_observable(data.delta_p[i0], true_shift, cav).delta_phase)]

    summary = {
        "N": fit["N"], "sigma_N": fit.sigmas["N"], "rel_sigma_N": fit.sigmas["N"] / abs(fit["N"]) if fit["N"] else np.inf,
        "t0": fit["t0"], "sigma_t0": fit.sigmas["t0"], "converged": fit.converged,
        "dphi_min_deg": float(np.rad2deg(data.d_phase[i0].min())),
        "t_dip": float(t_dip), "t_dip_model": float(t_dip_model),
        "injected_N": ens.n_atoms, "injected_t0": ts["t0"],
        **meta,
    }
    result = {"summary": summary, "fit": fit, "data": data, "model": model,
              "freq_cut": (data.delta_p, fa, fa_err, fp, fp_err, ma, mp)}
    if not write:
        return result
    files = [
        _write_csv(out_dir / "time_scan.csv", _scan_columns(data, model)),
        _write_csv(out_dir / "time_cut_dp0.csv", {
            "t_s": data.times, "dA_n": data.d_amp[i0], "dA_n_err": data.sigma_amp[i0],
            "dphi_deg": np.rad2deg(data.d_phase[i0]), "dphi_err_deg": np.rad2deg(data.sigma_phase[i0]),
            "dA_n_fit": model[0][i0], "dphi_fit_deg": np.rad2deg(model[1][i0])}),
        _write_csv(out_dir / "freq_cut_tmin.csv", {
            "delta_p_hz": data.delta_p / TWO_PI, "dA_n": fa, "dA_n_err": fa_err,
            "dphi_deg": np.rad2deg(fp), "dphi_err_deg": np.rad2deg(fp_err),
            "dA_n_fit": ma, "dphi_fit_deg": np.rad2deg(mp)}),
        _write_csv(out_dir / "profiles.csv", _profile_columns(cfg, data.times - fit["t0"])),
    ]
    files.append(_write_report(out_dir / "fit_time_scan.json", fit, summary=summary))
    result["artifacts"] = files
    return result


def _profile_columns(cfg, t_c):
    cav, ens, prof = cfg.cavity(), cfg.ensemble(), cfg.profile()
    inside = (t_c >= 0) & (ens.velocity * t_c <= cav.length_l)
    return {"t_c_s": t_c, "z_c_m": ens.velocity * t_c,
            "g1_hz": coupling_profile(t_c, ens, cav) / TWO_PI,
            "delta_a_raw_hz": np.where(inside, prof.curvature * (t_c - prof.t_min) ** 2 + prof.delta_min, np.nan) / TWO_PI,
            "delta_a_hz": np.where(inside, true_detuning(t_c, prof, cav, ens), np.nan) / TWO_PI}


def run_freq_scan(cfg: ExperimentConfig, out_dir, seed=None) -> dict:
    """Transit scan reduced to the spectrum in the window around ``t_min``."""
    out_dir = Path(out_dir or ".")
    res = run_time_scan(cfg, out_dir, seed, write=False)
    dp, fa, fa_err, fp, fp_err, ma, mp = res["freq_cut"]
    files = [_write_csv(out_dir / "freq_scan.csv", {
        "delta_p_hz": dp / TWO_PI, "dA_n": fa, "dA_n_err": fa_err,
        "dphi_deg": np.rad2deg(fp), "dphi_err_deg": np.rad2deg(fp_err),
        "dA_n_fit": ma, "dphi_fit_deg": np.rad2deg(mp)})]
    files.append(_write_report(out_dir / "fit_freq_scan.json", res["fit"], summary=res["summary"]))
    return {"artifacts": files, "summary": res["summary"], "fit": res["fit"]}


# --------------------------------------------------------------------------- detuning scan

def _center_coupling(cfg):
    """Single-atom coupling and detuning at the time of minimal detuning."""
    cav, ens, prof = cfg.cavity(), cfg.ensemble(), cfg.profile()
    g1 = coupling_profile(prof.t_min, ens, cav)
    d0 = true_detuning(prof.t_min, prof, cav, ens)
    return g1, d0


def run_detuning_scan(cfg: ExperimentConfig, out_dir, seed=None, write=True) -> dict:
    out_dir = Path(out_dir or ".")
    sc = cfg.raw["detuning_scan"]
    seed = cfg.seed if seed is None else seed
    cav = cfg.cavity()
    g1, d0 = _center_coupling(cfg)
    u = np.asarray(sc["u_volts"], dtype=float)
    d_true = stark_detuning(u, TWO_PI * sc["stark_coeff_hz_per_v2"], d0)
    d_true = np.atleast_1d(d_true)
    cut = TWO_PI * sc["cut_hz"]
    n = sc["n_atoms"]
    chi = collective_shift(g1, n, -n / 2, d_true)
    obs = shift_observable(0.0, chi, cav)
    d_amp, d_phase = np.atleast_1d(obs.delta_amp_n).copy(), np.atleast_1d(obs.delta_phase).copy()
    below = d_true <= cut
    if sc["resonant_loss"]:
        # crude stand-in for resonant absorption: photons lost, phase washed out
        d_amp[below] -= sc["resonant_loss"]
        d_phase[below] *= 1.0 - sc["resonant_loss"]
    sigma = np.array([_window_sigma(cfg, sc["window"], 2 * c / cav.kappa) for c in chi])
    d_meas = d_true.copy()
    if cfg.raw["noise"]["enabled"]:
        rng = _rng(seed, 0)
        d_amp = d_amp + sigma * rng.standard_normal(u.size)
        d_phase = d_phase + sigma * rng.standard_normal(u.size)
        d_meas = d_true + TWO_PI * sc["delta_a_sigma_hz"] * rng.standard_normal(u.size)
    sd = np.full(u.size, TWO_PI * max(sc["delta_a_sigma_hz"], 1.0))
    stark = fit_stark_detuning(np.column_stack([u, d_meas, sd])) if u.size >= 2 else None
    fit = fit_inverse_detuning(np.column_stack([d_meas, d_phase, sigma]), g1, cav.kappa, cut=cut)
    summary = {"N": fit["N"], "sigma_N": fit.sigmas["N"], "injected_N": n,
               "n_excluded": fit.info["n_excluded"], "g1_hz": g1 / TWO_PI}
    if stark is not None:
        summary.update(delta_a0_hz=stark["delta_a0"] / TWO_PI,
                       stark_coeff_hz_per_v2=stark["stark_coeff"] / TWO_PI)
    result = {"summary": summary, "fit": fit, "stark_fit": stark,
              "columns": {"u_v": u, "delta_a_hz": d_meas / TWO_PI, "dA_n": d_amp,
                          "dphi_deg": np.rad2deg(d_phase), "dphi_err_deg": np.rad2deg(sigma),
                          "below_crit": below.astype(float),
                          "dphi_fit_deg": np.rad2deg(inverse_detuning_model(d_meas, fit["N"], g1, cav.kappa))}}
    if write:
        files = [_write_csv(out_dir / "detuning_scan.csv", result["columns"])]
        files.append(_write_report(out_dir / "fit_detuning_scan.json", fit, summary=summary,
                                   stark_fit=stark.to_dict() if stark else None))
        result["artifacts"] = files
    return result


def refit_detuning_scan(cfg: ExperimentConfig, data_dir):
    d = read_csv(Path(data_dir) / "detuning_scan.csv")
    g1, _ = _center_coupling(cfg)
    pts = np.column_stack([TWO_PI * d["delta_a_hz"], np.deg2rad(d["dphi_deg"]), np.deg2rad(d["dphi_err_deg"])])
    return fit_inverse_detuning(pts, g1, cfg.cavity().kappa, cut=TWO_PI * cfg.raw["detuning_scan"]["cut_hz"])


# --------------------------------------------------------------------------- atom-number scan

def run_atom_scan(cfg: ExperimentConfig, out_dir, seed=None, write=True) -> dict:
    out_dir = Path(out_dir or ".")
    sc = cfg.raw["atom_scan"]
    seed = cfg.seed if seed is None else seed
    cav = cfg.cavity()
    g1, _ = _center_coupling(cfg)
    d_a = TWO_PI * sc["delta_a_hz"]
    ratio = np.asarray(sc["omega_ratio"], dtype=float)
    n = np.atleast_1d(rabi_population(ratio, sc["n_max"]))
    s_star = sc["s0"] + sc["s_max"] * n / sc["n_max"]
    chi = collective_shift(g1, n, -n / 2, d_a)
    dphi = np.arctan(2 * np.atleast_1d(chi) / cav.kappa)
    sigma = np.array([_window_sigma(cfg, sc["window"], 2 * c / cav.kappa) for c in np.atleast_1d(chi)])
    if cfg.raw["noise"]["enabled"]:
        rng = _rng(seed, 0)
        dphi = dphi + sigma * rng.standard_normal(ratio.size)
        s_star = s_star + 0.03 * rng.standard_normal(ratio.size)
    s = mcp_signal(s_star, sc["s0"])
    fit = fit_atom_calibration(np.column_stack([s, dphi, sigma]), g1, cav.kappa, d_a,
                               s_max=sc["s_max"])
    line = fit["slope"] * s
    span = np.ptp(dphi) if np.ptp(dphi) > 0 else 1.0
    linear_resid = float(np.max(np.abs(dphi - line)) / span)
    summary = {"N_max": fit["N_max"], "sigma_N_max": fit.sigmas["N_max"], "slope_rad_per_vns": fit["slope"],
               "injected_N_max": sc["n_max"], "linearity_residual": linear_resid}
    result = {"summary": summary, "fit": fit,
              "columns": {"omega_ratio": ratio, "S_vns": s, "N": n, "dphi_deg": np.rad2deg(dphi),
                          "dphi_err_deg": np.rad2deg(sigma), "dphi_fit_deg": np.rad2deg(line)}}
    if write:
        files = [_write_csv(out_dir / "atom_scan.csv", result["columns"])]
        files.append(_write_report(out_dir / "fit_atom_scan.json", fit, summary=summary))
        result["artifacts"] = files
    return result


def refit_atom_scan(cfg: ExperimentConfig, data_dir):
    d = read_csv(Path(data_dir) / "atom_scan.csv")
    sc = cfg.raw["atom_scan"]
    g1, _ = _center_coupling(cfg)
    pts = np.column_stack([d["S_vns"], np.deg2rad(d["dphi_deg"]), np.deg2rad(d["dphi_err_deg"])])
    return fit_atom_calibration(pts, g1, cfg.cavity().kappa, TWO_PI * sc["delta_a_hz"], s_max=sc["s_max"])


# --------------------------------------------------------------------------- probe power

def run_power_scan(cfg: ExperimentConfig, out_dir, seed=None, write=True) -> dict:
    out_dir = Path(out_dir or ".")
    sc = cfg.raw["power_scan"]
    seed = cfg.seed if seed is None else seed
    cav, ens = cfg.cavity(), cfg.ensemble()
    g1, d_a = _center_coupling(cfg)
    chi0 = collective_shift(g1, ens.n_atoms, ens.jz, d_a)
    n_crit = float(critical_photon_number(g1, d_a))
    n_c = np.asarray(sc["n_c"], dtype=float)
    model = np.arctan(2 * np.atleast_1d(suppressed_shift(chi0, n_c, n_crit)) / cav.kappa)
    dphi = model.copy()
    sigma = np.zeros_like(n_c)
    if cfg.raw["noise"]["enabled"]:
        plan = cfg.plan()
        rng = _rng(seed, 0)
        with np.errstate(divide="ignore"):
            s = snr(n_c, cav.kappa_out, sc["window"], cfg.raw["noise"]["n_noise"])
            sigma = np.where(n_c > 0, np.sqrt(2 + (np.tan(model)) ** 2) / np.sqrt(np.maximum(s, 1e-300) * plan.k), 0.0)
        dphi = dphi + sigma * rng.standard_normal(n_c.size) * (n_c > 0)
    plateau = float(np.arctan(2 * chi0 / cav.kappa))
    marker = float(np.arctan(2 * suppressed_shift(chi0, sc["marker_n_c"], n_crit) / cav.kappa))
    summary = {"n_crit": n_crit, "chi0_hz": chi0 / TWO_PI, "plateau_deg": np.rad2deg(plateau),
               "marker_n_c": sc["marker_n_c"], "marker_dphi_deg": np.rad2deg(marker),
               "marker_ratio": marker / plateau}
    result = {"summary": summary,
              "columns": {"n_c": n_c, "dphi_deg": np.rad2deg(dphi), "dphi_err_deg": np.rad2deg(sigma),
                          "dphi_model_deg": np.rad2deg(model), "ratio_to_plateau": model / plateau}}
    if write:
        files = [_write_csv(out_dir / "power_scan.csv", result["columns"])]
        files.append(_write_report(out_dir / "power_scan.json", None, summary=summary))
        result["artifacts"] = files
    return result


# --------------------------------------------------------------------------- forecast

def run_forecast(cfg: ExperimentConfig, out_dir, seed=None) -> dict:
    out_dir = Path(out_dir or ".")
    f = cfg.raw["forecast"]
    fc = forecast(n_atoms=f["n_atoms"], g_n=TWO_PI * f["g_n_hz"], kappa=TWO_PI * f["kappa_hz"],
                  kappa_out=TWO_PI * f["kappa_out_hz"], n_c=f["n_c"], tau=f["tau"],
                  n_noise=f["n_noise"], k=f["k"])
    out_dir.mkdir(parents=True, exist_ok=True)
    p_json = out_dir / "forecast.json"
    p_json.write_text(fc.to_json(indent=2))
    p_txt = out_dir / "forecast.txt"
    p_txt.write_text(fc.table() + "\n")
    summary = asdict(fc)
    return {"artifacts": [p_json, p_txt], "summary": summary, "forecast": fc}


RUNNERS = {
    "spectrum": run_spectrum,
    "time_scan": run_time_scan,
    "freq_scan": run_freq_scan,
    "detuning_scan": run_detuning_scan,
    "atom_scan": run_atom_scan,
    "power_scan": run_power_scan,
    "forecast": run_forecast,
}

REFITTERS = {
    "spectrum": refit_spectrum,
    "time_scan": lambda cfg, d: fit_time_scan(cfg, load_time_scan(Path(d) / "time_scan.csv")),
    "detuning_scan": refit_detuning_scan,
    "atom_scan": refit_atom_scan,
}


def run(cfg: ExperimentConfig, out_dir=None, seed=None) -> RunRecord:
    """Run the configured scenario and write ``run.json`` beside its outputs."""
    out_dir = Path(out_dir or cfg.raw["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed if seed is None else int(seed)
    rec = RunRecord(scenario=cfg.scenario, config_hash=cfg.hash(), seed=seed,
                    started=time.strftime("%Y-%m-%dT%H:%M:%S"))
    res = RUNNERS[cfg.scenario](cfg, out_dir, seed=seed)
    rec.artifacts = [str(p) for p in res["artifacts"]]
    rec.summary = {k: v for k, v in res["summary"].items() if np.isscalar(v) or v is None}
    rec.finished = time.strftime("%Y-%m-%dT%H:%M:%S")
    rec.write(out_dir)
    return rec


# --------------------------------------------------------------------------- sweeps

def _sweep_task(args):
    raw, param, value, v_idx, rep, master = args
    cfg = ExperimentConfig.from_dict(set_path(raw, param, value))
    seed = int(np.random.SeedSequence([master, v_idx, rep]).generate_state(1)[0])
    res = RUNNERS[cfg.scenario](cfg, None, seed=seed, **({"write": False} if cfg.scenario in _NO_WRITE else {}))
    summ = {k: float(v) for k, v in res["summary"].items() if isinstance(v, (int, float, np.floating, bool))}
    return v_idx, rep, seed, summ


_NO_WRITE = {"time_scan", "detuning_scan", "atom_scan", "power_scan"}


def sweep(cfg: ExperimentConfig, param: str, values, out_dir, replicas=1, workers=1) -> Path:
    """Repeat the configured scenario over ``values`` of the dotted key ``param``.

    Writes ``sweep.csv`` with one row per (value, replica) in index order.
    """
    if len(values) == 0:
        raise ConfigError("sweep grid is empty")
    out_dir = Path(out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.scenario not in _NO_WRITE:
        raise ConfigError(f"scenario {cfg.scenario!r} cannot be swept")
    tasks = [(cfg.raw, param, v, i, r, cfg.seed) for i, v in enumerate(values) for r in range(replicas)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: (r[0], r[1]))
    keys = sorted({k for *_, s in rows for k in s})
    cols = {"value": [float(values[r[0]]) for r in rows], "replica": [r[1] for r in rows],
            "seed": [r[2] for r in rows]}
    for k in keys:
        cols[k] = [r[3].get(k, np.nan) for r in rows]
    path = _write_csv(out_dir / "sweep.csv", cols)
    rec = RunRecord(scenario=cfg.scenario, config_hash=cfg.hash(), seed=cfg.seed,
                    started="", finished=time.strftime("%Y-%m-%dT%H:%M:%S"), artifacts=[str(path)],
                    summary={"param": param, "n_values": len(values), "replicas": replicas})
    rec.write(out_dir)
    return path
