"""Fits of spectra, transit-time scans, detuning scans and atom-number calibrations.

Models that are linear in their parameters are solved in closed form by
weighted regression; the rest use a bounded trust-region least-squares
solver. Standard errors come from the inverse curvature of the weighted
objective at the optimum, scaled by the reduced chi-square when there are
spare degrees of freedom.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import least_squares

from rydcav.cavity import CavityMode, complex_transmission, shift_observable
from rydcav.design import atom_number_from_phase
from rydcav.dispersive import (
    DELTA_A_CRIT,
    AtomEnsemble,
    DetuningProfile,
    coupling_profile,
    true_detuning,
)


class FitError(RuntimeError):
    """Degenerate or underdetermined fit."""


@dataclass
class FitResult:
    params: dict
    sigmas: dict
    residual_norm: float
    converged: bool
    n_eval: int
    dof: int = 0
    info: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["info"] = {k: v for k, v in self.info.items() if _jsonable(v)}
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(v):
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


@dataclass
class TimeScanData:
    """Rectangular (probe detuning x record time) grid of shift observables.

    Arrays have shape ``(len(delta_p), len(times))``; phases in radians.
    """

    times: np.ndarray
    delta_p: np.ndarray
    d_amp: np.ndarray
    d_phase: np.ndarray
    sigma_amp: np.ndarray
    sigma_phase: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.delta_p = np.atleast_1d(np.asarray(self.delta_p, dtype=float))
        shape = (self.delta_p.size, self.times.size)
        for name in ("d_amp", "d_phase", "sigma_amp", "sigma_phase"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), shape).copy()
            setattr(self, name, arr)
        if np.any(self.sigma_amp <= 0) or np.any(self.sigma_phase <= 0):
            raise ValueError("standard errors must be positive")

    def shifted(self, s):
        """Same data with the record time axis moved by ``s``."""
        return TimeScanData(self.times + s, self.delta_p, self.d_amp, self.d_phase,
                            self.sigma_amp, self.sigma_phase)


def _covariance(jac, resid, n_par, scale=True):
    m = resid.size
    dof = m - n_par
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    if scale and dof > 0:
        cov = cov * float(resid @ resid) / dof
    return cov, dof


def _wrap(a):
    return np.angle(np.exp(1j * a))


# --------------------------------------------------------------------------- spectra

def fit_lorentzian(points, sigma_amp=1e-2, sigma_phase=1e-2, max_nfev=200) -> FitResult:
    """Joint amplitude and phase fit of a transmission spectrum.

    ``points`` rows are ``(omega_p, A_n, phi)`` with ``omega_p`` the probe
    frequency in rad/s in any fixed frame; ``omega_c`` is returned in the
    same frame.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("points must be an (n, 3) array of (omega_p, A_n, phi)")
    if len(pts) < 5:
        raise FitError(f"need at least 5 spectrum points, got {len(pts)}")
    w, amp, ph = pts.T
    sa = np.broadcast_to(np.asarray(sigma_amp, dtype=float), w.shape)
    sp = np.broadcast_to(np.asarray(sigma_phase, dtype=float), w.shape)

    # start: tan(-phi) is linear in omega with slope 2/kappa
    use = np.abs(ph) < 1.2
    wm = w.mean()
    if use.sum() >= 2 and np.ptp(w[use]) > 0:
        slope, icpt = np.polyfit(w[use] - wm, np.tan(-ph[use]), 1)
    else:
        slope, icpt = 0.0, 0.0
    if slope > 0:
        kappa0, wc0 = 2.0 / slope, wm - icpt / slope
    else:
        wc0 = w[np.argmax(amp)]
        kappa0 = max(np.ptp(w) / 4.0, 1.0)
    ref, scale = wc0, kappa0

    def resid(p):
        cav = CavityMode(omega_c=0.0, kappa=abs(p[1]) * scale, kappa_out=abs(p[1]) * scale)
        t = complex_transmission(w - (ref + p[0] * scale), cav)
        return np.concatenate([(t.amplitude_n - amp) / sa, _wrap(t.phase - ph) / sp])

    res = least_squares(resid, x0=[0.0, 1.0], method="lm", max_nfev=max_nfev)
    cov, dof = _covariance(res.jac, res.fun, 2)
    wc = ref + res.x[0] * scale
    kappa = abs(res.x[1]) * scale
    sig = np.sqrt(np.diag(cov)) * scale
    span = np.ptp(w) / kappa
    return FitResult(
        params={"omega_c": wc, "kappa": kappa},
        sigmas={"omega_c": float(sig[0]), "kappa": float(sig[1])},
        residual_norm=float(res.fun @ res.fun),
        converged=bool(res.success),
        n_eval=int(res.nfev),
        dof=dof,
        info={"span_linewidths": float(span), "message": res.message},
    )


# --------------------------------------------------------------------------- closed-form regressions

def _weighted_linear(x_cols, y, sigma):
    X = np.column_stack(x_cols)
    w = 1.0 / np.asarray(sigma, dtype=float)
    Xw, yw = X * w[:, None], y * w
    if np.linalg.matrix_rank(Xw) < X.shape[1]:
        raise FitError("degenerate design matrix")
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    r = yw - Xw @ coef
    cov, dof = _covariance(Xw, r, X.shape[1])
    return coef, cov, r, dof


def fit_detuning_parabola(samples) -> FitResult:
    """Weighted quadratic regression of raw detuning versus transit time.

    ``samples`` rows are ``(t_c, detuning, sigma)``. Returns curvature,
    time and value of the minimum; their errors follow from the regression
    covariance by linear propagation.
    """
    s = np.asarray(samples, dtype=float)
    if s.ndim != 2 or s.shape[1] != 3:
        raise ValueError("samples must be an (n, 3) array of (t, detuning, sigma)")
    if len(s) < 3:
        raise FitError("a parabola needs at least 3 samples")
    t, y, sig = s.T
    tm = t.mean()
    tc = t - tm
    (c0, c1, c2), cov, r, dof = _weighted_linear([np.ones_like(tc), tc, tc**2], y, sig)
    if not c2 > 0:
        raise FitError("fitted parabola has no minimum")
    t_min = tm - c1 / (2 * c2)
    d_min = c0 - c1**2 / (4 * c2)
    jac = np.array([
        [0.0, 0.0, 1.0],
        [0.0, -1.0 / (2 * c2), c1 / (2 * c2**2)],
        [1.0, -c1 / (2 * c2), c1**2 / (4 * c2**2)],
    ])
    err = np.sqrt(np.diag(jac @ cov @ jac.T))
    return FitResult(
        params={"curvature": float(c2), "t_min": float(t_min), "delta_min": float(d_min)},
        sigmas={"curvature": float(err[0]), "t_min": float(err[1]), "delta_min": float(err[2])},
        residual_norm=float(r @ r),
        converged=True,
        n_eval=1,
        dof=dof,
    )


def fit_stark_detuning(samples) -> FitResult:
    """Quadratic dc Stark law ``Delta_a(U) = delta_a0 + stark_coeff U^2``.

    ``samples`` rows are ``(U, Delta_a, sigma)``.
    """
    s = np.asarray(samples, dtype=float)
    if len(s) < 2:
        raise FitError("need at least 2 voltages")
    u, y, sig = s.T
    (d0, c), cov, r, dof = _weighted_linear([np.ones_like(u), u**2], y, sig)
    err = np.sqrt(np.diag(cov))
    return FitResult(
        params={"delta_a0": float(d0), "stark_coeff": float(c)},
        sigmas={"delta_a0": float(err[0]), "stark_coeff": float(err[1])},
        residual_norm=float(r @ r), converged=True, n_eval=1, dof=dof,
    )


# --------------------------------------------------------------------------- atom number

def inverse_detuning_model(delta_a, n_atoms, g1, kappa):
    """Resonant phase change ``arctan(-2 g1^2 N / (Delta_a kappa))``."""
    return np.arctan(-2.0 * g1**2 * n_atoms / (np.asarray(delta_a) * kappa))


def fit_inverse_detuning(points, g1, kappa, cut=DELTA_A_CRIT) -> FitResult:
    """Atom number from resonant phase changes measured at several detunings.

    ``points`` rows are ``(Delta_a, dphi, sigma)``; rows at or below ``cut``
    are dropped before fitting.
    """
    p = np.asarray(points, dtype=float)
    keep = p[:, 0] > cut
    if not np.any(keep):
        raise FitError("no points above the critical detuning")
    d, y, sig = p[keep].T
    u = -2.0 * g1**2 / (d * kappa)
    n0 = float(np.sum(np.tan(y) * u / sig**2) / np.sum(u**2 / sig**2))
    scale = max(abs(n0), 1.0)

    def resid(q):
        return (inverse_detuning_model(d, q[0] * scale, g1, kappa) - y) / sig

    res = least_squares(resid, x0=[n0 / scale], method="lm" if keep.sum() > 1 else "trf")
    cov, dof = _covariance(res.jac, res.fun, 1)
    return FitResult(
        params={"N": float(res.x[0] * scale)},
        sigmas={"N": float(np.sqrt(cov[0, 0]) * scale)},
        residual_norm=float(res.fun @ res.fun),
        converged=bool(res.success),
        n_eval=int(res.nfev),
        dof=dof,
        info={"n_used": int(keep.sum()), "n_excluded": int((~keep).sum())},
    )


def fit_atom_calibration(points, g1, kappa, delta_a, s_max=None) -> FitResult:
    """Straight line through the origin of ``dphi`` versus MCP signal ``S``.

    The phase predicted at ``s_max`` (default: the largest ``S``) is turned
    into an atom number, which calibrates the signal axis.
    """
    p = np.asarray(points, dtype=float)
    s, y, sig = p.T
    if np.all(s == 0) or len(p) < 1:
        raise FitError("degenerate signal range")
    (slope,), cov, r, dof = _weighted_linear([s], y, sig)
    s_max = float(np.max(s)) if s_max is None else float(s_max)
    dphi_max = slope * s_max
    n_max = atom_number_from_phase(dphi_max, delta_a, kappa, g1)
    dn = delta_a * kappa / (2 * g1**2) / np.cos(dphi_max) ** 2 * s_max * np.sqrt(cov[0, 0])
    return FitResult(
        params={"slope": float(slope), "N_max": float(n_max)},
        sigmas={"slope": float(np.sqrt(cov[0, 0])), "N_max": float(dn)},
        residual_norm=float(r @ r), converged=True, n_eval=1, dof=dof,
        info={"s_max": s_max, "atoms_per_signal": float(n_max / s_max)},
    )


def mcp_signal(s_star, s0):
    """Rydberg signal of the target state, ``S* - S0`` (V ns)."""
    return np.subtract(s_star, s0)


def window_average(times, values, stderr, center, width=300e-9):
    """Mean and standard error of independent bins within ``width`` around ``center``.

    Works along the last axis, so a 2-D (detuning x time) grid reduces to a
    spectrum.
    """
    times = np.asarray(times)
    sel = np.abs(times - center) <= width / 2 + 1e-15
    if not np.any(sel):
        raise ValueError("no bins inside the averaging window")
    v = np.asarray(values)[..., sel]
    e = np.asarray(stderr)[..., sel]
    n = sel.sum()
    return v.mean(axis=-1), np.sqrt(np.sum(e**2, axis=-1)) / n


# --------------------------------------------------------------------------- transit model

def time_model(times, delta_p, t0, n_atoms, cavity: CavityMode, g1_peak: float,
               velocity: float, profile: DetuningProfile):
    """Modeled ``(dA_n, dphi)`` on a (probe detuning x record time) grid.

    Record time ``t`` maps to transit time ``t - t0``; the ensemble is fully
    in the lower level.
    """
    unit = AtomEnsemble(n_atoms=1.0, jz=-0.5, g1_peak=g1_peak, velocity=velocity)
    t_c = np.asarray(times) - t0
    g1 = coupling_profile(t_c, unit, cavity)
    d = true_detuning(t_c, profile, cavity, unit)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_atom = np.where(g1 > 0, -np.square(g1) / d, 0.0)
    chi = n_atoms * per_atom
    obs = shift_observable(np.asarray(delta_p)[:, None], chi[None, :], cavity)
    return obs.delta_amp_n, obs.delta_phase


def _dispersive_mask(times, t0, cavity, g1_peak, velocity, profile, cut):
    unit = AtomEnsemble(n_atoms=1.0, jz=-0.5, g1_peak=g1_peak, velocity=velocity)
    t_c = np.asarray(times) - t0
    inside = coupling_profile(t_c, unit, cavity) > 0
    d = true_detuning(t_c, profile, cavity, unit)
    return ~inside | (np.abs(d) > cut), inside


def fit_time_model(data: TimeScanData, cavity: CavityMode, g1_peak: float, velocity: float,
                   profile: DetuningProfile, t0_guess: float = 0.0, t0_span: float = 1e-6,
                   n_starts: int = 21, weighting: str = "inverse_variance",
                   cut: float = DELTA_A_CRIT, bootstrap: int = 0, seed: int = 0,
                   max_nfev: int = 200) -> FitResult:
    """Fit time origin ``t0`` and atom number ``N`` to a transit scan.

    The time origin is confined to ``t0_guess +/- t0_span``, the window in
    which the excitation pulse is known to lie. A grid of ``n_starts``
    origins in that window seeds the local optimizer; at each grid point the atom number is first
    estimated by linear regression, which is accurate while ``chi << kappa``.

    ``weighting`` is ``"inverse_variance"`` (default), ``"phase_only"`` or
    ``"equal"`` (unit weights on both quadratures). With ``bootstrap > 0``
    parametric-bootstrap errors are reported in ``info`` next to the
    curvature-based ones. ``t0_span=0`` holds the origin at ``t0_guess`` and
    fits ``N`` alone; without atoms the origin is not identifiable, so this
    is the form to use for a null measurement.
    """
    if t0_span < 0:
        raise ValueError("t0_span must be non-negative")
    if weighting == "inverse_variance":
        wa, wp = 1.0 / data.sigma_amp, 1.0 / data.sigma_phase
    elif weighting == "phase_only":
        wa, wp = np.zeros_like(data.sigma_amp), 1.0 / data.sigma_phase
    elif weighting == "equal":
        wa, wp = np.ones_like(data.sigma_amp), np.ones_like(data.sigma_phase)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")

    cols, inside = _dispersive_mask(data.times, t0_guess, cavity, g1_peak, velocity, profile, cut)
    if not np.any(cols & inside):
        raise FitError("fit window is entirely non-dispersive")
    args = (cavity, g1_peak, velocity, profile)

    def weighted_resid(t0, n, d_amp, d_phase):
        ma, mp = time_model(data.times, data.delta_p, t0, n, *args)
        ra = ((ma - d_amp) * wa)[:, cols]
        rp = (_wrap(mp - d_phase) * wp)[:, cols]
        return np.concatenate([ra.ravel(), rp.ravel()])

    def start(d_amp, d_phase):
        best = None
        n_ref = 1000.0
        for t0 in t0_guess + np.linspace(-t0_span, t0_span, n_starts if t0_span > 0 else 1):
            base = weighted_resid(t0, n_ref, 0.0 * d_amp, 0.0 * d_phase)
            obs = -weighted_resid(t0, 0.0, d_amp, d_phase)
            denom = base @ base
            n_lin = n_ref * (base @ obs) / denom if denom > 0 else 0.0
            rss = np.sum((obs - base * n_lin / n_ref) ** 2)
            if best is None or rss < best[0]:
                best = (rss, t0, n_lin)
        return best[1], best[2]

    t_scale = 1e-7
    fixed = t0_span == 0

    def solve(d_amp, d_phase):
        """Return ``(t0, N, result, n_scale)``; ``result.x`` holds scaled parameters."""
        t_init, n_init = start(d_amp, d_phase)
        n_scale = max(abs(n_init), 100.0)
        if fixed:
            res = least_squares(lambda q: weighted_resid(t0_guess, q[0] * n_scale, d_amp, d_phase),
                                x0=[n_init / n_scale], method="trf", x_scale="jac", max_nfev=max_nfev)
            return t0_guess, res.x[0] * n_scale, res, n_scale
        res = least_squares(
            lambda q: weighted_resid(t0_guess + q[0] * t_scale, q[1] * n_scale, d_amp, d_phase),
            x0=[np.clip((t_init - t0_guess) / t_scale, -t0_span / t_scale, t0_span / t_scale),
                n_init / n_scale],
            bounds=([-t0_span / t_scale, -np.inf], [t0_span / t_scale, np.inf]),
            method="trf", x_scale="jac", max_nfev=max_nfev,
        )
        return t0_guess + res.x[0] * t_scale, res.x[1] * n_scale, res, n_scale

    t0, n_fit, res, n_scale = solve(data.d_amp, data.d_phase)
    n_par = 1 if fixed else 2
    cov, dof = _covariance(res.jac, res.fun, n_par, scale=(weighting != "equal"))
    sig = np.sqrt(np.diag(cov)) * (np.array([n_scale]) if fixed else np.array([t_scale, n_scale]))
    sig = np.concatenate([[0.0], sig]) if fixed else sig
    info = {"n_bins_used": int(cols.sum()) * data.delta_p.size, "message": res.message,
            "weighting": weighting, "t0_fixed": fixed,
            "reduced_chi2": float(res.fun @ res.fun / max(dof, 1))}

    if bootstrap:
        rng = np.random.default_rng(seed)
        ma, mp = time_model(data.times, data.delta_p, t0, n_fit, *args)
        reps = []
        for _ in range(bootstrap):
            ba = ma + rng.standard_normal(ma.shape) * data.sigma_amp
            bp = mp + rng.standard_normal(mp.shape) * data.sigma_phase
            reps.append(solve(ba, bp)[:2])
        reps = np.array(reps)
        info["bootstrap_sigma_t0"] = float(reps[:, 0].std(ddof=1))
        info["bootstrap_sigma_N"] = float(reps[:, 1].std(ddof=1))

    return FitResult(
        params={"t0": float(t0), "N": float(n_fit)},
        sigmas={"t0": float(sig[0]), "N": float(sig[1])},
        residual_norm=float(res.fun @ res.fun),
        converged=bool(res.success),
        n_eval=int(res.nfev),
        dof=dof,
        info=info,
    )
