"""Uncertainty propagation for resonant phase readout and forecast of the optimal design."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from rydcav.detection import snr as power_snr
from rydcav.dispersive import DispersiveDomainError, critical_photon_number

X_OPT_CLOSED_FORM = np.sqrt((np.sqrt(5.0) - 1.0) / 2.0)


@dataclass
class DesignForecast:
    snr: float
    sigma_phi: float
    sigma_dphi: float
    rel_sigma_n: float
    abs_sigma_n: float
    x_opt: float
    delta_a_opt: float
    k_averages: int
    diagnostics: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        return json.dumps(asdict(self), **kw)

    def table(self) -> str:
        """Aligned two-column text report; rates in Hz, phases in mrad."""
        rows = [
            ("snr", f"{self.snr:.4g}"),
            ("sigma_phi [mrad]", f"{1e3 * self.sigma_phi:.4g}"),
            ("sigma_dphi [mrad]", f"{1e3 * self.sigma_dphi:.4g}"),
            ("sigma_N/N [%]", f"{100 * self.rel_sigma_n:.4g}"),
            ("sigma_N", f"{self.abs_sigma_n:.4g}"),
            ("x_opt", f"{self.x_opt:.6f}"),
            ("delta_a_opt/2pi [Hz]", f"{self.delta_a_opt / (2 * np.pi):.6g}"),
            ("k_averages", f"{self.k_averages}"),
        ]
        rows += [(k, f"{v:.4g}") for k, v in self.diagnostics.items()]
        w = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{w}}  {v:>12}" for k, v in rows)


def phase_uncertainty(snr):
    """Single-shot phase spread of a resonant probe, ``1/sqrt(SNR)``."""
    if np.any(np.asarray(snr) <= 0):
        raise DispersiveDomainError("SNR must be positive")
    if np.any(np.asarray(snr) < 10):
        warnings.warn("SNR below 10: small-angle phase error estimate is unreliable", stacklevel=2)
    return 1.0 / np.sqrt(snr)


def phase_change_uncertainty(snr, x_ratio, k=1):
    """Spread of a phase difference against a reference, both noisy.

    The shifted trace is weaker by ``1/sqrt(1 + x^2)``, hence ``sqrt(2 + x^2)``.
    """
    if np.any(np.asarray(snr) <= 0) or np.any(np.asarray(k) < 1):
        raise ValueError("need snr > 0 and k >= 1")
    return np.sqrt(2.0 + np.square(x_ratio)) / np.sqrt(snr * k)


def atom_number_from_phase(delta_phi, delta_a, kappa, g1):
    """Atom number from a resonant phase change of a ground-state ensemble.

    ``N = -Delta_a kappa tan(dphi) / (2 g1^2)``. The minus sign accounts for
    ``J_z = -N/2``: atoms in the lower level pull the resonance down, so a
    negative phase change maps to a positive count.
    """
    dphi = np.asarray(delta_phi, dtype=float)
    if np.any(np.abs(dphi) >= np.pi / 2):
        raise DispersiveDomainError("|delta_phi| must be below pi/2")
    if not g1 > 0:
        raise DispersiveDomainError("g1 must be positive")
    n = -delta_a * kappa * np.tan(dphi) / (2.0 * g1**2)
    return float(n) if n.ndim == 0 else n


def _objective(x):
    return (x + 1.0 / x) * np.sqrt(2.0 + x * x)


def _objective_slope(x):
    root = np.sqrt(2.0 + x * x)
    return (1.0 - 1.0 / (x * x)) * root + (x + 1.0 / x) * x / root


def relative_atom_uncertainty(x_ratio, snr, k=1):
    x = np.asarray(x_ratio, dtype=float)
    if np.any(x == 0):
        raise DispersiveDomainError("x = 0 carries no atom-number information")
    if np.any(np.asarray(snr) <= 0):
        raise DispersiveDomainError("SNR must be positive")
    r = np.abs(_objective(x)) / np.sqrt(snr * k)
    return float(r) if r.ndim == 0 else r


def optimal_ratio(tol=1e-10):
    """Minimizer of ``(x + 1/x) sqrt(2 + x^2)`` on ``[0.1, 10]``.

    A bounded Brent search locates the minimum; the stationarity condition
    is then solved inside a small bracket to reach full double precision.
    """
    res = minimize_scalar(_objective, bounds=(0.1, 10.0), method="bounded",
                          options={"xatol": 1e-8})
    lo, hi = max(0.1, res.x - 1e-3), min(10.0, res.x + 1e-3)
    return float(brentq(_objective_slope, lo, hi, xtol=tol * 1e-4, rtol=4 * np.finfo(float).eps))


def optimal_detuning(g_n, kappa, x_opt):
    if not kappa > 0 or not x_opt > 0:
        raise ValueError("kappa and x_opt must be positive")
    return 2.0 * g_n**2 / (x_opt * kappa)


def forecast(n_atoms, g_n, kappa, kappa_out, n_c, tau, n_noise, k=1) -> DesignForecast:
    """Best achievable atom-number precision for a resonant phase readout.

    Rates are angular. Diagnostics report how deep in the dispersive regime
    the optimal operating point sits.
    """
    s = power_snr(n_c, kappa_out, tau, n_noise)
    x_opt = optimal_ratio()
    d_opt = optimal_detuning(g_n, kappa, x_opt)
    rel = relative_atom_uncertainty(x_opt, s, k)
    g1 = g_n / np.sqrt(n_atoms)
    n_crit = float(critical_photon_number(g1, d_opt))
    diag = {
        "g_N/delta_a": g_n / d_opt,
        "kappa/delta_a": kappa / d_opt,
        "n_c/n_crit": n_c / n_crit,
        "N/n_crit": n_atoms / n_crit,
        "n_crit": n_crit,
        "sqrt_N": float(np.sqrt(n_atoms)),
    }
    if n_c > 0.1 * n_crit:
        warnings.warn(f"n_c = {n_c:g} exceeds 0.1 n_crit = {0.1 * n_crit:.3g}", stacklevel=2)
    if diag["g_N/delta_a"] > 0.3 or diag["kappa/delta_a"] > 0.3:
        warnings.warn("optimal detuning is not deep in the dispersive regime", stacklevel=2)
    return DesignForecast(
        snr=float(s),
        sigma_phi=float(1.0 / np.sqrt(s * k)),
        sigma_dphi=float(phase_change_uncertainty(s, x_opt, k)),
        rel_sigma_n=rel,
        abs_sigma_n=rel * n_atoms,
        x_opt=x_opt,
        delta_a_opt=d_opt,
        k_averages=int(k),
        diagnostics=diag,
    )
