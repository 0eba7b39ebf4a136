"""Dispersive Tavis-Cummings physics of a pointlike Rydberg ensemble.

Collective shift, transit-time coupling and detuning profiles, Stark
corrections, photon-number suppression and the approximate Jaynes-Cummings
and Tavis-Cummings ladders used to cross-check the suppression law.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from rydcav.cavity import CavityMode

# below this detuning the atoms absorb resonantly and the model is not used
DELTA_A_CRIT = 2 * np.pi * 10e6


class DispersiveDomainError(ValueError):
    """Raised when a dispersive-limit expression is evaluated where it is undefined."""


@dataclass(frozen=True)
class AtomEnsemble:
    n_atoms: float
    jz: float
    g1_peak: float
    omega_a0: float = 2 * np.pi * 21.5299e9
    velocity: float = 900.0

    def __post_init__(self):
        if self.n_atoms < 0:
            raise ValueError("n_atoms must be non-negative")
        if abs(self.jz) > self.n_atoms / 2 + 1e-12 * max(1.0, self.n_atoms):
            raise ValueError("|jz| must not exceed n_atoms/2")
        if self.g1_peak < 0:
            raise ValueError("g1_peak must be non-negative")
        if not self.velocity > 0:
            raise ValueError("velocity must be positive")

    @classmethod
    def ground_state(cls, n_atoms, g1_peak, **kw):
        """Ensemble fully prepared in the lower level (``jz = -N/2``)."""
        return cls(n_atoms=n_atoms, jz=-n_atoms / 2, g1_peak=g1_peak, **kw)


@dataclass(frozen=True)
class DetuningProfile:
    """Parabolic raw detuning along the transit plus the ac Stark correction.

    ``curvature`` is in rad/s per s^2, i.e. ``2*pi * 6.65e6 / 1e-12`` for a
    parabola of 6.65 MHz/us^2.
    """

    curvature: float
    t_min: float
    delta_min: float
    ac_stark_peak: float = 0.0
    ac_sign: int = 1

    def __post_init__(self):
        if self.curvature < 0:
            raise ValueError("curvature must be non-negative")
        if self.ac_stark_peak < 0:
            raise ValueError("ac_stark_peak must be non-negative")
        if self.ac_sign not in (1, -1):
            raise ValueError("ac_sign must be +1 or -1")


@dataclass(frozen=True)
class OperatingPoint:
    chi: float
    x_ratio: float
    n_crit: float
    g_n: float
    delta_a: float
    g1: float


@dataclass(frozen=True)
class EigenLevel:
    n_excitations: float
    j_polarization: float
    energy: float


def collective_coupling(g1, n_atoms):
    if np.any(np.asarray(n_atoms) < 0):
        raise ValueError("n_atoms must be non-negative")
    return g1 * np.sqrt(n_atoms)


def dispersive_ratio(g1, n_atoms, delta_a):
    """``g_N / |Delta_a|``; the dispersive expressions need this well below 1."""
    return collective_coupling(g1, n_atoms) / np.abs(delta_a)


def collective_shift(g1, n_atoms, jz, delta_a):
    """Collective dispersive shift ``(g_N^2/Delta_a) * jz/(N/2)``.

    Equals ``2 g1^2 jz / Delta_a``, which is well defined for ``N = 0``.
    """
    delta_a = np.asarray(delta_a, dtype=float)
    if np.any(delta_a == 0):
        raise DispersiveDomainError("collective shift undefined at zero atom-cavity detuning")
    chi = 2.0 * np.square(g1) * np.asarray(jz, dtype=float) / delta_a
    return float(chi) if np.ndim(chi) == 0 else chi


def coupling_profile(t_c, ensemble: AtomEnsemble, cavity: CavityMode):
    """Single-atom coupling seen at time ``t_c`` after entering the cavity.

    Sine profile of the TE mode along the beam, zero outside the cavity.
    """
    t_c = np.asarray(t_c, dtype=float)
    z = ensemble.velocity * t_c
    inside = (z >= 0) & (z <= cavity.length_l)
    g = np.where(inside, ensemble.g1_peak * np.sin(np.pi * z / cavity.length_l), 0.0)
    return float(g) if g.ndim == 0 else g


def raw_detuning(t_c, profile: DetuningProfile):
    t_c = np.asarray(t_c, dtype=float)
    d = profile.curvature * (t_c - profile.t_min) ** 2 + profile.delta_min
    return float(d) if d.ndim == 0 else d


def ac_stark_profile(z_c, profile: DetuningProfile, cavity: CavityMode):
    z_c = np.asarray(z_c, dtype=float)
    inside = (z_c >= 0) & (z_c <= cavity.length_l)
    d = np.where(inside, profile.ac_stark_peak * np.sin(np.pi * z_c / cavity.length_l) ** 2, 0.0)
    return float(d) if d.ndim == 0 else d


def true_detuning(t_c, profile: DetuningProfile, cavity: CavityMode, ensemble: AtomEnsemble):
    """Raw detuning with the ac Stark shift removed (``ac_sign=+1`` subtracts)."""
    t_c = np.asarray(t_c, dtype=float)
    ac = ac_stark_profile(ensemble.velocity * t_c, profile, cavity)
    d = raw_detuning(t_c, profile) - profile.ac_sign * ac
    return float(d) if np.ndim(d) == 0 else d


def critical_photon_number(g1, delta_a):
    if np.any(np.asarray(g1) == 0):
        raise DispersiveDomainError("critical photon number undefined for zero coupling")
    return np.square(delta_a) / (4.0 * np.square(g1))


def time_dependent_shift(t_c, ensemble: AtomEnsemble, profile: DetuningProfile,
                         cavity: CavityMode) -> OperatingPoint:
    """Instantaneous operating point of the ensemble at transit time ``t_c``."""
    g1 = coupling_profile(t_c, ensemble, cavity)
    delta_a = true_detuning(t_c, profile, cavity, ensemble)
    chi = collective_shift(g1, ensemble.n_atoms, ensemble.jz, delta_a)
    with np.errstate(divide="ignore"):
        n_crit = np.where(np.asarray(g1) > 0,
                          np.square(delta_a) / (4.0 * np.square(np.maximum(g1, 1e-300))),
                          np.inf)
    if np.ndim(n_crit) == 0:
        n_crit = float(n_crit)
    return OperatingPoint(
        chi=chi,
        x_ratio=2.0 * chi / cavity.kappa,
        n_crit=n_crit,
        g_n=collective_coupling(g1, ensemble.n_atoms),
        delta_a=delta_a,
        g1=g1,
    )


def shift_trajectory(t_c, ensemble: AtomEnsemble, profile: DetuningProfile, cavity: CavityMode):
    """Vectorized ``chi(t_c)``; points outside the cavity give exactly zero."""
    return time_dependent_shift(t_c, ensemble, profile, cavity).chi


def suppressed_shift(chi0, n_c, n_crit):
    """Dispersive shift at intracavity photon number ``n_c``."""
    n_c = np.asarray(n_c, dtype=float)
    if np.any(n_c < 0):
        raise ValueError("n_c must be non-negative")
    if np.any(np.asarray(n_crit) <= 0):
        raise ValueError("n_crit must be positive")
    out = chi0 / np.sqrt(1.0 + n_c / n_crit)
    return float(out) if np.ndim(out) == 0 else out


def jc_eigenvalue(n_c, branch, g1, delta_a, omega_c):
    """Jaynes-Cummings level ``n_c omega_c +/- sqrt(Delta_a^2 + 4 g1^2 n_c)/2``.

    ``branch`` is +1 (atom excited) or -1 (atom in the ground state).
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    n_c = np.asarray(n_c, dtype=float)
    if np.any(n_c < 0):
        raise ValueError("n_c must be non-negative")
    e = n_c * omega_c + branch * 0.5 * np.sqrt(np.square(delta_a) + 4.0 * np.square(g1) * n_c)
    return float(e) if e.ndim == 0 else e


def tc_eigenvalue(n, j, n_atoms, g1, delta_a, omega_c):
    """Large-excitation approximation of the Tavis-Cummings ladder.

    Only meaningful for ``n >> N``; the caller checks that.
    """
    if np.any(np.abs(np.asarray(j)) > n_atoms / 2):
        raise DispersiveDomainError("|j| must not exceed n_atoms/2")
    n = np.asarray(n, dtype=float)
    e = n * omega_c + j * np.sqrt(np.square(delta_a) + 4.0 * np.square(g1) * n)
    return float(e) if e.ndim == 0 else e


def stark_detuning(u_volts, stark_coeff, delta_a0):
    u = np.asarray(u_volts, dtype=float)
    d = delta_a0 + stark_coeff * u**2
    return float(d) if d.ndim == 0 else d


def rabi_population(omega_ratio, n_max):
    """Atoms transferred by a fixed-length pulse of relative amplitude ``omega_ratio``."""
    r = np.asarray(omega_ratio, dtype=float)
    if np.any(r < 0):
        raise ValueError("omega_ratio must be non-negative")
    n = n_max * np.sin(0.5 * np.pi * r) ** 2
    return float(n) if n.ndim == 0 else n


def check_dispersive(g1, n_atoms, delta_a, limit=0.1, stacklevel=2):
    """Warn when ``g_N/|Delta_a|`` exceeds ``limit``; returns the ratio."""
    ratio = float(np.max(dispersive_ratio(g1, n_atoms, delta_a)))
    if ratio > limit:
        warnings.warn(f"g_N/|Delta_a| = {ratio:.3g} exceeds {limit}; dispersive limit questionable",
                      stacklevel=stacklevel)
    return ratio
