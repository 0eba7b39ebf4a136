"""Single-mode Lorentzian transmission and the response to a resonance shift."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CavityMode:
    """One cavity mode.

    Parameters
    ----------
    omega_c : float
        Resonance angular frequency (rad/s).
    kappa : float
        Total energy decay rate (rad/s).
    kappa_out : float
        Decay rate into the output port (rad/s).
    length_l : float
        Cavity length along the atomic beam (m).
    center_z : float
        Position of the field maximum along the beam (m).
    """

    omega_c: float
    kappa: float
    kappa_out: float
    length_l: float = 8e-3
    center_z: float = 4e-3

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not 0 < self.kappa_out <= self.kappa:
            raise ValueError("kappa_out must satisfy 0 < kappa_out <= kappa")
        if not self.length_l > 0:
            raise ValueError("length_l must be positive")
        if not 0 < self.center_z < self.length_l:
            raise ValueError("center_z must lie inside the cavity")


@dataclass(frozen=True)
class ProbeTone:
    delta_p: float
    n_c: float
    tau: float

    def __post_init__(self):
        if self.n_c < 0:
            raise ValueError("n_c must be non-negative")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class ComplexResponse:
    """Normalized transmission. Fields broadcast when detunings are arrays."""

    value: complex | np.ndarray

    @property
    def amplitude_n(self):
        return np.abs(self.value)

    @property
    def phase(self):
        return np.angle(self.value)


@dataclass(frozen=True)
class ShiftObservation:
    delta_amp_n: float | np.ndarray
    delta_phase: float | np.ndarray


def complex_transmission(delta_p, cavity: CavityMode) -> ComplexResponse:
    """Normalized transmission ``1 / (1 + 2i delta_p / kappa)``.

    Its modulus is ``1/sqrt(1 + (2 delta_p/kappa)^2)`` and its argument
    ``-arctan(2 delta_p / kappa)``.
    """
    u = 2.0 * np.asarray(delta_p, dtype=float) / cavity.kappa
    value = np.asarray(1.0 / (1.0 + 1j * u))
    if value.ndim == 0:
        value = complex(value)
    return ComplexResponse(value)


def shifted_response(delta_p, chi, cavity: CavityMode) -> ComplexResponse:
    """Transmission of the mode after its resonance is pulled by ``chi``."""
    return complex_transmission(np.subtract(delta_p, chi), cavity)


def shift_observable(delta_p, chi, cavity: CavityMode) -> ShiftObservation:
    """Amplitude and phase change between shifted and bare transmission.

    Amplitudes are already normalized to the on-resonance value (1), so the
    amplitude difference is the normalized amplitude change.
    """
    bare = complex_transmission(delta_p, cavity)
    shifted = shifted_response(delta_p, chi, cavity)
    d_amp = shifted.amplitude_n - bare.amplitude_n
    # angle of the ratio avoids branch cuts at large detuning
    d_phase = np.angle(np.asarray(shifted.value) * np.conj(bare.value))
    if np.ndim(d_amp) == 0:
        return ShiftObservation(float(d_amp), float(d_phase))
    return ShiftObservation(d_amp, d_phase)


def chi_from_phase(delta_phase, cavity: CavityMode):
    """Resonance shift from the on-resonance phase change, ``(kappa/2) tan(dphi)``."""
    dphi = np.asarray(delta_phase, dtype=float)
    if np.any(np.abs(dphi) >= np.pi / 2):
        raise ValueError("|delta_phase| must be below pi/2")
    chi = 0.5 * cavity.kappa * np.tan(dphi)
    return float(chi) if chi.ndim == 0 else chi
