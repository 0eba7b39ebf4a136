import json
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rydcav.cavity import CavityMode, shift_observable
from rydcav.design import (X_OPT_CLOSED_FORM, atom_number_from_phase, forecast, optimal_detuning,
                           optimal_ratio, phase_change_uncertainty, phase_uncertainty,
                           relative_atom_uncertainty)
from rydcav.dispersive import DispersiveDomainError, collective_shift

from conftest import KHZ, MHZ

SIV = dict(n_atoms=4000, g_n=1.1 * MHZ, kappa=0.3 * MHZ, kappa_out=0.3 * MHZ, n_c=880, tau=50e-6, n_noise=1)


def test_phase_uncertainty():
    with pytest.warns(UserWarning):
        assert phase_uncertainty(1.0) == 1.0
    assert phase_uncertainty(1e4) == pytest.approx(0.01)
    assert phase_uncertainty(8.3e4) == pytest.approx(3.5e-3, abs=0.05e-3)


def test_phase_change_uncertainty():
    assert phase_change_uncertainty(100.0, 0.0) == pytest.approx(np.sqrt(2) / 10)
    x = X_OPT_CLOSED_FORM
    assert phase_change_uncertainty(100.0, x) == pytest.approx(np.sqrt(2.618) / 10, rel=1e-4)
    assert phase_change_uncertainty(100.0, x, k=4) == pytest.approx(phase_change_uncertainty(100.0, x) / 2)


def test_atom_number_from_phase():
    assert atom_number_from_phase(0.0, 20 * MHZ, 4.1 * MHZ, 17.5 * KHZ) == 0.0
    n = atom_number_from_phase(np.deg2rad(-1.39), 20.07 * MHZ, 4.1 * MHZ, 17.5 * KHZ)
    assert n == pytest.approx(3.26e3, rel=0.01)


@given(st.floats(10, 5e4), st.floats(5, 100))
def test_atom_number_inverts_forward_pipeline(n, d_mhz):
    cav = CavityMode(omega_c=0.0, kappa=4.1 * MHZ, kappa_out=2.05 * MHZ)
    g1, d = 17.5 * KHZ, d_mhz * MHZ
    dphi = shift_observable(0.0, collective_shift(g1, n, -n / 2, d), cav).delta_phase
    assert atom_number_from_phase(dphi, d, cav.kappa, g1) == pytest.approx(n, rel=1e-9)


def test_atom_number_domain():
    with pytest.raises(DispersiveDomainError):
        atom_number_from_phase(np.pi / 2, 1.0, 1.0, 1.0)


def test_relative_uncertainty():
    x = X_OPT_CLOSED_FORM
    assert relative_atom_uncertainty(x, 1.0) == pytest.approx(3.33, abs=0.005)
    assert relative_atom_uncertainty(x, 8.3e4) == pytest.approx(0.012, abs=0.0005)
    assert relative_atom_uncertainty(10 * x, 1.0) > relative_atom_uncertainty(x, 1.0)
    with pytest.raises(DispersiveDomainError):
        relative_atom_uncertainty(0.0, 1.0)


def test_optimal_ratio():
    x = optimal_ratio()
    assert x == pytest.approx(0.7862, abs=1e-4)
    assert x**4 + x**2 - 1 == pytest.approx(0.0, abs=1e-12)
    assert x == pytest.approx(X_OPT_CLOSED_FORM, abs=1e-12)
    best = relative_atom_uncertainty(x, 1.0)
    assert best == pytest.approx(3.330, abs=0.005)
    assert relative_atom_uncertainty(0.9 * x, 1.0) > best
    assert relative_atom_uncertainty(1.1 * x, 1.0) > best


def test_optimal_detuning():
    d = optimal_detuning(1.1 * MHZ, 0.3 * MHZ, X_OPT_CLOSED_FORM)
    assert d / MHZ == pytest.approx(10.3, abs=0.05)
    assert optimal_detuning(2.2 * MHZ, 0.3 * MHZ, 0.786) == pytest.approx(4 * optimal_detuning(1.1 * MHZ, 0.3 * MHZ, 0.786))
    assert 2 * (1.1 * MHZ) ** 2 / (d * 0.3 * MHZ) == pytest.approx(X_OPT_CLOSED_FORM)


def test_forecast_scenario():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fc = forecast(**SIV)
    assert fc.snr == pytest.approx(8.3e4, rel=0.01)
    assert fc.rel_sigma_n == pytest.approx(0.012, abs=0.001)
    assert 46 <= fc.abs_sigma_n <= 49
    assert fc.abs_sigma_n < np.sqrt(4000)
    assert fc.delta_a_opt / MHZ == pytest.approx(10.26, abs=0.05)
    assert fc.diagnostics["n_c/n_crit"] == pytest.approx(0.01, rel=0.05)
    assert json.loads(fc.to_json())["x_opt"] == pytest.approx(0.786, abs=1e-3)
    assert "sigma_N" in fc.table()


def test_forecast_scalings():
    base = forecast(**SIV)
    noisy = forecast(**{**SIV, "n_noise": 34})
    assert base.snr / noisy.snr == pytest.approx(34.0, rel=1e-12)
    assert forecast(**SIV, k=4).rel_sigma_n == pytest.approx(base.rel_sigma_n / 2)


def test_forecast_warns_on_strong_probe():
    with pytest.warns(UserWarning):
        forecast(**{**SIV, "n_c": 2e4})
