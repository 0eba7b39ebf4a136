"""Dispersive readout of a Rydberg-atom ensemble in a microwave cavity.

Forward models for the atom-induced cavity shift, synthetic heterodyne
records, parameter estimation and measurement forecasts.
"""

from rydcav.cavity import (
    CavityMode,
    ComplexResponse,
    ProbeTone,
    ShiftObservation,
    chi_from_phase,
    complex_transmission,
    shift_observable,
    shifted_response,
)
from rydcav.design import DesignForecast, forecast, optimal_ratio
from rydcav.dispersive import AtomEnsemble, DetuningProfile, OperatingPoint

__version__ = "0.1.0"

__all__ = [
    "AtomEnsemble",
    "CavityMode",
    "ComplexResponse",
    "DesignForecast",
    "DetuningProfile",
    "OperatingPoint",
    "ProbeTone",
    "ShiftObservation",
    "chi_from_phase",
    "complex_transmission",
    "forecast",
    "optimal_ratio",
    "shift_observable",
    "shifted_response",
]
