"""Experiment configuration: JSON document in Hz/seconds, converted to rad/s here.

Every value has a default taken from the experiment described in the
package README; a user config only lists what it overrides.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rydcav.cavity import CavityMode
from rydcav.detection import DEG_PER_MIN, AveragingPlan, NoiseModel
from rydcav.dispersive import AtomEnsemble, DetuningProfile

SCHEMA_VERSION = 1
SCENARIOS = ("spectrum", "time_scan", "freq_scan", "detuning_scan", "atom_scan",
             "power_scan", "forecast")

TWO_PI = 2 * np.pi


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "scenario": "time_scan",
    "seed": 20170401,
    "output_dir": "out",
    "cavity": {
        "f_c": 21.532e9,
        "kappa_hz": 4.1e6,
        # critically coupled two-port mode: half the loss leaves through the output
        "kappa_out_hz": 2.05e6,
        "length": 8e-3,
        "center_z": 4e-3,
    },
    "ensemble": {
        "n_atoms": 3300,
        "g1_peak_hz": 17.5e3,
        "f_a0": 21.5299e9,
        "velocity": 900.0,
    },
    "detuning": {
        "curvature_mhz_per_us2": 6.65,
        "t_min": 3.96e-6,
        "delta_min_hz": 20.07e6,
        "ac_stark_peak_hz": 2.4e6,
        "ac_sign": 1,
    },
    "probe": {"n_c": 600.0},
    "noise": {
        "enabled": True,
        "n_noise": 34.0,
        "drift_deg_per_min": 0.3,
        "phase_offset_deg": -0.104,
    },
    "averaging": {
        "inner": 100,
        "outer": 500,
        "boxcar": 100e-9,
        "dt": 10e-9,
        "cycle_rate": 25.0,
    },
    "reference": {"mode": "tail", "window": 2e-6},
    "spectrum": {
        "span_linewidths": 3.0,
        "points": 61,
        "sigma_amp": 0.01,
        "sigma_phase_deg": 0.5,
        "overlay_chi_hz": -1e6,
    },
    "time_scan": {
        "t_stop": 12e-6,
        "t0": 1e-6,
        "t0_guess": 1e-6,
        "delta_p_step_linewidths": 0.125,
        "delta_p_hz": None,
        "window": 300e-9,
        "weighting": "inverse_variance",
    },
    "detuning_scan": {
        "u_volts": list(np.round(np.arange(0.0, 3.01, 0.25), 6)),
        "stark_coeff_hz_per_v2": -1.0e6,
        "n_atoms": 4300,
        "delta_a_sigma_hz": 0.2e6,
        "window": 300e-9,
        "cut_hz": 10e6,
        "resonant_loss": 0.0,
    },
    "atom_scan": {
        "omega_ratio": list(np.round(np.linspace(0.0, 1.0, 21), 6)),
        "n_max": 4100,
        "s0": 0.79,
        "s_max": 2.0,
        "delta_a_hz": 11.25e6,
        "window": 300e-9,
    },
    "power_scan": {
        "n_c": [0.0] + [float(v) for v in np.logspace(1, 7, 25)],
        "marker_n_c": 600.0,
        "window": 300e-9,
    },
    "forecast": {
        "n_atoms": 4000,
        "g_n_hz": 1.1e6,
        "kappa_hz": 300e3,
        "kappa_out_hz": 300e3,
        "n_c": 880.0,
        "tau": 50e-6,
        "n_noise": 1.0,
        "k": 1,
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``a.b.c`` replaced by ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        if k not in node or not isinstance(node[k], dict):
            raise ConfigError(f"unknown config section {k!r} in {dotted!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value
    return out


def config_hash(cfg: dict) -> str:
    """Hash that ignores key order."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ExperimentConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "ExperimentConfig":
        user = {}
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(deep_merge(user, overrides or {}))

    @classmethod
    def from_dict(cls, user: dict) -> "ExperimentConfig":
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(deep_merge(DEFAULTS, user))
        cfg.validate()
        return cfg

    def validate(self):
        r = self.raw
        if r["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {r['schema_version']}")
        if r["scenario"] not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if r["reference"]["mode"] not in ("tail", "trace"):
            raise ConfigError("reference.mode must be 'tail' or 'trace'")
        grids = {
            "spectrum": [r["spectrum"]["points"]],
            "detuning_scan": [len(r["detuning_scan"]["u_volts"])],
            "atom_scan": [len(r["atom_scan"]["omega_ratio"])],
            "power_scan": [len(r["power_scan"]["n_c"])],
        }
        for name, sizes in grids.items():
            if any(int(s) < 1 for s in sizes):
                raise ConfigError(f"{name} sweep grid is empty")
        dp = r["time_scan"]["delta_p_hz"]
        if dp is not None and len(dp) == 0:
            raise ConfigError("time_scan.delta_p_hz is empty")
        try:
            self.cavity(), self.ensemble(), self.profile(), self.noise(), self.plan()
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    # typed views, all in rad/s
    def cavity(self) -> CavityMode:
        c = self.raw["cavity"]
        return CavityMode(omega_c=TWO_PI * c["f_c"], kappa=TWO_PI * c["kappa_hz"],
                          kappa_out=TWO_PI * c["kappa_out_hz"], length_l=c["length"],
                          center_z=c["center_z"])

    def ensemble(self, n_atoms=None) -> AtomEnsemble:
        e = self.raw["ensemble"]
        n = e["n_atoms"] if n_atoms is None else n_atoms
        return AtomEnsemble.ground_state(n, TWO_PI * e["g1_peak_hz"],
                                         omega_a0=TWO_PI * e["f_a0"], velocity=e["velocity"])

    def profile(self) -> DetuningProfile:
        d = self.raw["detuning"]
        return DetuningProfile(
            curvature=TWO_PI * d["curvature_mhz_per_us2"] * 1e6 / 1e-12,
            t_min=d["t_min"],
            delta_min=TWO_PI * d["delta_min_hz"],
            ac_stark_peak=TWO_PI * d["ac_stark_peak_hz"],
            ac_sign=int(d["ac_sign"]),
        )

    def noise(self, seed=None) -> NoiseModel:
        n = self.raw["noise"]
        return NoiseModel(
            n_noise=n["n_noise"] if n["enabled"] else 0.0,
            # drift and offset are systematic and stay on without random noise
            drift_rate=n["drift_deg_per_min"] * DEG_PER_MIN,
            phase_offset=np.deg2rad(n["phase_offset_deg"]),
            seed=self.raw["seed"] if seed is None else seed,
        )

    def plan(self) -> AveragingPlan:
        a = self.raw["averaging"]
        return AveragingPlan(inner_averages=int(a["inner"]), outer_averages=int(a["outer"]),
                             boxcar_len=a["boxcar"], cycle_rate=a["cycle_rate"])

    @property
    def scenario(self) -> str:
        return self.raw["scenario"]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def hash(self) -> str:
        return config_hash(self.raw)


def default_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict(overrides)
