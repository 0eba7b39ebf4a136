"""Synthetic heterodyne records and the block-averaging estimators.

Traces live at complex baseband (after digital down-conversion) in units of
sqrt(photon flux) referred to the cavity output, so ``|A|^2`` of a resonant,
empty-cavity probe equals ``n_c * kappa_out`` photons per second.

Noise calibration: a sample of length ``dt`` carries circular Gaussian noise
with ``E|A_N|^2 = 2 n_noise / dt``, i.e. ``n_noise`` photons per unit bandwidth
in each quadrature. Averaging a resonant probe for a time ``tau`` then gives a
phase spread of ``1/sqrt(SNR)`` with ``SNR = n_c kappa_out tau / n_noise``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.constants import hbar

log = logging.getLogger(__name__)

DEG_PER_MIN = np.pi / 180.0 / 60.0


class UndefinedPhaseError(ValueError):
    pass


@dataclass
class IQTrace:
    """Complex detection record.

    ``samples`` is 1-D (one record) or 2-D with records along axis 0. Each
    record may already be the average of ``averages`` experimental cycles.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    averages: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("trace contains non-finite samples")
        if self.averages < 1:
            raise ValueError("averages must be >= 1")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[-1]

    @property
    def n_records(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    @property
    def i(self):
        return self.samples.real

    @property
    def q(self):
        return self.samples.imag

    def records(self) -> np.ndarray:
        return np.atleast_2d(self.samples)


@dataclass
class NoiseModel:
    """Detection-chain noise, slow LO drift and the signal/reference offset.

    ``drift_rate`` is in rad/s of laboratory time; ``DEG_PER_MIN * 0.3`` is
    the drift quoted for the experiment.
    """

    n_noise: float = 0.0
    psd: float | None = None
    gain: float | None = None
    drift_rate: float = 0.0
    phase_offset: float = 0.0
    seed: int | None = 0

    def __post_init__(self):
        if self.n_noise < 0:
            raise ValueError("n_noise must be non-negative")
        if not np.isfinite(self.drift_rate):
            raise ValueError("drift_rate must be finite")


@dataclass
class AveragingPlan:
    inner_averages: int = 100
    outer_averages: int = 500
    boxcar_len: float = 100e-9
    cycle_rate: float = 25.0

    def __post_init__(self):
        if self.inner_averages < 1 or self.outer_averages < 1:
            raise ValueError("averaging counts must be >= 1")
        if not self.boxcar_len > 0:
            raise ValueError("boxcar_len must be positive")

    @property
    def k(self) -> int:
        return self.inner_averages * self.outer_averages


@dataclass
class BinnedEstimate:
    """Per-time-bin estimate with its block-jackknife standard error."""

    times: np.ndarray
    value: np.ndarray
    stderr: np.ndarray
    flags: dict = field(default_factory=dict)


def noise_sample_variance(n_noise, dt, averages=1):
    """``E|A_N|^2`` of one sample of length ``dt`` averaged over ``averages`` cycles."""
    return 2.0 * n_noise / (dt * averages)


def _drift_factors(drift_rate, n_records, averages, cycle_rate, first_cycle):
    if drift_rate == 0.0:
        return np.ones(n_records, dtype=complex)
    cycles = first_cycle + np.arange(n_records * averages).reshape(n_records, averages)
    return np.exp(1j * drift_rate * cycles / cycle_rate).mean(axis=1)


def synthesize_trace(signal_fn: Callable[[np.ndarray], np.ndarray], noise: NoiseModel,
                     dt: float, duration: float, *, t0: float = 0.0,
                     n_records: int | None = None, averages: int = 1,
                     cycle_rate: float = 25.0, first_cycle: int = 0,
                     reference: bool = False,
                     rng: np.random.Generator | None = None) -> IQTrace:
    """Signal plus drift plus calibrated detection noise.

    With ``n_records`` set, returns that many records, each the average of
    ``averages`` consecutive cycles. Gaussian noise averages exactly, so one
    synthesized record is distributed like the mean of ``averages`` cycles;
    the drift phase is averaged over the same cycles. The artificial phase
    offset is applied to signal traces only (``reference=False``).
    """
    if duration < dt:
        raise ValueError("duration must be at least one sample")
    n = int(np.floor(duration / dt + 1e-9))
    t = t0 + dt * np.arange(n)
    sig = np.broadcast_to(np.asarray(signal_fn(t), dtype=complex), (n,))
    if not reference and noise.phase_offset:
        sig = sig * np.exp(1j * noise.phase_offset)

    rows = 1 if n_records is None else int(n_records)
    drift = _drift_factors(noise.drift_rate, rows, averages, cycle_rate, first_cycle)
    samples = drift[:, None] * sig[None, :]

    if noise.n_noise > 0:
        if rng is None:
            rng = np.random.default_rng(noise.seed)
        std = np.sqrt(noise_sample_variance(noise.n_noise, dt, averages) / 2.0)
        samples = samples + std * (rng.standard_normal((rows, n)) + 1j * rng.standard_normal((rows, n)))

    if n_records is None:
        samples = samples[0]
    return IQTrace(samples=samples, dt=dt, t0=t0, averages=averages)


def boxcar_filter(trace: IQTrace, window: float, decimate: bool = False) -> IQTrace:
    """Moving average over ``round(window/dt)`` samples along time.

    Output sample ``j`` is the mean of input samples ``j..j+m-1`` and is
    time-stamped at their center. ``decimate=True`` keeps only
    non-overlapping windows.
    """
    m = int(np.floor(window / trace.dt + 1e-9))
    if m < 1:
        raise ValueError("window shorter than the sampling interval")
    if m > trace.n_samples:
        raise ValueError("window longer than the trace")
    x = trace.samples
    if m == 1:
        out = x.copy()
    else:
        c = np.cumsum(x, axis=-1)
        pad = np.zeros(x.shape[:-1] + (1,), dtype=complex)
        c = np.concatenate([pad, c], axis=-1)
        out = (c[..., m:] - c[..., :-m]) / m
    t0 = trace.t0 + 0.5 * (m - 1) * trace.dt
    dt = trace.dt
    if decimate and m > 1:
        out = out[..., ::m]
        dt = m * trace.dt
    return IQTrace(samples=out, dt=dt, t0=t0, averages=trace.averages)


def effective_noise_photons(psd, gain, omega):
    """Noise photons referred to the cavity output, ``PSD/(G hbar omega)``."""
    if not gain > 0 or not omega > 0:
        raise ValueError("gain and omega must be positive")
    return psd / (gain * hbar * omega)


def snr(n_c, kappa_out, tau, n_noise):
    """Single-shot power SNR ``n_c kappa_out tau / n_noise`` (angular ``kappa_out``)."""
    if np.any(np.asarray(n_noise) <= 0):
        raise ValueError("n_noise must be positive")
    return n_c * kappa_out * tau / n_noise


def power_from_impedance(amplitude_rms, impedance=50.0):
    """Optional conversion of a voltage amplitude to power, ``A^2 / 2Z``."""
    return np.square(amplitude_rms) / (2.0 * impedance)


def _blocks(trace: IQTrace, plan: AveragingPlan) -> np.ndarray:
    recs = trace.records()
    if plan.inner_averages % trace.averages:
        raise ValueError(f"inner_averages={plan.inner_averages} is not a multiple of "
                         f"the trace's {trace.averages} pre-averaged cycles")
    g = plan.inner_averages // trace.averages
    nb = recs.shape[0] // g
    if nb < 1:
        raise ValueError("trace holds fewer cycles than one inner block")
    if nb * g != recs.shape[0]:
        log.debug("dropping %d trailing records", recs.shape[0] - nb * g)
    return recs[: nb * g].reshape(nb, g, -1).mean(axis=1)


def _jackknife_se(full, loo):
    nb = loo.shape[0]
    if nb < 2:
        return np.full(full.shape, np.nan)
    dev = loo - loo.mean(axis=0)
    return np.sqrt((nb - 1) / nb * np.sum(dev**2, axis=0))


def _check_aligned(a: IQTrace, b: IQTrace):
    if a.samples.shape != b.samples.shape:
        raise ValueError("signal and reference traces differ in shape")
    if not np.isclose(a.dt, b.dt) or not np.isclose(a.t0, b.t0, atol=1e-3 * a.dt):
        raise ValueError("signal and reference traces are not aligned")
    if a.averages != b.averages:
        raise ValueError("signal and reference traces were averaged differently")


def phase_change_estimator(signal: IQTrace, reference: IQTrace, plan: AveragingPlan,
                           offset: float = 0.0) -> BinnedEstimate:
    """Phase of the block-averaged Hermitian product minus a known offset."""
    _check_aligned(signal, reference)
    prod = _blocks(signal, plan) * np.conj(_blocks(reference, plan))
    nb = prod.shape[0]
    total = prod.sum(axis=0)
    if np.any(np.abs(total) == 0):
        raise UndefinedPhaseError("zero reference amplitude; phase change undefined")
    est = np.angle(total)
    # leave-one-block-out phases measured relative to the full estimate
    loo = est + np.angle((total[None, :] - prod) * np.conj(total)[None, :]) if nb > 1 else est[None, :]
    return BinnedEstimate(times=signal.times, value=est - offset, stderr=_jackknife_se(est, loo))


def calibrate_noise_power(probe_off_trace: IQTrace, plan: AveragingPlan) -> float:
    """Mean ``|A_N|^2`` of inner-averaged blocks of a probe-off record."""
    return float(np.mean(np.abs(_blocks(probe_off_trace, plan)) ** 2))


def amplitude_change_estimator(signal: IQTrace, reference: IQTrace, plan: AveragingPlan,
                               noise_power: float,
                               on_resonance_amplitude: float | None = None,
                               reference_noise_power: float | None = None) -> BinnedEstimate:
    """Normalized amplitude change from noise-subtracted block powers.

    ``on_resonance_amplitude`` is the reference signal amplitude with the
    probe on the cavity resonance; when omitted the reference of the same
    record is used, which is correct only for a resonant probe.
    ``reference_noise_power`` is needed when the reference was averaged
    differently from the signal (e.g. built from a tail window).
    """
    p_ref_noise = noise_power if reference_noise_power is None else reference_noise_power
    _check_aligned(signal, reference)
    ps = np.abs(_blocks(signal, plan)) ** 2
    pr = np.abs(_blocks(reference, plan)) ** 2
    nb = ps.shape[0]

    def combine(p_sig, p_ref):
        a_s = np.sqrt(np.clip(p_sig - noise_power, 0.0, None))
        a_r = np.sqrt(np.clip(p_ref - p_ref_noise, 0.0, None))
        norm = a_r if on_resonance_amplitude is None else on_resonance_amplitude
        with np.errstate(divide="ignore", invalid="ignore"):
            return (a_s - a_r) / norm

    ms, mr = ps.mean(axis=0), pr.mean(axis=0)
    low = (ms < noise_power) | (mr < p_ref_noise)
    if np.any(low):
        warnings.warn(f"noise-subtracted power negative in {int(low.sum())} bins; clamped to 0",
                      stacklevel=2)
    if on_resonance_amplitude is None and np.any(mr <= p_ref_noise):
        raise UndefinedPhaseError("reference amplitude vanishes; cannot normalize")
    est = combine(ms, mr)
    if nb > 1:
        loo = combine((ps.sum(0) - ps) / (nb - 1), (pr.sum(0) - pr) / (nb - 1))
    else:
        loo = est[None, :]
    return BinnedEstimate(times=signal.times, value=est, stderr=_jackknife_se(est, loo),
                          flags={"low_signal": low})


def reference_from_tail(trace: IQTrace, window: float = 2e-6) -> IQTrace:
    """Constant per-record reference built from the last ``window`` of each record."""
    m = max(1, int(np.floor(window / trace.dt + 1e-9)))
    if m > trace.n_samples:
        raise ValueError("reference window longer than the trace")
    level = trace.records()[:, -m:].mean(axis=1, keepdims=True)
    samples = np.broadcast_to(level, trace.records().shape).copy()
    if trace.samples.ndim == 1:
        samples = samples[0]
    return IQTrace(samples=samples, dt=trace.dt, t0=trace.t0, averages=trace.averages)


def single_shot_phase_spread(n_c, kappa_out, tau, n_noise, replicas=1000, dt=10e-9, seed=0):
    """Monte-Carlo standard deviation of the resonant single-shot phase.

    Each replica is a constant resonant probe of length ``tau`` integrated
    over its full duration.
    """
    amp = np.sqrt(n_c * kappa_out)
    tr = synthesize_trace(lambda t: amp, NoiseModel(n_noise=n_noise, seed=seed),
                          dt=dt, duration=tau, n_records=replicas)
    phases = np.angle(tr.records().mean(axis=1))
    return float(np.std(phases, ddof=1))


def write_trace(trace: IQTrace, path, noise: NoiseModel | None = None, **meta) -> Path:
    """Write ``path`` (CSV: [record,] t, I, Q) and a JSON sidecar beside it."""
    path = Path(path)
    recs = trace.records()
    t = trace.times
    cols, names = [], []
    if trace.samples.ndim == 2:
        cols.append(np.repeat(np.arange(recs.shape[0]), recs.shape[1]).astype(float))
        names.append("record")
    cols += [np.tile(t, recs.shape[0]), recs.real.ravel(), recs.imag.ravel()]
    names += ["t", "I", "Q"]
    fmt = ["%d"] * (len(names) - 3) + ["%.17g"] * 3
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names),
               comments="", fmt=fmt)
    side = {"dt": trace.dt, "t0": trace.t0, "averages": trace.averages,
            "n_records": recs.shape[0] if trace.samples.ndim == 2 else None,
            "seed": noise.seed if noise is not None else meta.pop("seed", None),
            "noise": asdict(noise) if noise is not None else None, **meta}
    path.with_suffix(".json").write_text(json.dumps(side, indent=2))
    return path


def read_trace(path) -> tuple[IQTrace, dict]:
    path = Path(path)
    side = json.loads(path.with_suffix(".json").read_text())
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    z = data[:, -2] + 1j * data[:, -1]
    if side.get("n_records"):
        z = z.reshape(side["n_records"], -1)
    trace = IQTrace(samples=z, dt=side["dt"], t0=side["t0"], averages=side["averages"])
    return trace, side
