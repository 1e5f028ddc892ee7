"""Ramsey and spin-echo experiments on the ground-biexciton pseudo-spin.

All fringes are scanned in the two-photon phase of the last pulse (nominal
period 2 pi; residual exciton coherences add a small component at half that
frequency). Pulse areas come from :func:`calibrate_pulses`. The two-photon
rotation angle grows roughly with the square of the area, so pi/2 sits near
``pi_area / sqrt(2)``; the calibration locates it exactly.

Two readouts are offered. ``"emission"`` integrates the photon emission over
the whole window (the experimental observable). ``"population"`` returns
(rho_xx, rho_xx + rho_x) right after the last pulse, i.e. the XX and X
emission that the post-sequence decay would produce; it stays meaningful when
all decay rates are zero.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg as sla
from scipy.optimize import brentq, curve_fit

from . import dynamics as dyn
from .dynamics import DEFAULT_DT, PULSE_HALF_SPAN, GaussianPulse, PulseSequence, SystemParams
from .errors import ConfigurationError, DomainError

READOUTS = ("emission", "population")
POOR_FIT_THRESHOLD = 0.10


class PoorFitWarning(UserWarning):
    """Fringe fit residuals exceed the tolerated fraction of the amplitude."""


@dataclass(frozen=True)
class QuasiStaticNoise:
    """Shot-to-shot Gaussian jitter of delta_xx (rad/ps), frozen within a shot."""
    sigma_detuning: float = 0.0
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.sigma_detuning) and self.sigma_detuning >= 0):
            raise DomainError("sigma_detuning must be finite and >= 0")
        if self.n_samples < 1:
            raise DomainError("n_samples must be >= 1")

    @property
    def enabled(self) -> bool:
        return self.sigma_detuning > 0

    def offsets(self) -> np.ndarray:
        """Detuning offsets, one per shot; a single zero when disabled."""
        if not self.enabled:
            return np.zeros(1)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed & (2**64 - 1), 0x52414D]))
        return self.sigma_detuning * rng.standard_normal(self.n_samples)


NO_NOISE = QuasiStaticNoise()


@dataclass
class RamseyScan:
    """Fringe at one delay: emission (or readout) values versus two-photon phase."""
    delay: float
    phases: np.ndarray
    p_emit_xx: np.ndarray
    p_emit_x: np.ndarray

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        self.p_emit_xx = np.asarray(self.p_emit_xx, dtype=float)
        self.p_emit_x = np.asarray(self.p_emit_x, dtype=float)
        _check_phases(self.phases)
        if not (self.p_emit_xx.shape == self.p_emit_x.shape == self.phases.shape):
            raise DomainError("phases and emission arrays must have equal length")

    def rows(self):
        return [(self.delay, ph, a, b) for ph, a, b in zip(self.phases, self.p_emit_xx, self.p_emit_x)]


@dataclass
class VisibilityPoint:
    delay: float
    visibility: float
    fit_error: float
    poor_fit: bool = False


class VisibilityDecay(NamedTuple):
    points: list
    tau: float | None  # None when no decay is resolved
    v0: float


def _check_phases(phases):
    if phases.ndim != 1 or len(phases) < 3:
        raise DomainError("a fringe needs at least three phases")
    if np.any(np.diff(phases) <= 0):
        raise DomainError("phases must be strictly increasing")
    if phases[-1] - phases[0] < 2 * math.pi * (1 - 1 / len(phases)) - 1e-12:
        raise DomainError("phases must span a full fringe period")


@dataclass(frozen=True)
class PulseCalibration:
    half_pi: float
    pi: float


def calibrate_pulses(params: SystemParams, fwhm: float = 4.0, dt_max: float = DEFAULT_DT,
                     xtol: float = 1e-6) -> PulseCalibration:
    """Operational pi and pi/2 areas from single-pulse emission.

    pi is the first maximum of p_emit_xx(area); pi/2 is the smaller area at
    which p_emit_xx reaches half of that maximum.
    """
    a_pi = dyn.calibrate_pi_area(params, fwhm, dt_max)

    def emit(a):
        return dyn.emission_probabilities([params], [GaussianPulse(a, 0.0, fwhm)], dt_max)[0, 0]

    target = 0.5 * emit(a_pi)
    a_half = brentq(lambda a: emit(a) - target, 0.0, a_pi, xtol=xtol)
    return PulseCalibration(float(a_half), float(a_pi))


def fringe_phases(n: int = 12) -> np.ndarray:
    """n equally spaced two-photon phases covering one period."""
    return 2 * math.pi * np.arange(n) / n


# --- propagator machinery ------------------------------------------------------

def _phase_diag(two_photon_phase: float) -> np.ndarray:
    """Diagonal of the augmented superoperator rho -> U rho U^+ for the laser phase."""
    u = np.exp(1j * 0.5 * two_photon_phase * np.arange(3))
    d = np.ones(dyn._NAUG, dtype=complex)
    d[:9] = np.outer(u, u.conj()).reshape(-1)
    return d


def _pulse_propagators(params_list, area, fwhm, dt_max):
    """Augmented propagators (B, 11, 11) across the support of a zero-phase pulse."""
    half = PULSE_HALF_SPAN * fwhm
    eye = np.broadcast_to(np.eye(dyn._NAUG, dtype=complex), (len(params_list), dyn._NAUG, dyn._NAUG))
    amps = np.full((len(params_list), 1), area, dtype=complex)
    _, y = dyn._propagate(params_list, [(0.0, fwhm)], amps, eye, -half, half, dt_max, store=False)
    return y


def _free_propagators(gens, t):
    if t <= 0:
        return np.broadcast_to(np.eye(dyn._NAUG, dtype=complex), gens.shape)
    return sla.expm(gens * t)


def _with_phase(P, two_photon_phase):
    d = _phase_diag(two_photon_phase)
    return d[None, :, None] * P * d.conj()[None, None, :]


def _readout(y, readout):
    """(p_xx, p_x) from augmented state columns y (..., 11)."""
    if readout == "emission":
        return y[..., 9].real, y[..., 10].real
    rho_xx = y[..., dyn._IDX_XX].real
    rho_x = y[..., dyn._IDX_X].real
    return rho_xx, rho_xx + rho_x


def _tail_length(params: SystemParams, fwhm: float, readout: str) -> float:
    if readout == "population":
        return 0.0
    life = params.longest_lifetime
    return 10.0 * life - PULSE_HALF_SPAN * fwhm if math.isfinite(life) else 0.0


def _sequence_fringes(params: SystemParams, areas, centers_list, fwhm, phases, noise, readout, dt_max):
    """Noise-averaged fringes for pulse trains sharing areas but differing in
    timing; the last pulse carries the scanned two-photon phase.

    Returns one (p_xx, p_x) pair of arrays over phases per entry of
    ``centers_list``. Pulse propagators are computed once per area and noise
    shot; the phase enters by conjugation with the diagonal phase operator.
    """
    if readout not in READOUTS:
        raise ConfigurationError(f"readout must be one of {READOUTS}")
    noise = noise or NO_NOISE
    phases = np.asarray(phases, dtype=float)
    plist = [replace(params, delta_xx=params.delta_xx + d) for d in noise.offsets()]
    half = PULSE_HALF_SPAN * fwhm
    y0 = np.zeros(dyn._NAUG, dtype=complex)
    y0[0] = 1.0
    tail_t = _tail_length(params, fwhm, readout)
    gens = None
    cache = {}

    def pulse(a):
        if a not in cache:
            cache[a] = _pulse_propagators(plist, a, fwhm, dt_max)
        return cache[a]

    out = []
    for centers in centers_list:
        centers = np.asarray(centers, dtype=float)
        gaps = np.diff(centers) - 2 * half
        if np.all(gaps >= 0):
            if gens is None:
                gens = np.stack([dyn._static_generator(p) for p in plist])
            y = np.broadcast_to(y0, (len(plist), dyn._NAUG))[..., None]
            for k, a in enumerate(areas[:-1]):
                y = pulse(a) @ y
                y = _free_propagators(gens, gaps[k]) @ y
            last = pulse(areas[-1])
            tail = _free_propagators(gens, tail_t)
            pxx = np.empty(len(phases))
            px = np.empty(len(phases))
            for j, ph in enumerate(phases):
                yf = tail @ (_with_phase(last, ph) @ y)
                a_xx, a_x = _readout(yf[..., 0], readout)
                pxx[j], px[j] = a_xx.mean(), a_x.mean()
            out.append((pxx, px))
            continue
        # overlapping supports: integrate every (shot, phase) member directly
        members, amps = [], []
        for p in plist:
            for ph in phases:
                members.append(p)
                amps.append([complex(a) for a in areas[:-1]] + [areas[-1] * np.exp(0.5j * ph)])
        shapes = [(c, fwhm) for c in centers]
        y0b = np.broadcast_to(y0[:, None], (len(members), dyn._NAUG, 1))
        _, y = dyn._propagate(members, shapes, np.array(amps), y0b, centers[0] - half,
                              centers[-1] + half + tail_t, dt_max, store=False)
        a_xx, a_x = _readout(y[..., 0], readout)
        out.append((a_xx.reshape(len(plist), len(phases)).mean(axis=0),
                    a_x.reshape(len(plist), len(phases)).mean(axis=0)))
    return out


def _check_area(a):
    if not (math.isfinite(a) and a >= 0):
        raise DomainError(f"pulse area must be finite and >= 0, got {a}")


def _check_ramsey_delay(delay, fwhm):
    if delay < 3 * fwhm:
        raise DomainError(f"Ramsey delay {delay} ps is below 3 fwhm ({3 * fwhm} ps): pulses overlap")


def _check_echo_delay(total_delay, fwhm):
    if total_delay < 6 * fwhm:
        raise DomainError(f"echo delay {total_delay} ps is below 6 fwhm ({6 * fwhm} ps): pulses overlap")


def _echo_areas(pulse_area, pi_area):
    _check_area(pulse_area)
    if pi_area is None:
        pi_area = math.sqrt(2.0) * pulse_area
    _check_area(pi_area)
    return [pulse_area, pi_area, pulse_area]


def ramsey_scans(params: SystemParams, pulse_area: float, delays: Sequence[float],
                 phases: Sequence[float], noise: QuasiStaticNoise | None = None,
                 fwhm: float = 4.0, readout: str = "emission",
                 dt_max: float = DEFAULT_DT) -> list[RamseyScan]:
    """Ramsey fringes (two pi/2 pulses, second one phase-scanned) at several delays."""
    _check_area(pulse_area)
    for d in delays:
        _check_ramsey_delay(d, fwhm)
    res = _sequence_fringes(params, [pulse_area, pulse_area], [[0.0, d] for d in delays],
                            fwhm, phases, noise, readout, dt_max)
    return [RamseyScan(d, phases, pxx, px) for d, (pxx, px) in zip(delays, res)]


def ramsey_scan(params: SystemParams, pulse_area: float, delay: float, phases: Sequence[float],
                noise: QuasiStaticNoise | None = None, fwhm: float = 4.0,
                readout: str = "emission", dt_max: float = DEFAULT_DT) -> RamseyScan:
    """Two pi/2 pulses separated by ``delay``; the second carries each phase."""
    return ramsey_scans(params, pulse_area, [delay], phases, noise, fwhm, readout, dt_max)[0]


def ramsey(params: SystemParams, pulse_area: float, delay: float, phase: float,
           noise: QuasiStaticNoise | None = None, fwhm: float = 4.0,
           readout: str = "emission", dt_max: float = DEFAULT_DT) -> tuple[float, float]:
    """(p_emit_xx, p_emit_x) for a single Ramsey phase, averaged over noise shots."""
    _check_area(pulse_area)
    _check_ramsey_delay(delay, fwhm)
    (pxx, px), = _sequence_fringes(params, [pulse_area, pulse_area], [[0.0, delay]],
                                   fwhm, [phase], noise, readout, dt_max)
    return float(pxx[0]), float(px[0])


def echo_scans(params: SystemParams, pulse_area: float, total_delays: Sequence[float],
               phases: Sequence[float], noise: QuasiStaticNoise | None = None,
               fwhm: float = 4.0, readout: str = "emission", dt_max: float = DEFAULT_DT,
               pi_area: float | None = None) -> list[RamseyScan]:
    """pi/2 - pi - pi/2 fringes with the refocusing pulse at total_delay / 2.

    ``pulse_area`` is the pi/2 area and ``pi_area`` that of the refocusing
    pulse (default sqrt(2) * pulse_area, the weak-drive scaling).
    """
    areas = _echo_areas(pulse_area, pi_area)
    for d in total_delays:
        _check_echo_delay(d, fwhm)
    res = _sequence_fringes(params, areas, [[0.0, 0.5 * d, d] for d in total_delays],
                            fwhm, phases, noise, readout, dt_max)
    return [RamseyScan(d, phases, pxx, px) for d, (pxx, px) in zip(total_delays, res)]


def echo_scan(params: SystemParams, pulse_area: float, total_delay: float, phases: Sequence[float],
              noise: QuasiStaticNoise | None = None, fwhm: float = 4.0,
              readout: str = "emission", dt_max: float = DEFAULT_DT,
              pi_area: float | None = None) -> RamseyScan:
    return echo_scans(params, pulse_area, [total_delay], phases, noise, fwhm, readout,
                      dt_max, pi_area)[0]


def echo(params: SystemParams, pulse_area: float, total_delay: float, phase: float,
         noise: QuasiStaticNoise | None = None, fwhm: float = 4.0,
         readout: str = "emission", dt_max: float = DEFAULT_DT,
         pi_area: float | None = None) -> tuple[float, float]:
    """(p_emit_xx, p_emit_x) of the three-pulse echo for one phase of the last pulse."""
    areas = _echo_areas(pulse_area, pi_area)
    _check_echo_delay(total_delay, fwhm)
    (pxx, px), = _sequence_fringes(params, areas, [[0.0, 0.5 * total_delay, total_delay]],
                                   fwhm, [phase], noise, readout, dt_max)
    return float(pxx[0]), float(px[0])


# --- analysis ------------------------------------------------------------------

def fit_fringe(phases, values) -> tuple[float, float, bool]:
    """Sinusoid least-squares fit on the regressors (sin, cos, 1).

    Returns (visibility, fit_error, poor_fit). Visibility is amplitude/offset,
    i.e. (max - min)/(max + min) of the fitted sinusoid; fit_error is its
    standard error propagated from the residuals.
    """
    phases = np.asarray(phases, dtype=float)
    y = np.asarray(values, dtype=float)
    A = np.column_stack([np.sin(phases), np.cos(phases), np.ones_like(phases)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    s, c, off = coef
    amp = math.hypot(s, c)
    if off <= 0:
        raise DomainError("fringe offset must be positive")
    vis = amp / off
    resid = y - A @ coef
    dof = len(y) - 3
    if dof > 0 and amp > 0:
        var = float(resid @ resid) / dof
        cov = var * np.linalg.inv(A.T @ A)
        grad = np.array([s / (amp * off), c / (amp * off), -amp / off ** 2])
        err = math.sqrt(max(float(grad @ cov @ grad), 0.0))
    else:
        err = 0.0
    rms = math.sqrt(float(np.mean(resid ** 2)))
    poor = amp > 0 and rms > POOR_FIT_THRESHOLD * amp
    return vis, err, poor


def _exp_decay(t, v0, tau):
    return v0 * np.exp(-t / tau)


def visibility_decay(scans: Sequence[RamseyScan], channel: str = "xx") -> VisibilityDecay:
    """Per-delay fringe visibility and an exponential fit V(T) = V0 exp(-T/tau).

    ``tau`` is None when the data show no decay.
    """
    if len(scans) < 4:
        raise DomainError("at least four delays are required")
    points = []
    for sc in scans:
        vals = sc.p_emit_xx if channel == "xx" else sc.p_emit_x
        vis, err, poor = fit_fringe(sc.phases, vals)
        if poor:
            warnings.warn(f"poor fringe fit at delay {sc.delay} ps", PoorFitWarning, stacklevel=2)
        points.append(VisibilityPoint(sc.delay, vis, err, poor))
    t = np.array([p.delay for p in points])
    v = np.array([p.visibility for p in points])
    if np.any(v <= 0):
        raise DomainError("visibilities must be positive for the decay fit")
    slope, icpt = np.polyfit(t, np.log(v), 1)
    span = t.max() - t.min()
    if slope * span > -1e-9:
        return VisibilityDecay(points, None, float(np.exp(np.mean(np.log(v)))))
    p0 = (math.exp(icpt), -1.0 / slope)
    popt, _ = curve_fit(_exp_decay, t, v, p0=p0, maxfev=10000)
    return VisibilityDecay(points, float(popt[1]), float(popt[0]))


def scan_table(scans: Sequence[RamseyScan]):
    """Rows (delay_ps, phase_rad, p_emit_xx, p_emit_x) for all scans."""
    return [row for sc in scans for row in sc.rows()]


def fit_table(decay: VisibilityDecay):
    """Rows (delay_ps, visibility, fit_error) plus the fitted tau (None if unbounded)."""
    return [(p.delay, p.visibility, p.fit_error) for p in decay.points], decay.tau
