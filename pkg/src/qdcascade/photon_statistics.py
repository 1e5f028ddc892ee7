"""Photon click streams under pulsed excitation and their correlation analysis.

Resonant mode unravels the driven master equation into quantum trajectories
(Monte-Carlo wavefunction) across the pulse; once the drive is off the level
is sampled from the trajectory populations and the remaining cascade is
classical exponential decay. Above-band mode is a stochastic caricature:
Bernoulli excitation plus re-capture after each emission. Blinking gates whole
cycles with a two-state telegraph process.

Random numbers come from substreams keyed by (seed, stream tag, block of
cycles), so a stream is identical whatever the number of worker threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import dynamics as dyn
from .csvio import table_text
from .dynamics import FWHM_TO_SIGMA, PULSE_HALF_SPAN, SystemParams
from .errors import DomainError, InsufficientStatisticsError
from .linalg import G, X, XX
from .parallel import blocks, map_ordered, substream

CH_XX, CH_X = 0, 1
CHANNEL_NAMES = ("XX", "X")
MODES = ("resonant", "above_band")
MIN_SIDE_PAIRS = 100
DEFAULT_PERIOD = 12500.0  # ps, 80 MHz repetition

_TAG_EMIT, _TAG_BLINK, _TAG_DETECT, _TAG_GEN = 1, 2, 3, 4


def channel_index(channel) -> int:
    if isinstance(channel, str):
        try:
            return CHANNEL_NAMES.index(channel.upper())
        except ValueError:
            raise DomainError(f"unknown channel {channel!r}; expected XX or X") from None
    if channel in (CH_XX, CH_X):
        return int(channel)
    raise DomainError(f"unknown channel {channel!r}")


@dataclass
class ClickStream:
    """Detection events: cycle index, channel (0 = XX, 1 = X), time within the cycle (ps)."""
    n_cycles: int
    period: float
    cycle: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    channel: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    t_in_cycle: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.n_cycles < 1:
            raise DomainError("n_cycles must be >= 1")
        if not self.period > 0:
            raise DomainError("period must be > 0")
        self.cycle = np.asarray(self.cycle, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.int8)
        self.t_in_cycle = np.asarray(self.t_in_cycle, dtype=float)
        if not (self.cycle.shape == self.channel.shape == self.t_in_cycle.shape):
            raise DomainError("click arrays must have equal length")
        if len(self.cycle):
            if self.cycle.min() < 0 or self.cycle.max() >= self.n_cycles:
                raise DomainError("cycle index out of range")
            if self.t_in_cycle.min() < 0 or self.t_in_cycle.max() >= self.period:
                raise DomainError("click time outside [0, period)")
            if not np.all(np.isin(self.channel, (CH_XX, CH_X))):
                raise DomainError("channel must be 0 (XX) or 1 (X)")
            order = np.lexsort((self.t_in_cycle, self.cycle))
            self.cycle, self.channel, self.t_in_cycle = (self.cycle[order], self.channel[order],
                                                         self.t_in_cycle[order])

    def __len__(self):
        return len(self.cycle)

    @property
    def clicks(self):
        return [(int(c), CHANNEL_NAMES[k], float(t)) for c, k, t in zip(self.cycle, self.channel, self.t_in_cycle)]

    def counts(self, channel) -> np.ndarray:
        """Clicks per cycle on one channel."""
        sel = self.channel == channel_index(channel)
        return np.bincount(self.cycle[sel], minlength=self.n_cycles)

    def thinned(self, efficiency: float, seed: int = 0) -> "ClickStream":
        """Keep each click independently with probability ``efficiency``."""
        if not 0 <= efficiency <= 1:
            raise DomainError("efficiency must be in [0, 1]")
        keep = substream(seed, _TAG_DETECT, 1 << 40).random(len(self)) < efficiency
        return ClickStream(self.n_cycles, self.period, self.cycle[keep], self.channel[keep],
                           self.t_in_cycle[keep])

    def to_csv(self) -> str:
        return table_text(("cycle", "channel", "t_in_cycle_ps"), self.clicks)


@dataclass(frozen=True)
class EmitterStatModel:
    """Emitter statistics model.

    ``blink`` is (rate_off, rate_on) in 1/cycle; (0, 0) disables blinking.
    ``pulse_area`` applies to resonant mode (None: calibrated pi pulse).
    """
    mode: str = "resonant"
    p_excite: float = 1.0
    p_recapture: float = 0.0
    blink: tuple = (0.0, 0.0)
    detection_efficiency: float = 1.0
    seed: int = 0
    pulse_area: float | None = None
    fwhm: float = 4.0
    period: float = DEFAULT_PERIOD

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}")
        for name in ("p_excite", "p_recapture", "detection_efficiency"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DomainError(f"{name} must be in [0, 1], got {v}")
        object.__setattr__(self, "blink", tuple(float(b) for b in self.blink))
        if len(self.blink) != 2 or any(not (math.isfinite(b) and b >= 0) for b in self.blink):
            raise DomainError("blink must be two finite rates >= 0")
        if self.pulse_area is not None and not self.pulse_area >= 0:
            raise DomainError("pulse_area must be >= 0")
        if not self.fwhm > 0 or not self.period > 0:
            raise DomainError("fwhm and period must be > 0")

    @property
    def blinking(self) -> bool:
        return sum(self.blink) > 0


# --- blinking -------------------------------------------------------------------

def telegraph_states(rate_off: float, rate_on: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """On/off state per cycle of a continuous-time two-state process sampled once per cycle.

    Starts from the stationary distribution; the state autocorrelation decays
    as exp(-(rate_on + rate_off) * lag).
    """
    s = rate_on + rate_off
    if s == 0:
        return np.ones(n, dtype=bool)
    leave = 1.0 - math.exp(-s)
    p_leave = {True: rate_off / s * leave, False: rate_on / s * leave}
    state = bool(rng.random() < rate_on / s)
    out = np.empty(n, dtype=bool)
    pos = 0
    while pos < n:
        p = p_leave[state]
        run = n - pos if p == 0 else int(rng.geometric(p))
        out[pos:pos + run] = state
        pos += run
        state = not state
    return out


# --- resonant trajectories ---------------------------------------------------------

@dataclass
class _TrajectoryTables:
    t: np.ndarray          # step boundaries, pulse centred at 0
    steps: np.ndarray      # (n, 3, 3) no-jump RK4 step matrices
    ref: np.ndarray        # (n + 1, 3) no-jump reference from |g>
    ref_norm: np.ndarray   # (n + 1,)
    jumps: list            # [(L, rate, channel or None), ...]; rate may be an array over steps


def _trajectory_tables(params: SystemParams, area: float, fwhm: float, dt: float) -> _TrajectoryTables:
    half = PULSE_HALF_SPAN * fwhm
    n = max(1, math.ceil(2 * half / dt))
    h = 2 * half / n
    t = -half + h * np.arange(n + 1)
    sig = fwhm * FWHM_TO_SIGMA

    def omega(tt):
        return area / (sig * math.sqrt(2 * math.pi)) * np.exp(-0.5 * (tt / sig) ** 2)

    static = [(dyn._L_OPS[0], params.gamma_xx, CH_XX), (dyn._L_OPS[1], params.gamma_x, CH_X),
              (dyn._L_OPS[2], params.gamma_dxx, None), (dyn._L_OPS[3], params.gamma_dx, None)]
    static = [(L, r, c) for L, r, c in static if r > 0]
    damp = sum((r * L.conj().T @ L for L, r, _ in static), np.zeros((3, 3), dtype=complex))
    H0 = dyn.hamiltonian(params, 0.0, 0.0) - 0.5j * damp
    K = dyn._K + dyn._K.conj().T
    Linc = dyn._L_INC
    LincLinc = Linc.conj().T @ Linc

    def gen(tt):
        om = omega(tt)[:, None, None]
        H = H0[None] + 0.5 * om * K[None]
        if params.gamma_inc:
            H = H - 0.25j * params.gamma_inc * om ** 2 * LincLinc[None]
        return -1j * H

    A0, Ah, A1 = gen(t[:-1]), gen(t[:-1] + 0.5 * h), gen(t[1:])
    eye = np.eye(3)
    k1 = A0
    k2 = Ah @ (eye + 0.5 * h * k1)
    k3 = Ah @ (eye + 0.5 * h * k2)
    k4 = A1 @ (eye + h * k3)
    steps = eye + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    ref = np.empty((n + 1, 3), dtype=complex)
    ref[0] = (1, 0, 0)
    for k in range(n):
        ref[k + 1] = steps[k] @ ref[k]
    jumps = list(static)
    if params.gamma_inc:
        jumps.append((Linc, 0.5 * params.gamma_inc * omega(t) ** 2, None))
    return _TrajectoryTables(t, steps, ref, np.sum(np.abs(ref) ** 2, axis=1).real, jumps)


def _resonant_block(params, tab, n, rng, period):
    """Emitted photons for n cycles: arrays (local cycle, channel, time in cycle)."""
    t0 = tab.t[0]
    nsteps = len(tab.steps)
    r = rng.random(n)
    # first jump: first step boundary where the shared reference norm drops below r
    kj = np.searchsorted(-tab.ref_norm, -r, side="left")
    jumped = np.flatnonzero(kj <= nsteps)
    final = np.broadcast_to(tab.ref[-1] / math.sqrt(tab.ref_norm[-1]), (n, 3)).copy()
    cyc, chans, times = [], [], []
    if len(jumped):
        order = np.argsort(kj[jumped], kind="stable")
        idx = jumped[order]
        start = kj[idx]
        psi = tab.ref[start].copy()
        psi, ch = _jump(tab, psi, start, rng)
        em = ch >= 0
        cyc.append(idx[em]), chans.append(ch[em]), times.append(tab.t[start[em]] - t0)
        thr = rng.random(len(idx))
        for k in range(int(start.min()), nsteps):
            act = np.flatnonzero(start <= k)
            if not len(act):
                continue
            psi[act] = psi[act] @ tab.steps[k].T
            norm = np.sum(np.abs(psi[act]) ** 2, axis=1)
            hit = act[norm <= thr[act]]
            if len(hit):
                new, ch = _jump(tab, psi[hit], k + 1, rng)
                psi[hit] = new
                thr[hit] = rng.random(len(hit))
                em = ch >= 0
                cyc.append(idx[hit[em]]), chans.append(ch[em])
                times.append(np.full(int(em.sum()), tab.t[k + 1] - t0))
        final[idx] = psi / np.linalg.norm(psi, axis=1)[:, None]
    # after the drive: projective level sample, then classical cascade
    pop = np.abs(final) ** 2
    pop /= pop.sum(axis=1)[:, None]
    u = rng.random(n)
    level = np.where(u < pop[:, XX], XX, np.where(u < pop[:, XX] + pop[:, X], X, G))
    e_xx = rng.exponential(size=n)
    e_x = rng.exponential(size=n)
    t_end = tab.t[-1] - t0
    tau_xx = 1 / params.gamma_xx if params.gamma_xx > 0 else math.inf
    tau_x = 1 / params.gamma_x if params.gamma_x > 0 else math.inf
    from_xx = level == XX
    t_xx = t_end + tau_xx * e_xx
    t_x = np.where(from_xx, t_xx, t_end) + tau_x * e_x
    has_x = level != G
    cyc += [np.flatnonzero(from_xx), np.flatnonzero(has_x)]
    chans += [np.full(int(from_xx.sum()), CH_XX), np.full(int(has_x.sum()), CH_X)]
    times += [t_xx[from_xx], t_x[has_x]]
    return _finish(cyc, chans, times, period)


def _jump(tab, psi, k, rng):
    """Pick and apply a jump channel for each row of psi at step index k
    (scalar or per row). Returns (normalized psi, channel per row; -1 if silent)."""
    weights, outs = [], []
    for L, rate, _ in tab.jumps:
        r = rate[k] if np.ndim(rate) else rate
        v = psi @ L.T
        outs.append(v)
        weights.append(r * np.sum(np.abs(v) ** 2, axis=1))
    cum = np.cumsum(np.stack(weights, axis=1), axis=1)
    u = rng.random(len(psi)) * cum[:, -1]
    pick = np.minimum((u[:, None] >= cum).sum(axis=1), len(tab.jumps) - 1)
    new = np.stack(outs, axis=1)[np.arange(len(psi)), pick]
    new /= np.linalg.norm(new, axis=1)[:, None]
    ch = np.array([c if c is not None else -1 for _, _, c in tab.jumps])[pick]
    return new, ch


def _finish(cyc, chans, times, period):
    if not cyc:
        return np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0)
    c = np.concatenate(cyc).astype(np.int64)
    k = np.concatenate(chans).astype(np.int8)
    t = np.concatenate(times).astype(float)
    keep = t < period
    return c[keep], k[keep], t[keep]


def _above_band_block(params, model, n, rng):
    tau = {XX: 1 / params.gamma_xx if params.gamma_xx > 0 else math.inf,
           X: 1 / params.gamma_x if params.gamma_x > 0 else math.inf}
    excited = rng.random(n) < model.p_excite
    idx = np.flatnonzero(excited)
    level = np.full(len(idx), XX)
    t = np.zeros(len(idx))
    cyc, chans, times = [], [], []
    while len(idx):
        e = rng.exponential(size=len(idx))
        u = rng.random(len(idx))
        t = t + np.where(level == XX, tau[XX], tau[X]) * e
        inside = t < model.period
        ch = np.where(level == XX, CH_XX, CH_X)
        cyc.append(idx[inside]), chans.append(ch[inside]), times.append(t[inside])
        level = np.where(u < model.p_recapture, XX, level - 1)
        alive = inside & (level > G)
        idx, level, t = idx[alive], level[alive], t[alive]
    return _finish(cyc, chans, times, model.period)


def _emitted(params: SystemParams, model: EmitterStatModel, n_cycles: int, threads=None,
             dt: float = dyn.DEFAULT_DT):
    """All emitted photons (before detection) and the per-cycle on mask."""
    if n_cycles < 1:
        raise DomainError("n_cycles must be >= 1")
    on = telegraph_states(model.blink[0], model.blink[1], n_cycles, substream(model.seed, _TAG_BLINK))
    tab = None
    if model.mode == "resonant":
        area = model.pulse_area
        if area is None:
            area = dyn.calibrate_pi_area(params, model.fwhm)
        tab = _trajectory_tables(params, area, model.fwhm, dt)

    def run(block):
        i, a, b = block
        rng = substream(model.seed, _TAG_EMIT, i)
        if tab is not None:
            c, k, t = _resonant_block(params, tab, b - a, rng, model.period)
        else:
            c, k, t = _above_band_block(params, model, b - a, rng)
        return c + a, k, t

    parts = map_ordered(run, blocks(n_cycles), threads)
    c = np.concatenate([p[0] for p in parts])
    k = np.concatenate([p[1] for p in parts])
    t = np.concatenate([p[2] for p in parts])
    gate = on[c]
    return c[gate], k[gate], t[gate], on


def simulate_clicks(params: SystemParams, model: EmitterStatModel, n_cycles: int,
                    threads: int | None = None, dt: float = dyn.DEFAULT_DT) -> ClickStream:
    """Simulate detected photons over ``n_cycles`` excitation cycles."""
    c, k, t, _ = _emitted(params, model, n_cycles, threads, dt)
    if model.detection_efficiency < 1:
        keep = np.zeros(len(c), dtype=bool)
        for i, a, b in blocks(n_cycles):
            lo, hi = np.searchsorted(c, [a, b])
            keep[lo:hi] = substream(model.seed, _TAG_DETECT, i).random(hi - lo) < model.detection_efficiency
        c, k, t = c[keep], k[keep], t[keep]
    return ClickStream(n_cycles, model.period, c, k, t)


# --- reference generators -------------------------------------------------------------

def _stream_from_counts(counts, n_cycles, period, rng, channel=CH_XX):
    cyc = np.repeat(np.arange(n_cycles), counts)
    t = rng.random(len(cyc)) * period
    return ClickStream(n_cycles, period, cyc, np.full(len(cyc), channel), t)


def bernoulli_mixture_stream(p1: float, p2: float, n_cycles: int, seed: int = 0,
                             period: float = DEFAULT_PERIOD) -> ClickStream:
    """XX-channel stream with one click w.p. p1 and two clicks w.p. p2 per cycle."""
    if p1 < 0 or p2 < 0 or p1 + p2 > 1:
        raise DomainError("need p1, p2 >= 0 and p1 + p2 <= 1")
    rng = substream(seed, _TAG_GEN, 0)
    u = rng.random(n_cycles)
    counts = (u < p1 + p2).astype(np.int64) + (u < p2)
    return _stream_from_counts(counts, n_cycles, period, rng)


def poisson_stream(mean: float, n_cycles: int, seed: int = 0,
                   period: float = DEFAULT_PERIOD) -> ClickStream:
    """XX-channel stream with i.i.d. Poisson click numbers per cycle."""
    if mean < 0:
        raise DomainError("mean must be >= 0")
    rng = substream(seed, _TAG_GEN, 1)
    return _stream_from_counts(rng.poisson(mean, n_cycles), n_cycles, period, rng)


def mixture_g2(p1: float, p2: float) -> float:
    """Approximate g2(0) 2 p2 / (p1 + 2 p2)^2 of a one/two-photon mixture."""
    return 2 * p2 / (p1 + 2 * p2) ** 2


# --- correlation analysis ----------------------------------------------------------------

@dataclass
class CoincidenceHistogram:
    lags: np.ndarray
    counts: np.ndarray
    g2_zero: float
    statistical_error: float

    @property
    def edges(self) -> np.ndarray:
        return np.append(self.lags - 0.5, self.lags[-1] + 0.5)

    def to_csv(self) -> str:
        body = table_text(("lag", "counts"), zip(self.lags, self.counts))
        return body + table_text(("g2_zero", "stat_error"), [(self.g2_zero, self.statistical_error)])


def _lag_products(n: np.ndarray, max_lag: int) -> np.ndarray:
    n = n.astype(float)
    return np.array([n[:-k] @ n[k:] for k in range(1, max_lag + 1)])


def g2_pulsed(stream: ClickStream, channel="XX", max_lag: int = 10) -> CoincidenceHistogram:
    """Pulsed autocorrelation from whole-cycle coincidence peaks.

    The central peak counts ordered same-cycle click pairs n(n-1); side peak k
    counts n_c * n_{c+k}. g2_zero is the central peak over the mean side peak,
    each normalized per available cycle pair.
    """
    if max_lag < 1:
        raise DomainError("max_lag must be >= 1")
    if max_lag >= stream.n_cycles:
        raise InsufficientStatisticsError("max_lag must be smaller than the number of cycles")
    n = stream.counts(channel)
    if not n.any():
        raise InsufficientStatisticsError(f"no clicks on channel {channel}")
    N = stream.n_cycles
    g0 = float(np.sum(n * (n - 1.0)))
    side = _lag_products(n, max_lag)
    if side.sum() < MIN_SIDE_PAIRS:
        raise InsufficientStatisticsError(f"only {side.sum():.0f} side-peak pairs (< {MIN_SIDE_PAIRS})")
    per = side / (N - np.arange(1, max_lag + 1))
    g2 = (g0 / N) / per.mean()
    if g0 > 0:
        err = g2 * math.sqrt(1.0 / g0 + 1.0 / side.sum())
    else:
        err = (1.0 / N) / per.mean()  # one-count upper scale when the central peak is empty
    lags = np.arange(-max_lag, max_lag + 1)
    counts = np.concatenate([side[::-1], [g0], side])
    return CoincidenceHistogram(lags, counts, float(g2), float(err))


class BlinkingEnvelope(NamedTuple):
    lags: np.ndarray
    heights: np.ndarray
    errors: np.ndarray


class BlinkingFit(NamedTuple):
    amplitude: float
    tau_cycles: float
    baseline: float


def blinking_envelope(stream: ClickStream, max_lag: int, channel="XX",
                      blink: tuple | None = None) -> BlinkingEnvelope:
    """Side-peak heights normalized to the uncorrelated level (mean clicks per cycle squared).

    When ``blink`` rates are given the stream must span at least
    10 / min(rate_on, rate_off) cycles.
    """
    if blink is not None and sum(blink) > 0:
        slow = min(blink)
        if slow == 0 or stream.n_cycles < 10.0 / slow:
            raise InsufficientStatisticsError("stream too short to resolve the blinking envelope")
    if max_lag < 1 or max_lag >= stream.n_cycles:
        raise DomainError("need 1 <= max_lag < n_cycles")
    n = stream.counts(channel)
    if not n.any():
        raise InsufficientStatisticsError(f"no clicks on channel {channel}")
    mu = n.mean()
    side = _lag_products(n, max_lag)
    if side.sum() < MIN_SIDE_PAIRS:
        raise InsufficientStatisticsError("too few side-peak pairs")
    N = stream.n_cycles
    h = side / (N - np.arange(1, max_lag + 1)) / mu ** 2
    err = h / np.sqrt(np.maximum(side, 1.0))
    return BlinkingEnvelope(np.arange(1, max_lag + 1), h, err)


def _env_model(k, a, tau, base):
    return base + a * np.exp(-k / tau)


def fit_blinking_decay(env: BlinkingEnvelope) -> BlinkingFit:
    """Fit heights(k) = baseline + amplitude * exp(-k / tau)."""
    k, h = env.lags.astype(float), env.heights
    base0 = float(np.mean(h[-max(1, len(h) // 5):]))
    p0 = (max(float(h[0] - base0), 1e-3), max(len(h) / 5.0, 1.0), base0)
    popt, _ = curve_fit(_env_model, k, h, p0=p0, sigma=env.errors, maxfev=20000)
    return BlinkingFit(float(popt[0]), float(popt[1]), float(popt[2]))


# --- pair efficiency -------------------------------------------------------------------------

class EfficiencyRow(NamedTuple):
    power: float
    p_excite_above: float
    pair_above: float
    pair_resonant: float


def saturation_probability(power: float, p_sat: float = 1.0) -> float:
    """Above-band excitation probability 1 - exp(-P / P_sat)."""
    if power < 0 or not p_sat > 0:
        raise DomainError("need power >= 0 and p_sat > 0")
    return 1.0 - math.exp(-power / p_sat)


def pair_probability(params: SystemParams, model: EmitterStatModel, n_cycles: int,
                     threads: int | None = None) -> float:
    """Fraction of cycles emitting exactly one XX and one X photon (a clean cascade pair)."""
    c, k, _, _ = _emitted(params, model, n_cycles, threads)
    nxx = np.bincount(c[k == CH_XX], minlength=n_cycles)
    nx = np.bincount(c[k == CH_X], minlength=n_cycles)
    return float(np.mean((nxx == 1) & (nx == 1)))


def efficiency_compare(params: SystemParams, resonant: EmitterStatModel, above: EmitterStatModel,
                       powers: Sequence[float], n_cycles: int = 20000, p_sat: float = 1.0,
                       threads: int | None = None) -> list[EfficiencyRow]:
    """Clean pair-emission probability per above-band power against the resonant line."""
    powers = list(powers)
    if not powers:
        raise DomainError("powers must be non-empty")
    if resonant.mode != "resonant" or above.mode != "above_band":
        raise DomainError("expected one resonant and one above_band model")
    line = pair_probability(params, resonant, n_cycles, threads)
    rows = []
    for i, P in enumerate(powers):
        p = saturation_probability(P, p_sat)
        m = EmitterStatModel("above_band", p, above.p_recapture, above.blink, above.detection_efficiency,
                             above.seed + i, None, above.fwhm, above.period)
        rows.append(EfficiencyRow(float(P), p, pair_probability(params, m, n_cycles, threads), line))
    return rows
