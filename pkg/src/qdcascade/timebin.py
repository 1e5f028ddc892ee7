"""Time-bin entangled photon pairs from early/late excitation of the cascade.

A pump interferometer splits each excitation pulse into an early and a late
copy. A single excitation leaves the pair in a coherent superposition of
"both photons early" and "both photons late"; a double excitation emits two
full cascades. Each photon then passes an unbalanced analyzer whose short and
long arms each reach either output port with amplitude 1/2, so a photon
born in bin b arrives in slot b (short arm) or b + 1 (long arm). Both output
ports of each analyzer are monitored ("+" adds the arms, "-" subtracts them).
Coincidences are binned by detector pair on the 3 x 3 grid of (XX slot, X slot);
summing anti-diagonals gives the five coincidence peaks, whose centre (slot sum
2) carries the interference.

Cycles are independent, so per-cycle event classes and routing outcomes are
drawn as multinomial totals; this is exact in distribution and makes very long
acquisitions cheap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import NamedTuple

import numpy as np

from .csvio import table_text
from .dynamics import DEFAULT_PARAMS
from .errors import ConfigurationError, DomainError, InsufficientStatisticsError
from .parallel import map_ordered, substream
from .pulse_sequences import fit_fringe
from .tomography import STANDARD_SETTINGS, CountsTable, TwoQubitState

PEAK_LAGS = (-2, -1, 0, 1, 2)
MIN_POSTSELECTED = 10**4
_TAG_TIMEBIN = 5
_TOMO_STREAM = 1 << 20
_DEFAULT_LIFETIMES = (1 / DEFAULT_PARAMS.gamma_xx, 1 / DEFAULT_PARAMS.gamma_x)
# per single-photon projector: analyzer phase, the slots of its measurement
# basis, and the (slot, ports) cell that registers the projector's outcome
_PROJECTOR_CELL = {"e": (0.0, (0, 2), (0, (0, 1))), "l": (0.0, (0, 2), (2, (0, 1))),
                   "e+l": (0.0, (1,), (1, (0,))), "e+il": (math.pi / 2, (1,), (1, (0,)))}

@dataclass(frozen=True)
class TimeBinSource:
    p_excite: float
    coherence: float
    phi_pump: float = 0.0
    lifetimes: tuple = _DEFAULT_LIFETIMES
    bin_separation: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.p_excite <= 1:
            raise DomainError("p_excite must lie in [0, 1]")
        if not 0 <= self.coherence <= 1:
            raise DomainError("coherence must lie in [0, 1]")
        if not math.isfinite(self.phi_pump):
            raise DomainError("phi_pump must be finite")
        if len(self.lifetimes) != 2 or min(self.lifetimes) <= 0:
            raise DomainError("lifetimes must be two positive times")
        if not self.bin_separation > 10 * max(self.lifetimes):
            raise DomainError("bin_separation must exceed 10 x the longest lifetime")


@dataclass(frozen=True)
class AnalyzerPair:
    phi_xx: float = 0.0
    phi_x: float = 0.0
    path_imbalance: float = 10000.0
    gate_window: float = 2000.0

    def __post_init__(self):
        if not (math.isfinite(self.phi_xx) and math.isfinite(self.phi_x)):
            raise DomainError("analyzer phases must be finite")
        if not 0 < self.gate_window < self.path_imbalance / 2:
            raise DomainError("gate_window must lie in (0, path_imbalance / 2)")

    def with_phases(self, phi_xx: float, phi_x: float) -> "AnalyzerPair":
        return AnalyzerPair(phi_xx, phi_x, self.path_imbalance, self.gate_window)


def ideal_state(phi_pump: float, coherence: float) -> TwoQubitState:
    """Equal early/late populations with ee-ll coherence (V/2) e^{-i phi_pump}."""
    if not 0 <= coherence <= 1:
        raise DomainError("coherence must lie in [0, 1]")
    m = np.zeros((4, 4), dtype=complex)
    m[0, 0] = m[3, 3] = 0.5
    m[0, 3] = 0.5 * coherence * np.exp(-1j * phi_pump)
    m[3, 0] = np.conj(m[0, 3])
    return TwoQubitState(m)


def background_weight(p_excite: float) -> float:
    """Fraction of post-selected XX-X pairs coming from double excitations.

    A double excitation (probability p^2) yields four XX-X pairings against
    one pairing for a single excitation (probability 2p(1-p)).
    """
    if p_excite == 0:
        return 0.0
    return 2 * p_excite / (1 + p_excite)


def effective_state(src: TimeBinSource) -> TwoQubitState:
    """Post-selected pair state: ideal state mixed with a white double-excitation background."""
    w = background_weight(src.p_excite)
    return TwoQubitState((1 - w) * ideal_state(src.phi_pump, src.coherence).matrix + w * np.eye(4) / 4)


# Routing probabilities.

def _arm_amplitudes(phi: float) -> np.ndarray:
    """[bin, port, slot] amplitudes; the long arm carries e^{i phi}."""
    a = np.zeros((2, 2, 3), dtype=complex)
    for b in range(2):
        a[b, :, b] = 0.5
        a[b, 0, b + 1] = 0.5 * np.exp(1j * phi)
        a[b, 1, b + 1] = -0.5 * np.exp(1j * phi)
    return a


def single_cell_probabilities(src: TimeBinSource, analyzers: AnalyzerPair) -> np.ndarray:
    """[XX port, X port, XX slot, X slot] coincidence probabilities per single excitation."""
    rho = ideal_state(src.phi_pump, src.coherence).matrix[np.ix_([0, 3], [0, 3])]
    axx, ax = _arm_amplitudes(analyzers.phi_xx), _arm_amplitudes(analyzers.phi_x)
    amp = np.einsum("bpi,bqj->bpqij", axx, ax)
    return np.real(np.einsum("bc,bpqij,cpqij->pqij", rho, amp, amp.conj()))


def _double_routing():
    # photons XX early, X early, XX late, X late; each independently takes one of
    # four (port, arm) routes with probability 1/4 and every XX-X pairing counts
    routes = np.array(list(product(range(4), repeat=4)))
    bins = np.array([0, 0, 1, 1])
    port, slot = routes // 2, bins + routes % 2
    grid = np.zeros((len(routes), 2, 2, 3, 3))
    for xx, x in ((0, 1), (0, 3), (2, 1), (2, 3)):
        np.add.at(grid, (np.arange(len(routes)), port[:, xx], port[:, x], slot[:, xx], slot[:, x]), 1)
    return np.full(len(routes), 1 / len(routes)), grid


_DOUBLE_PROBS, _DOUBLE_GRID = _double_routing()


@dataclass(frozen=True)
class CoincidenceRecord:
    """Coincidences indexed [XX port, X port, XX slot, X slot] for one analyzer setting.

    ``peaks``, ``central`` and ``total`` refer to the (+, +) detector pair.
    """
    grid: np.ndarray
    n_cycles: int
    n_pairs: int

    def peaks_for(self, ports=(0, 0)) -> np.ndarray:
        """Counts at peak lags -2..2 (anti-diagonal sums of one detector pair's grid)."""
        g = self.grid[ports]
        return np.array([sum(g[i, k - i] for i in range(3) if 0 <= k - i < 3) for k in range(5)])

    @property
    def peaks(self) -> np.ndarray:
        return self.peaks_for((0, 0))

    @property
    def central(self) -> int:
        return int(self.peaks[2])

    @property
    def total(self) -> int:
        return int(self.grid[0, 0].sum())

    @property
    def slot_grid(self) -> np.ndarray:
        """3 x 3 slot grid summed over detector pairs."""
        return self.grid.sum(axis=(0, 1))

    def to_csv(self) -> str:
        return table_text(["peak_lag", "counts"], zip(PEAK_LAGS, self.peaks))


def _check_pair(src: TimeBinSource, analyzers: AnalyzerPair):
    if not math.isclose(src.bin_separation, analyzers.path_imbalance, rel_tol=1e-9):
        raise ConfigurationError(
            f"analyzer imbalance {analyzers.path_imbalance} ps != bin separation {src.bin_separation} ps")


def simulate_coincidences(src: TimeBinSource, analyzers: AnalyzerPair, n_cycles: int,
                          stream: int = 0) -> CoincidenceRecord:
    """Monte-Carlo coincidence record of ``n_cycles`` pump cycles.

    ``stream`` selects an independent random substream of the source seed,
    so separate settings of one acquisition are statistically independent.
    """
    _check_pair(src, analyzers)
    if n_cycles < 0:
        raise DomainError("n_cycles must be >= 0")
    rng = substream(src.seed, _TAG_TIMEBIN, stream)
    p = src.p_excite
    _, n_single, n_double = rng.multinomial(int(n_cycles), [(1 - p) ** 2, 2 * p * (1 - p), p * p])
    cell = np.clip(single_cell_probabilities(src, analyzers).ravel(), 0.0, None)
    grid = rng.multinomial(n_single, cell / cell.sum()).reshape(2, 2, 3, 3).astype(np.int64)
    routes = rng.multinomial(n_double, _DOUBLE_PROBS)
    grid += np.rint(np.tensordot(routes, _DOUBLE_GRID, axes=1)).astype(np.int64)
    return CoincidenceRecord(grid, int(n_cycles), int(n_single + 4 * n_double))


@dataclass(frozen=True)
class FringeScan:
    phases: np.ndarray
    central_counts: np.ndarray

    def visibility(self) -> tuple[float, float]:
        """(visibility, standard error) of the fitted sinusoid."""
        if self.central_counts.sum() <= 0:
            raise InsufficientStatisticsError("no central-peak counts in the fringe scan")
        vis, err, _ = fit_fringe(self.phases, self.central_counts)
        return vis, err

    def to_csv(self) -> str:
        return table_text(["phi_x_rad", "central_counts"], zip(self.phases, self.central_counts))


def fringe_scan(src: TimeBinSource, analyzers: AnalyzerPair, phases, n_cycles: int,
                stream: int = 0, threads: int | None = None) -> FringeScan:
    """Central-peak counts versus the X analyzer phase (phi_xx held fixed)."""
    phases = np.asarray(phases, dtype=float)
    recs = map_ordered(lambda k: simulate_coincidences(src, analyzers.with_phases(analyzers.phi_xx, phases[k]),
                                                       n_cycles, stream + k), range(len(phases)), threads)
    return FringeScan(phases, np.array([r.central for r in recs]))


class Visibilities(NamedTuple):
    time: float
    energy1: float
    energy2: float


def time_visibility(record: CoincidenceRecord) -> float:
    """(ee + ll - el - le)/(sum) from the outer slot cells of all detector pairs."""
    g = record.slot_grid
    corr, anti = g[0, 0] + g[2, 2], g[0, 2] + g[2, 0]
    if corr + anti < MIN_POSTSELECTED:
        raise InsufficientStatisticsError(f"time basis: {corr + anti} pairs < {MIN_POSTSELECTED}")
    return float((corr - anti) / (corr + anti))


def visibilities(src: TimeBinSource, analyzers: AnalyzerPair, n_cycles: int, n_phases: int = 16,
                 threads: int | None = None) -> Visibilities:
    """Time-basis visibility and the two energy-basis fringe visibilities.

    The energy bases scan phi_x over a full period with phi_xx offset by 0
    and pi/2; each scan point and the time-basis run use ``n_cycles`` cycles.
    """
    if n_phases < 4:
        raise DomainError("need at least 4 fringe points")
    phases = 2 * np.pi * np.arange(n_phases) / n_phases
    jobs = [(analyzers, 0)]
    for b, offset in enumerate((0.0, np.pi / 2)):
        jobs += [(analyzers.with_phases(analyzers.phi_xx + offset, ph), 1 + b * n_phases + k)
                 for k, ph in enumerate(phases)]
    recs = map_ordered(lambda job: simulate_coincidences(src, job[0], n_cycles, job[1]), jobs, threads)
    v_time = time_visibility(recs[0])
    out = [v_time]
    for b in range(2):
        counts = np.array([r.central for r in recs[1 + b * n_phases:1 + (b + 1) * n_phases]])
        if counts.sum() < MIN_POSTSELECTED:
            raise InsufficientStatisticsError(f"energy basis {b + 1}: {counts.sum()} pairs < {MIN_POSTSELECTED}")
        out.append(float(FringeScan(phases, counts).visibility()[0]))
    return Visibilities(*out)


def calibrate_coherence(target, p_excite: float, n_cycles: int, coherences=None, seed: int = 0,
                        threads: int | None = None):
    """Coherence V whose simulated visibilities best match ``target`` (max-abs deviation).

    Returns (V, Visibilities at V, max deviation).
    """
    target = np.asarray(target, dtype=float)
    grid = np.linspace(0, 1, 101) if coherences is None else np.asarray(coherences, dtype=float)
    best = None
    for v in grid:
        vis = visibilities(TimeBinSource(p_excite, float(v), seed=seed), AnalyzerPair(), n_cycles, threads=threads)
        dev = float(np.max(np.abs(np.array(vis) - target)))
        if best is None or dev < best[2]:
            best = (float(v), vis, dev)
    return best


def tomography_counts(src: TimeBinSource, analyzers: AnalyzerPair, n_cycles: int,
                      settings=STANDARD_SETTINGS, threads: int | None = None) -> CountsTable:
    """Sixteen-setting tomography data from simulated coincidences.

    A photon lands in the outer slots (time basis) or the middle slot
    (superposition basis) with probability 1/2 whatever its state, so the
    coincidences inside a setting's slot block form its binomial trials and
    the block's outcome cell its successes.
    """
    def run(k):
        s = settings[k]
        (pa, block_a, (ia, qa)), (pb, block_b, (ib, qb)) = (_PROJECTOR_CELL[s.projector_a],
                                                             _PROJECTOR_CELL[s.projector_b])
        g = simulate_coincidences(src, analyzers.with_phases(pa, pb), n_cycles, _TOMO_STREAM + k).grid
        trials = g[:, :, list(block_a)][:, :, :, list(block_b)].sum()
        hits = g[np.ix_(qa, qb, [ia], [ib])].sum()
        return hits, trials

    res = map_ordered(run, range(len(settings)), threads)
    counts = np.array([r[0] for r in res], dtype=np.int64)
    n = np.array([r[1] for r in res], dtype=np.int64)
    if np.any(n <= 0) or counts.sum() == 0:
        raise InsufficientStatisticsError("no coincidences in some tomography setting")
    return CountsTable(tuple(settings), counts, n)
