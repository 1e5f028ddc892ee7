"""End-to-end acceptance checks, one group per criterion.

Each test carries a ``criterion`` marker; the conftest prints one PASS/FAIL
line per criterion at the end of the run.
"""
import math
import time

import numpy as np
import pytest

from oracles import single_pulse_emission
from qdcascade.cli import run
from qdcascade.dynamics import (DEFAULT_PARAMS, GaussianPulse, calibrate_pi_area, emission_probabilities,
                                evolve_many, ground_state, single_pulse_sequence)
from qdcascade.linalg import ghz_to_rad_per_ps, trace_distance
from qdcascade.photon_statistics import (ClickStream, bernoulli_mixture_stream, g2_pulsed, mixture_g2,
                                         poisson_stream)
from qdcascade.pulse_sequences import (QuasiStaticNoise, calibrate_pulses, echo_scans, fit_fringe,
                                       fringe_phases, ramsey_scans, visibility_decay)
from qdcascade.timebin import (AnalyzerPair, TimeBinSource, calibrate_coherence, effective_state, fringe_scan,
                               ideal_state, simulate_coincidences, tomography_counts, visibilities)
from qdcascade.tomography import (MAXIMALLY_MIXED, bell_state, concurrence, fidelity, generate_counts,
                                  mle_reconstruct, tangle)

A = AnalyzerPair()


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


# --- 1: master-equation integrity ------------------------------------------------------------

C1 = pytest.mark.criterion(1, "master-equation integrity over a 50-point Rabi sweep")


@C1
def test_criterion_1_trace_positivity_and_fine_step_oracle():
    with Timer() as t:
        areas = np.linspace(0.0, 30.0, 50)
        seqs = [single_pulse_sequence(DEFAULT_PARAMS, GaussianPulse(a)) for a in areas]
        results = evolve_many(ground_state(), [DEFAULT_PARAMS] * 50, seqs)
        for r in results:
            tr = np.trace(r.states, axis1=1, axis2=2)
            assert np.max(np.abs(tr - 1)) < 1e-9
            herm = 0.5 * (r.states + np.conj(np.transpose(r.states, (0, 2, 1))))
            assert np.min(np.linalg.eigvalsh(herm)) > -1e-9
        ours = np.array([[r.p_emit_xx, r.p_emit_x] for r in results])
        oracle = single_pulse_emission(DEFAULT_PARAMS, areas, dt=1e-3)
    assert np.max(np.abs(ours[:, 0] - oracle[:, 0])) < 1e-6
    assert t.elapsed < 60


# --- 2: Rabi curve family ----------------------------------------------------------------------

C2 = pytest.mark.criterion(2, "high first-maximum emission and detuned-family ordering")


@C2
def test_criterion_2_first_maximum_and_detuning_family():
    with Timer() as t:
        peaks = []
        for f in (0.0, 22.0, 35.0, 57.0):
            p = DEFAULT_PARAMS.with_(delta_xx=ghz_to_rad_per_ps(f))
            a = calibrate_pi_area(p, xtol=1e-4)
            peaks.append((a, emission_probabilities([p], [GaussianPulse(a)])[0, 0]))
        areas, heights = map(np.array, zip(*peaks))
    assert heights[0] >= 0.85
    shifts = np.diff(areas)
    assert np.all(shifts > 0) or np.all(shifts < 0)
    assert np.all(np.diff(heights) < 0)
    assert t.elapsed < 120


# --- 3: echo refocusing ------------------------------------------------------------------------

C3 = pytest.mark.criterion(3, "echo refocusing under quasi-static noise")
NOISE = QuasiStaticNoise(2 * math.pi * 0.01, 500, seed=2024)
DELAYS = [40.0, 80.0, 160.0, 240.0, 320.0, 400.0]
PHASES = fringe_phases(8)


@pytest.fixture(scope="module")
def cal():
    return calibrate_pulses(DEFAULT_PARAMS)


@C3
def test_criterion_3_echo_refocuses_static_noise(cal):
    coherent = DEFAULT_PARAMS.coherent()
    with Timer() as t:
        r = ramsey_scans(coherent, cal.half_pi, [DELAYS[-1]], PHASES, NOISE, readout="population")[0]
        echo = echo_scans(coherent, cal.half_pi, DELAYS, PHASES, NOISE, readout="population", pi_area=cal.pi)
    v_ramsey = fit_fringe(PHASES, r.p_emit_xx)[0]
    v_echo = [fit_fringe(PHASES, sc.p_emit_xx)[0] for sc in echo]
    print(f"ramsey visibility at {DELAYS[-1]} ps: {v_ramsey:.4f}; echo visibilities: "
          + ", ".join(f"{v:.4f}" for v in v_echo))
    assert v_ramsey < 0.5
    assert min(v_echo) > 0.99
    assert t.elapsed < 300


@C3
def test_criterion_3_echo_outlives_ramsey_with_default_rates(cal):
    with Timer() as t:
        r = visibility_decay(ramsey_scans(DEFAULT_PARAMS, cal.half_pi, DELAYS, PHASES, NOISE))
        e = visibility_decay(echo_scans(DEFAULT_PARAMS, cal.half_pi, DELAYS, PHASES, NOISE, pi_area=cal.pi))
    print(f"tau_ramsey = {r.tau} ps, tau_echo = {e.tau} ps")
    assert r.tau is not None and e.tau is not None
    assert e.tau > r.tau
    assert t.elapsed < 300


# --- 4: g2 estimator calibration -----------------------------------------------------------------

C4 = pytest.mark.criterion(4, "pulsed g2 estimator calibration")


@C4
def test_criterion_4_g2_estimator():
    with Timer() as t:
        n = 10**5
        one = ClickStream(n, 12500.0, np.arange(n), np.zeros(n, np.int8), np.full(n, 100.0))
        assert g2_pulsed(one, "XX", 10).g2_zero == 0.0

        h = g2_pulsed(poisson_stream(0.3, n, seed=1), "XX", 20)
        assert abs(h.g2_zero - 1) < 0.05

        mix = bernoulli_mixture_stream(0.1, 0.005, 10**6, seed=2)
        hm = g2_pulsed(mix, "XX", 20)
        assert abs(hm.g2_zero - mixture_g2(0.1, 0.005)) < 3 * hm.statistical_error

        ht = g2_pulsed(mix.thinned(0.5, seed=3), "XX", 20)
        sigma = math.hypot(hm.statistical_error, ht.statistical_error)
        assert abs(ht.g2_zero - hm.g2_zero) < 3 * sigma
    assert t.elapsed < 60


# --- 5: time-bin interference ------------------------------------------------------------------

C5 = pytest.mark.criterion(5, "time-bin interference and calibration triple")


@C5
def test_criterion_5_ideal_fringe_and_phase_combination():
    with Timer() as t:
        src = TimeBinSource(1e-4, 1.0, seed=1)
        vis, _ = fringe_scan(src, A, np.linspace(0, 2 * np.pi, 16, endpoint=False), 10**10).visibility()
        assert vis > 0.995

        # one fixed shift of the analyzer phases, compensated by the pump phase
        shift_xx, shift_x = 1.3, -2.1
        base = TimeBinSource(0.01, 1.0, phi_pump=0.3, seed=2)
        shifted = TimeBinSource(0.01, 1.0, phi_pump=0.3 + shift_xx + shift_x, seed=2)
        ref = simulate_coincidences(base, A.with_phases(0.2, 0.7), 10**6, stream=0)
        rec = simulate_coincidences(shifted, A.with_phases(0.2 + shift_xx, 0.7 + shift_x), 10**6, stream=1)
        for x, y in zip(ref.peaks, rec.peaks):
            assert abs(int(x) - int(y)) < 3 * math.sqrt(x + y + 1)
    assert t.elapsed < 600


@C5
def test_criterion_5_outer_peaks_phase_flat():
    src = TimeBinSource(0.05, 1.0, seed=3)
    outer = np.array([simulate_coincidences(src, A.with_phases(0.0, phi), 10**6, stream=k).peaks[[0, 1, 3, 4]]
                      for k, phi in enumerate(np.linspace(0, 2 * np.pi, 8, endpoint=False))])
    mean = outer.mean(axis=0)
    assert np.all(np.abs(outer - mean) < 3 * np.sqrt(mean))


@C5
def test_criterion_5_visibility_triples():
    ideal = visibilities(TimeBinSource(1e-4, 1.0, seed=4), A, 10**10)
    assert ideal.time > 0.999 and ideal.energy1 > 0.995 and ideal.energy2 > 0.995
    dephased = visibilities(TimeBinSource(1e-4, 0.0, seed=5), A, 10**10)
    assert dephased.time > 0.999
    assert abs(dephased.energy1) < 0.01 and abs(dephased.energy2) < 0.01


@C5
def test_criterion_5_calibration_reaches_target_triple():
    v, vis, dev = calibrate_coherence((0.92, 0.52, 0.57), 0.06, 10**6)
    print(f"calibrated V = {v:.3f}, visibilities = {tuple(round(x, 3) for x in vis)}, max deviation = {dev:.3f}")
    assert dev <= 0.05


# --- 6: tomography round trip ------------------------------------------------------------------

C6 = pytest.mark.criterion(6, "tomography round trip")


@C6
def test_criterion_6_tomography_round_trip():
    with Timer() as t:
        bell = mle_reconstruct(generate_counts(bell_state(), n_per_setting=10**5, seed=1))
        assert fidelity(bell) > 0.99 and concurrence(bell) > 0.97

        partial = mle_reconstruct(generate_counts(ideal_state(0.0, 0.56), n_per_setting=10**5, seed=2))
        c = concurrence(partial)
        assert abs(c - 0.56) < 0.02
        assert abs(tangle(partial) - c * c) < 1e-12

        mixed = mle_reconstruct(generate_counts(MAXIMALLY_MIXED, n_per_setting=10**5, seed=3))
        assert concurrence(mixed) < 0.02
    assert t.elapsed < 120


# --- 7: post-selected state against event simulation ------------------------------------------

C7 = pytest.mark.criterion(7, "effective state matches Monte-Carlo tomography")


@C7
@pytest.mark.parametrize("v,p", [(1.0, 0.06), (0.6, 0.06), (0.8, 0.2)])
def test_criterion_7_effective_state_vs_event_simulation(v, p):
    src = TimeBinSource(p, v)
    with Timer() as t:
        rho = mle_reconstruct(tomography_counts(src, A, 10**6))
    d = trace_distance(rho.matrix, effective_state(src).matrix)
    print(f"(V={v}, p={p}): trace distance {d:.4f}")
    assert d < 0.02
    assert t.elapsed < 200


# --- 8: determinism ------------------------------------------------------------------------------

C8 = pytest.mark.criterion(8, "byte-identical outputs across runs and thread counts")

CONFIGS = {
    "rabi": "[rabi]\nn_areas = 10\ndetunings_ghz = 0, 35\n",
    "ramsey": "[ramsey]\ndelays_ps = 40, 80, 160, 240\nnoise_sigma_ghz = 10\nnoise_samples = 20\n",
    "echo": "[echo]\ndelays_ps = 40, 80, 160, 240\nnoise_sigma_ghz = 10\nnoise_samples = 20\n",
    "g2": "[g2]\nmode = above_band\np_excite = 0.6\np_recapture = 0.1\nblink_off_per_cycle = 0.01\n"
          "blink_on_per_cycle = 0.02\ndetection_efficiency = 0.5\nn_cycles = 100000\nwrite_clicks = true\n",
    "efficiency": "[efficiency]\npowers = 0.5, 2, 5\nn_cycles = 5000\n",
    "timebin": "[timebin]\nn_cycles = 1000000\n",
    "tomography": "[tomography]\nn_cycles = 1000000\nbootstrap = 8\n",
}


@C8
@pytest.mark.parametrize("experiment", sorted(CONFIGS))
def test_criterion_8_determinism(tmp_path, monkeypatch, experiment):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"[run]\nexperiment = {experiment}\nseed = 7\n\n{CONFIGS[experiment]}")
    folders = []
    for label, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        monkeypatch.setenv("QDCASCADE_THREADS", threads)
        assert run(cfg, [f"out={tmp_path / label / 'out.csv'}"]) == 0
        folders.append({p.name: p.read_bytes() for p in sorted((tmp_path / label).iterdir())})
    assert len(folders[0]) >= 2
    assert folders[0] == folders[1] == folders[2]
