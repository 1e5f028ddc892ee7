import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdcascade.dynamics import DEFAULT_PARAMS, GaussianPulse, calibrate_pi_area, emission_probabilities
from qdcascade.errors import DomainError, InsufficientStatisticsError
from qdcascade.photon_statistics import (CH_X, CH_XX, ClickStream, EmitterStatModel, bernoulli_mixture_stream,
                                         blinking_envelope, efficiency_compare, fit_blinking_decay, g2_pulsed,
                                         mixture_g2, pair_probability, poisson_stream, saturation_probability,
                                         simulate_clicks, telegraph_states)
from qdcascade.parallel import substream

NO_DEPHASING = DEFAULT_PARAMS.without_dephasing()


def one_per_cycle(n=1000):
    return ClickStream(n, 100.0, np.arange(n), np.zeros(n), np.full(n, 5.0))


def test_clickstream_sorts_and_validates():
    s = ClickStream(3, 10.0, [2, 0, 0], [0, 1, 0], [1.0, 5.0, 2.0])
    assert s.clicks == [(0, "XX", 2.0), (0, "X", 5.0), (2, "XX", 1.0)]
    with pytest.raises(DomainError):
        ClickStream(3, 10.0, [3], [0], [1.0])
    with pytest.raises(DomainError):
        ClickStream(3, 10.0, [0], [0], [10.0])
    with pytest.raises(DomainError):
        ClickStream(3, 10.0, [0], [2], [1.0])


def test_clickstream_csv():
    s = ClickStream(3, 10.0, [0, 2], [0, 1], [0.1, 2.0])
    assert s.to_csv() == "cycle,channel,t_in_cycle_ps\n0,XX,0.10000000000000001\n2,X,2\n"


def test_model_validation():
    with pytest.raises(DomainError):
        EmitterStatModel(mode="cw")
    with pytest.raises(DomainError):
        EmitterStatModel(p_excite=1.5)
    with pytest.raises(DomainError):
        EmitterStatModel(blink=(-0.1, 0.0))


def test_zero_efficiency_gives_empty_stream():
    m = EmitterStatModel("above_band", p_excite=1.0, detection_efficiency=0.0)
    assert len(simulate_clicks(DEFAULT_PARAMS, m, 1000)) == 0


def test_resonant_pi_pulse_one_pair_per_cycle():
    m = EmitterStatModel("resonant", seed=7)
    s = simulate_clicks(NO_DEPHASING, m, 20000)
    nxx, nx = s.counts("XX"), s.counts("X")
    assert np.mean((nxx == 1) & (nx == 1)) >= 0.99


@pytest.mark.parametrize("params", [DEFAULT_PARAMS, NO_DEPHASING, DEFAULT_PARAMS.with_(delta_xx=0.1)])
def test_resonant_marginals_match_master_equation(params):
    area = calibrate_pi_area(DEFAULT_PARAMS)
    m = EmitterStatModel("resonant", seed=3, pulse_area=area)
    n = 20000
    s = simulate_clicks(params, m, n)
    expected = emission_probabilities([params], [GaussianPulse(area)])[0]
    for ch, p in zip(("XX", "X"), expected):
        counts = s.counts(ch)
        sigma = max(counts.std(), math.sqrt(p * (1 - p)) if p < 1 else 0, 1e-3) / math.sqrt(n)
        assert abs(counts.mean() - p) < 3 * sigma


def test_resonant_zero_area_is_dark():
    m = EmitterStatModel("resonant", pulse_area=0.0)
    assert len(simulate_clicks(DEFAULT_PARAMS, m, 500)) == 0


def test_photon_times_are_ordered_within_cascade():
    s = simulate_clicks(NO_DEPHASING, EmitterStatModel("resonant", seed=2), 2000)
    xx = s.channel == CH_XX
    t_xx = dict(zip(s.cycle[xx], s.t_in_cycle[xx]))
    for c, t in zip(s.cycle[~xx], s.t_in_cycle[~xx]):
        if c in t_xx:
            assert t > t_xx[c]


def test_above_band_recapture_multiphoton_fraction_grows():
    fracs = []
    for prc in (0.0, 0.1, 0.3):
        s = simulate_clicks(DEFAULT_PARAMS, EmitterStatModel("above_band", 0.9, prc, seed=1), 20000)
        fracs.append(np.mean(s.counts("XX") >= 2))
    assert fracs[0] == 0
    assert 0 < fracs[1] < fracs[2]


def test_above_band_without_recapture_matches_excitation():
    s = simulate_clicks(DEFAULT_PARAMS, EmitterStatModel("above_band", 0.3, seed=9), 50000)
    n = s.counts("XX")
    assert n.max() == 1
    assert n.mean() == pytest.approx(0.3, abs=3 * math.sqrt(0.21 / 50000))


def test_g2_single_photon_source_is_zero():
    h = g2_pulsed(one_per_cycle(), "XX", 10)
    assert h.g2_zero == 0.0
    assert list(h.lags) == list(range(-10, 11))
    assert h.counts[10] == 0 and h.counts[0] == h.counts[-1] == 990


def test_g2_poisson_is_one():
    h = g2_pulsed(poisson_stream(0.3, 100000, seed=5), "XX", 20)
    assert abs(h.g2_zero - 1) < 0.05


def test_g2_poisson_ensemble_unbiased():
    # Poisson-propagated errors ignore pair correlations inside multi-photon cycles,
    # so the ensemble is judged against its own spread
    g = np.array([g2_pulsed(poisson_stream(0.3, 50000, seed=s), "XX", 20).g2_zero for s in range(40)])
    assert abs(g.mean() - 1) < 3 * g.std(ddof=1) / math.sqrt(len(g))


def test_g2_bernoulli_mixture_matches_approximation():
    h = g2_pulsed(bernoulli_mixture_stream(0.1, 0.005, 10**6, seed=8), "XX", 20)
    target = mixture_g2(0.1, 0.005)
    assert target == pytest.approx(0.826, abs=1e-3)
    assert abs(h.g2_zero - target) < 3 * h.statistical_error


def test_g2_thinning_insensitive():
    s = bernoulli_mixture_stream(0.1, 0.005, 10**6, seed=8)
    a = g2_pulsed(s, "XX", 20)
    b = g2_pulsed(s.thinned(0.5, seed=1), "XX", 20)
    assert abs(a.g2_zero - b.g2_zero) < 3 * math.hypot(a.statistical_error, b.statistical_error)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_g2_estimator_consistency(seed):
    p1, p2 = 0.2, 0.02
    h = g2_pulsed(bernoulli_mixture_stream(p1, p2, 200000, seed=seed), "XX", 10)
    assert abs(h.g2_zero - mixture_g2(p1, p2)) < 4 * h.statistical_error


def test_g2_insufficient_statistics():
    with pytest.raises(InsufficientStatisticsError):
        g2_pulsed(one_per_cycle(20), "XX", 3)
    with pytest.raises(InsufficientStatisticsError):
        g2_pulsed(one_per_cycle(1000), "X", 3)


def test_g2_histogram_csv():
    text = g2_pulsed(one_per_cycle(200), "XX", 2).to_csv()
    lines = text.splitlines()
    assert lines[0] == "lag,counts" and lines[3] == "0,0"
    assert lines[-2] == "g2_zero,stat_error"


def test_resonant_g2_small():
    s = simulate_clicks(DEFAULT_PARAMS, EmitterStatModel("resonant", seed=4), 20000)
    assert g2_pulsed(s, "XX", 10).g2_zero < 0.05


def test_telegraph_statistics():
    rng = substream(1, 99)
    s = telegraph_states(0.01, 0.03, 400000, rng)
    assert s.mean() == pytest.approx(0.75, abs=0.02)
    x = s - s.mean()
    for k in (10, 25):
        corr = np.dot(x[:-k], x[k:]) / np.dot(x, x)
        assert corr == pytest.approx(math.exp(-0.04 * k), abs=0.05)
    assert telegraph_states(0.0, 0.0, 10, rng).all()
    assert not telegraph_states(0.1, 0.0, 10, rng).any()


def test_blinking_disabled_flat():
    s = simulate_clicks(DEFAULT_PARAMS, EmitterStatModel("above_band", 0.5, seed=6), 100000)
    env = blinking_envelope(s, 50)
    assert np.all(np.abs(env.heights - 1) < 3 * env.errors + 1e-12)


def test_blinking_decay_constant():
    blink = (0.01, 0.01)
    m = EmitterStatModel("above_band", 0.5, blink=blink, seed=4)
    env = blinking_envelope(simulate_clicks(DEFAULT_PARAMS, m, 300000), 300, blink=blink)
    fit = fit_blinking_decay(env)
    # two-state Markov autocovariance: amplitude (1 - pi_on)/pi_on, time 1/(r_on + r_off)
    assert fit.tau_cycles == pytest.approx(50, rel=0.15)
    assert fit.amplitude == pytest.approx(1.0, rel=0.2)
    assert fit.baseline == pytest.approx(1.0, abs=0.05)


def test_blinking_all_off_errors():
    m = EmitterStatModel("above_band", 1.0, blink=(0.5, 0.0))
    s = simulate_clicks(DEFAULT_PARAMS, m, 5000)
    assert len(s) == 0
    with pytest.raises(InsufficientStatisticsError):
        blinking_envelope(s, 10)


def test_blinking_span_requirement():
    m = EmitterStatModel("above_band", 1.0, blink=(0.001, 0.001))
    s = simulate_clicks(DEFAULT_PARAMS, m, 5000)
    with pytest.raises(InsufficientStatisticsError):
        blinking_envelope(s, 10, blink=m.blink)


def test_saturation_mapping():
    assert saturation_probability(0.0) == 0.0
    assert saturation_probability(2.0, 2.0) == pytest.approx(1 - math.exp(-1))
    with pytest.raises(DomainError):
        saturation_probability(-1.0)


def test_efficiency_compare_ordering():
    res = EmitterStatModel("resonant", seed=1)
    above = EmitterStatModel("above_band", p_recapture=0.1, seed=2)
    rows = efficiency_compare(DEFAULT_PARAMS, res, above, [0.0, 1.0, 10.0, 50.0], n_cycles=20000)
    assert rows[0].pair_above == 0.0
    assert len({r.pair_resonant for r in rows}) == 1
    assert rows[-1].p_excite_above > 0.999
    assert rows[-1].pair_above < rows[-1].pair_resonant
    # clean-pair probability at saturation ~ (1 - p_recapture)^2
    assert rows[-1].pair_above == pytest.approx(0.81, abs=0.015)


def test_pair_probability_without_recapture_equals_excitation():
    m = EmitterStatModel("above_band", 0.4, seed=3)
    assert pair_probability(DEFAULT_PARAMS, m, 50000) == pytest.approx(0.4, abs=0.01)


@pytest.mark.parametrize("mode,n", [("above_band", 70000), ("resonant", 40000)])
def test_deterministic_replay_across_threads(mode, n):
    m = EmitterStatModel(mode, 0.7, 0.1 if mode == "above_band" else 0.0, blink=(0.02, 0.05),
                         detection_efficiency=0.6, seed=12345)
    a = simulate_clicks(DEFAULT_PARAMS, m, n, threads=1)
    b = simulate_clicks(DEFAULT_PARAMS, m, n, threads=4)
    c = simulate_clicks(DEFAULT_PARAMS, m, n)
    assert a.to_csv() == b.to_csv() == c.to_csv()
    d = simulate_clicks(DEFAULT_PARAMS, EmitterStatModel(mode, 0.7, seed=54321), n)
    assert a.to_csv() != d.to_csv()
