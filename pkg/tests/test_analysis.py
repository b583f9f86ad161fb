import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hombench.analysis import (DecoyRecord, DipQualityWarning, Histogram, both_live_gates,
                               build_histogram, count_coincidences, decoy_upper_bound,
                               estimate_g2, fit_dip, live_gates, lorentzian_dip, slot_of)
from hombench.detector import next_live_slot, quantize
from hombench.physics import ChannelParams, coincidence_prob
from hombench.simulator import ScanPoint


def synthetic_points(taus, V, gamma, baseline=1.0, center=0.0, err=0.01, noise=None):
    g2 = lorentzian_dip(np.asarray(taus), V, gamma, baseline, center)
    if noise is not None:
        g2 = g2 + err * noise
    return [ScanPoint(float(t), 10**6, 1000, 1000, 0, float(g), err) for t, g in zip(taus, g2)]


# -- histograms --------------------------------------------------------------

def test_empty_and_single_tag_histograms():
    h = build_histogram(np.array([], dtype=np.int64), 81, fold_period=10_000)
    assert h.total == 0 and np.all(h.counts == 0)
    h = build_histogram(np.array([0]), 81)
    assert h.counts[0] == 1 and h.total == 1


def test_histogram_fold_and_total():
    rng = np.random.default_rng(0)
    ts = np.sort(rng.integers(0, 10**9, 5000)) // 81 * 81
    h = build_histogram(ts, 162, fold_period=10_000, tdc_bin=81)
    assert h.total == ts.size
    assert h.counts.size == math.ceil(10_000 / 162)
    assert np.array_equal(h.edges()[:2], [0.0, 162.0])


def test_histogram_rejects_bins_finer_than_tdc():
    with pytest.raises(ValueError):
        build_histogram(np.array([81]), 40, tdc_bin=81)
    with pytest.raises(ValueError):
        Histogram(0.0, 0.0, np.zeros(3))


def test_histogram_addition():
    a = build_histogram(np.array([1, 2, 500]), 100, n_bins=10)
    b = build_histogram(np.array([950]), 100, n_bins=10)
    assert (a + b).total == 4
    with pytest.raises(ValueError):
        a + build_histogram(np.array([1]), 50, n_bins=10)


# -- slots, live gates, coincidences -------------------------------------------

def test_slot_mapping_round_trip():
    rng = np.random.default_rng(1)
    slots = np.sort(rng.integers(0, 10**9, 2000))
    x = rng.uniform(0, 3500, slots.size)
    ts = np.array([quantize(int(s), float(v), 10_000, 81) for s, v in zip(slots, x)])
    assert np.array_equal(slot_of(ts, 10_000, 81), slots)


def test_live_gate_count_matches_brute_force():
    rng = np.random.default_rng(2)
    dead = 35_000
    clicks = []
    nxt = 0
    for s in range(5000):
        if s >= nxt and rng.random() < 0.2:
            ts = quantize(s, rng.uniform(0, 3500), 10_000, 81)
            clicks.append(ts)
            nxt = next_live_slot(s, ts, 10_000, 81, dead)
    armed = np.ones(5000, bool)
    for ts in clicks:
        s = int(slot_of(ts, 10_000, 81))
        armed[s + 1:next_live_slot(s, ts, 10_000, 81, dead)] = False
    assert live_gates(np.array(clicks), 10_000, 81, dead, 5000) == armed.sum()
    assert both_live_gates(np.array(clicks), np.array([], np.int64), 10_000, 81, dead, 5000) == armed.sum()


def test_both_live_is_intersection():
    rng = np.random.default_rng(3)
    dead = 22_000
    streams, masks = [], []
    for _ in range(2):
        armed = np.ones(3000, bool)
        tags, nxt = [], 0
        for s in range(3000):
            if s >= nxt and rng.random() < 0.3:
                ts = quantize(s, rng.uniform(0, 3500), 10_000, 81)
                tags.append(ts)
                nxt = next_live_slot(s, ts, 10_000, 81, dead)
                armed[s + 1:nxt] = False
        streams.append(np.array(tags))
        masks.append(armed)
    expected = int((masks[0] & masks[1]).sum())
    assert both_live_gates(*streams, 10_000, 81, dead, 3000) == expected


def test_coincidence_examples():
    t = np.array([5 * 10_000 + 1215])
    assert count_coincidences(t, t, 10_000, 3500, tdc_bin=81, n_slots=100) == (1, 1, 1, 100)
    a = np.array([5 * 10_000 + 1215])
    b = np.array([6 * 10_000 + 1215])
    assert count_coincidences(a, b, 10_000, 3500, tdc_bin=81)[2] == 0


def test_coincidence_window_and_errors():
    a = np.array([1000, 20_000 + 100])
    b = np.array([1000 + 300, 20_000 + 3000])
    assert count_coincidences(a, b, 10_000, 500)[2] == 1
    assert count_coincidences(a, b, 10_000, 3500)[2] == 2
    with pytest.raises(ValueError):
        count_coincidences(a[::-1], b, 10_000, 500)
    with pytest.raises(ValueError):
        count_coincidences(a, b, 10_000, 20_000)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 500), max_size=60), st.lists(st.integers(0, 500), max_size=60),
       st.integers(81, 3500))
def test_coincidences_symmetric_and_shardable(s1, s2, window):
    rng = np.random.default_rng(len(s1) * 1000 + len(s2))
    t1 = np.sort([quantize(s, rng.uniform(0, 3500), 10_000, 81) for s in set(s1)]).astype(np.int64)
    t2 = np.sort([quantize(s, rng.uniform(0, 3500), 10_000, 81) for s in set(s2)]).astype(np.int64)
    n = count_coincidences(t1, t2, 10_000, window, tdc_bin=81, n_slots=501)
    m = count_coincidences(t2, t1, 10_000, window, tdc_bin=81, n_slots=501)
    assert n[2] == m[2] and n[2] <= min(n[0], n[1])
    # splitting the streams at a slot boundary and summing gives the same count
    cut = 250 * 10_000
    lo = count_coincidences(t1[t1 < cut], t2[t2 < cut], 10_000, window, tdc_bin=81)[2]
    hi = count_coincidences(t1[t1 >= cut], t2[t2 >= cut], 10_000, window, tdc_bin=81)[2]
    assert lo + hi == n[2]
    # brute force
    brute = sum(1 for s in set(s1) & set(s2)
                if abs(t1[slot_of(t1, 10_000, 81) == s][0] - t2[slot_of(t2, 10_000, 81) == s][0]) <= window)
    assert brute == n[2]


# -- g2 estimator --------------------------------------------------------------

def test_estimate_g2_examples():
    g2, err = estimate_g2((1000, 1000, 100, 10**4))
    assert g2 == pytest.approx(1.0)
    assert err == pytest.approx(math.sqrt(1 / 100 + 2 / 1000))
    g2, _ = estimate_g2((1000, 1000, 50, 10**4))
    assert g2 == pytest.approx(0.5)
    g2, err = estimate_g2((1000, 1000, 100, 10**5))
    assert g2 == pytest.approx(10.0) and err == pytest.approx(10 * math.sqrt(0.012))
    assert estimate_g2((0, 1000, 0, 10**5)) == (None, None)
    g2, err = estimate_g2((1000, 1000, 0, 10**5))
    assert g2 == 0.0 and err > 0


def test_estimate_g2_error_matches_resimulation_spread():
    rng = np.random.default_rng(4)
    n, p1, p2 = 200_000, 0.01, 0.01
    g2s, errs = [], []
    for _ in range(1000):
        a = rng.random(n) < p1
        b = rng.random(n) < p2
        g, e = estimate_g2((int(a.sum()), int(b.sum()), int((a & b).sum()), n))
        g2s.append(g)
        errs.append(e)
    assert np.std(g2s) == pytest.approx(np.mean(errs), rel=0.2)


def test_independent_streams_have_unit_g2():
    rng = np.random.default_rng(5)
    vals = []
    for _ in range(200):
        n = 100_000
        a = rng.random(n) < 0.02
        b = rng.random(n) < 0.03
        vals.append(estimate_g2((int(a.sum()), int(b.sum()), int((a & b).sum()), n))[0])
    assert abs(np.mean(vals) - 1.0) < 3 * np.std(vals) / math.sqrt(len(vals))


# -- dip fit -----------------------------------------------------------------

def test_fit_noiseless_round_trip():
    taus = np.linspace(-120, 120, 21)
    fit = fit_dip(synthetic_points(taus, 0.46, 40.0))
    assert fit.visibility == pytest.approx(0.46, rel=1e-6)
    assert fit.gamma == pytest.approx(40.0, rel=1e-6)
    assert fit.center == pytest.approx(0.0, abs=1e-6)
    assert fit.baseline == 1.0 and fit.converged


def test_fit_free_mode_round_trip():
    taus = np.linspace(-240, 240, 21)
    fit = fit_dip(synthetic_points(taus, 0.4, 80.0, baseline=0.98, center=7.0), mode="free")
    assert (fit.visibility, fit.gamma, fit.baseline, fit.center) == pytest.approx(
        (0.4, 80.0, 0.98, 7.0), rel=1e-6)


def test_free_mode_beats_constrained_on_shifted_baseline():
    taus = np.linspace(-240, 240, 21)
    noise = np.random.default_rng(6).standard_normal(taus.size)
    pts = synthetic_points(taus, 0.45, 80.0, baseline=0.98, noise=noise)
    assert fit_dip(pts, mode="free").chi2_red < fit_dip(pts, mode="constrained").chi2_red


def test_flat_data_gives_zero_visibility_with_warning():
    pts = synthetic_points(np.linspace(-240, 240, 21), 0.0, 80.0)
    with pytest.warns(DipQualityWarning):
        assert fit_dip(pts).visibility == 0.0
    pts[5] = ScanPoint(pts[5].tau, 10**6, 1000, 1000, 0, 1.001, 0.01)
    with pytest.warns(DipQualityWarning):
        fit = fit_dip(pts)
    assert fit.visibility == 0.0


def test_fit_preconditions():
    pts = synthetic_points(np.linspace(-100, 100, 4), 0.4, 80.0)
    with pytest.raises(ValueError):
        fit_dip(pts)
    with pytest.raises(ValueError):
        fit_dip(synthetic_points(np.linspace(-100, 100, 9), 0.4, 80.0), mode="other")


def test_fit_skips_undefined_points():
    pts = synthetic_points(np.linspace(-240, 240, 21), 0.46, 80.0)
    pts.append(ScanPoint(1000.0, 10, 0, 0, 0, None, None))
    assert fit_dip(pts).n_points == 21


def test_fit_order_and_translation_invariance():
    taus = np.linspace(-240, 240, 21)
    noise = np.random.default_rng(7).standard_normal(taus.size)
    pts = synthetic_points(taus, 0.45, 80.0, noise=noise)
    base = fit_dip(pts)
    shuffled = fit_dip([pts[i] for i in np.random.default_rng(8).permutation(len(pts))])
    assert shuffled.visibility == base.visibility and shuffled.gamma == base.gamma
    moved = fit_dip([ScanPoint(p.tau + 1234.5, p.n_pulses, p.n1, p.n2, p.n_coinc, p.g2, p.g2_err)
                     for p in pts])
    assert moved.visibility == pytest.approx(base.visibility, rel=1e-9)
    assert moved.gamma == pytest.approx(base.gamma, rel=1e-9)
    assert moved.center == pytest.approx(base.center + 1234.5, rel=1e-9)


def test_fit_invariants_on_noisy_scans():
    rng = np.random.default_rng(9)
    taus = np.linspace(-240, 240, 21)
    for _ in range(20):
        fit = fit_dip(synthetic_points(taus, 0.46, 80.0, noise=rng.standard_normal(taus.size)))
        assert fit.gamma > 0 and fit.visibility <= fit.baseline
        assert all(v >= 0 for v in fit.uncertainties.values())


# -- decoy bound ---------------------------------------------------------------

def decoy(pc_mm, pc_0m, pc_m0, p1=0.002, p2=0.002, n=10**6):
    return DecoyRecord(pc_mm, pc_0m, pc_m0, p1, p2, n, n, n, n, n)


def test_decoy_examples():
    p_ub, err = decoy_upper_bound(decoy(2e-6, 1e-6, 1e-6))
    assert p_ub == pytest.approx(0.0, abs=1e-12) and err > 0
    p_ub, _ = decoy_upper_bound(decoy(3e-6, 1e-6, 1e-6))
    assert p_ub == pytest.approx(1e-6 / 4e-6)
    with pytest.raises(ZeroDivisionError):
        decoy_upper_bound(decoy(1e-6, 0, 0, p1=0.0))
    with pytest.raises(ValueError):
        decoy(1.5, 0, 0)


def test_decoy_negative_bound_not_clamped():
    p_ub, _ = decoy_upper_bound(decoy(1e-6, 1e-6, 1e-6))
    assert p_ub < 0


def test_decoy_ideal_interference_cancels():
    # phase-averaged probabilities for perfect overlap, noiseless detectors
    ch = ChannelParams(1.0, 0.0)
    mu = 0.01
    pc, p1, p2 = coincidence_prob(mu, mu, 1.0, ch, ch)
    pc0, _, _ = coincidence_prob(0.0, mu, 1.0, ch, ch)
    pc1, _, _ = coincidence_prob(mu, 0.0, 1.0, ch, ch)
    p_ub, _ = decoy_upper_bound(DecoyRecord(pc, pc0, pc1, p1, p2, 1, 1, 1, 1, 1))
    # the residual is the O(mu^2) multi-photon term
    assert abs(p_ub) < 2 * mu


def test_decoy_from_points_uses_live_gates():
    open_ = ScanPoint(0.0, 1000, 40, 40, 4, None, None, n_live1=800, n_live2=500, n_live12=400)
    blocked = ScanPoint(0.0, 1000, 20, 20, 1, None, None, n_live1=900, n_live2=900, n_live12=800)
    rec = DecoyRecord.from_points(open_, blocked, blocked)
    assert rec.p_d1 == 40 / 800 and rec.p_d2 == 40 / 500
    assert rec.p_cc_mumu == 4 / 400 and rec.p_cc_0mu == 1 / 800


def test_decoy_error_against_resampling():
    rng = np.random.default_rng(10)
    n = 10**7
    probs = (4e-6, 1.1e-6, 1.0e-6, 3e-3, 3e-3)
    rec0 = DecoyRecord(*probs, *(int(p * n) for p in probs))
    _, err = decoy_upper_bound(rec0)
    vals = []
    for _ in range(400):
        c = rng.poisson(np.array(probs) * n)
        rec = DecoyRecord(*(c / n), *c)
        vals.append(decoy_upper_bound(rec)[0])
    assert np.std(vals) == pytest.approx(err, rel=0.15)
