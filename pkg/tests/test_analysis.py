import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavity_spdc.analysis import (
    Histogram,
    HomScanResult,
    ScanFormatError,
    VisibilityError,
    accidental_rate,
    accidental_rate_sigma,
    build_histogram,
    comb_contrast,
    comb_peak_spacing,
    count_coincidences,
    fit_envelope,
    fit_scan,
    fit_triangle,
    hom_model,
    standard_scan_grid,
    run_hom_scan,
    window_ticks,
)
from cavity_spdc.detection import TimeTagStream
from cavity_spdc.params import SPEED_OF_LIGHT, ConfigError, SourceConfig, derive_quantities
from cavity_spdc.simulation import poisson_stream, simulate_stream


def stream(a, b, res=1e-9, duration=1.0):
    return TimeTagStream(res, duration, duration, {0: np.sort(np.asarray(a, np.int64)),
                                                  1: np.sort(np.asarray(b, np.int64))})


def brute_force_pairs(a, b, window, res):
    """O(n^2) oracle: every (a, b) with -window/2 <= (b - a) res < window/2."""
    out = []
    for ta in a:
        for tb in b:
            d = (int(tb) - int(ta)) * res
            if -window / 2 - 1e-15 <= d < window / 2 - 1e-15:
                out.append(int(tb) - int(ta))
    return sorted(out)


def aliased_comb(t_rt, decay, res=1e-9, n_bins=256, kmax=200, scale=1e6):
    """Delta comb at k t_rt with exp(-|k| t_rt / decay) weights, both arrival
    times floored with a uniformly distributed common phase: the peak at x
    ticks splits into floor(x) and floor(x) + 1 with weights 1 - frac(x), frac(x)."""
    counts = np.zeros(2 * n_bins)
    for k in range(-kmax, kmax + 1):
        w = scale * math.exp(-abs(k) * t_rt / decay)
        x = k * t_rt / res
        lo = math.floor(x)
        f = x - lo
        for j, wt in ((lo, 1 - f), (lo + 1, f)):
            if 0 <= j + n_bins < 2 * n_bins:
                counts[j + n_bins] += w * wt
    return Histogram(res, -n_bins * res, counts, int(counts.sum()))


# --- coincidences --------------------------------------------------------------


def test_coincidence_examples():
    n, dt = count_coincidences(stream([0], [100]), 256e-9)
    assert n == 1 and dt.tolist() == [100]
    assert count_coincidences(stream([0], [300]), 256e-9)[0] == 0
    assert count_coincidences(stream([], [1, 2]), 256e-9)[0] == 0
    assert count_coincidences(stream([5], [5, 5, 6]), 256e-9)[0] == 3


def test_window_is_half_open_total_width():
    assert window_ticks(256e-9, 1e-9) == (-128, 128)
    assert count_coincidences(stream([1000], [872]), 256e-9)[0] == 1
    assert count_coincidences(stream([1000], [1128]), 256e-9)[0] == 0
    with pytest.raises(ConfigError):
        window_ticks(0.5e-9, 1e-9)


def test_coincidences_match_brute_force_oracle_1e4():
    rng = np.random.default_rng(7)
    a = np.sort(rng.integers(0, 2_000_000, 5000))
    b = np.sort(rng.integers(0, 2_000_000, 5000))
    # inject correlated partners so the window is well populated
    b = np.sort(np.concatenate([b[:4000], a[:1000] + rng.integers(-200, 200, 1000)]))
    s = stream(a, b, duration=3e-3)
    n, dt = count_coincidences(s, 256e-9)
    oracle = brute_force_pairs(a, b, 256e-9, 1e-9)
    assert n == len(oracle)
    assert sorted(dt.tolist()) == oracle


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 400), max_size=40), st.lists(st.integers(0, 400), max_size=40),
       st.integers(1, 60))
def test_coincidences_match_oracle_property(a, b, width):
    s = stream(a, b, duration=1e-6)
    n, dt = count_coincidences(s, width * 1e-9)
    oracle = brute_force_pairs(sorted(a), sorted(b), width * 1e-9, 1e-9)
    assert n == len(oracle)
    assert sorted(dt.tolist()) == oracle


def test_accidental_rate_examples():
    assert accidental_rate(142_000, 142_000, 256e-9) == pytest.approx(5162, abs=1)
    assert accidental_rate(0, 142_000, 256e-9) == 0
    with pytest.raises(ConfigError):
        accidental_rate(-1, 1, 1e-9)


def test_accidentals_on_poisson_streams_within_3_sigma():
    duration = 5.0
    s = poisson_stream(142_000, 142_000, duration, seed=1)
    n, _ = count_coincidences(s, 256e-9)
    ra, rb = len(s.a) / duration, len(s.b) / duration
    sigma = accidental_rate_sigma(ra, rb, 256e-9, duration)
    assert abs(n / duration - accidental_rate(ra, rb, 256e-9)) < 3 * sigma
    assert abs(n / duration - 5162) < 3 * sigma + 5162 * 0.01


# --- histograms ----------------------------------------------------------------


def test_empty_histogram():
    h = build_histogram([], 1e-9, 10e-9)
    assert len(h.counts) == 20 and not h.counts.any() and h.total_events == 0
    assert h.zero_index() == 10


def test_histogram_floor_binning_in_ticks():
    h = build_histogram(np.array([-1, 0, 0, 1, 9, 10, -10, -11]), 1e-9, 10e-9, resolution=1e-9)
    assert h.counts[h.zero_index()] == 2
    assert h.counts[h.zero_index() - 1] == 1
    assert h.counts[0] == 1 and h.counts[-1] == 1  # -10 and 9; 10 and -11 fall outside
    assert h.counts.sum() == 6


def test_histogram_rebin_keeps_zero_edge():
    h = build_histogram(np.arange(-50, 50), 1e-9, 50e-9, resolution=1e-9)
    r = h.rebin(4)
    assert r.bin_width == pytest.approx(4e-9)
    assert r.edges[r.zero_index()] == pytest.approx(0.0, abs=1e-18)
    assert r.counts.sum() == 96


@pytest.fixture(scope="module")
def hv_histogram():
    cfg = SourceConfig.reference()
    s = simulate_stream(cfg, "hv", 20.0, 11)
    n, dt = count_coincidences(s, 256e-9)
    return n, build_histogram(dt, 1e-9, 128e-9, resolution=1e-9)


def test_envelope_decay_matches_ring_down(hv_histogram, base):
    n, h = hv_histogram
    assert n >= 1e5
    fit = fit_envelope(h)
    assert fit.converged
    dq = derive_quantities(base)
    assert fit.decay == pytest.approx(dq.ring_down_time, rel=0.15)
    assert fit.decay == pytest.approx(dq.comb_envelope_decay, rel=0.05)


def test_envelope_fit_on_noiseless_synthetic():
    edges = np.arange(-128, 129) * 1e-9
    mid = 0.5 * (edges[1:] + edges[:-1])
    counts = 1e5 * np.exp(-np.abs(mid) / 20e-9) + 50
    h = Histogram(1e-9, -128e-9, counts, int(counts.sum()))
    fit = fit_envelope(h, rebin_width=1e-9)
    assert fit.decay == pytest.approx(20e-9, rel=0.01)


# --- comb ------------------------------------------------------------------------


def test_aliasing_oracle_period(base):
    dq = derive_quantities(base)
    h = aliased_comb(dq.round_trip_time, dq.comb_envelope_decay)
    cc = comb_contrast(h, smooth=1)
    analytic = 1 / (dq.round_trip_time * 1e9 - 2)
    assert cc.period == pytest.approx(analytic, abs=0.2)
    assert cc.period == pytest.approx(31, abs=3)


def test_monte_carlo_period_matches_aliasing_oracle(hv_histogram, base):
    _, h = hv_histogram
    dq = derive_quantities(base)
    mc = comb_contrast(h)
    oracle = comb_contrast(aliased_comb(dq.round_trip_time, dq.comb_envelope_decay))
    assert mc.period == pytest.approx(oracle.period, abs=1.5)
    assert mc.period == pytest.approx(31, abs=3)
    # contrast is large right after zero delay
    assert mc.contrast[0] > 0.8


def test_commensurate_comb_never_vanishes(base):
    dq = derive_quantities(base)
    cc = comb_contrast(aliased_comb(2e-9, dq.comb_envelope_decay))
    assert math.isnan(cc.period)
    assert np.nanmin(cc.contrast) > 0.99


def test_commensurate_comb_monte_carlo(base):
    cfg = base.replace(effective_cavity_length=2e-9 * SPEED_OF_LIGHT)
    s = simulate_stream(cfg, "hv", 2.0, 3)
    _, dt = count_coincidences(s, 256e-9)
    cc = comb_contrast(build_histogram(dt, 1e-9, 128e-9, resolution=1e-9))
    assert math.isnan(cc.period)


def test_flagged_bins_excluded():
    counts = np.zeros(64)
    counts[32] = 1000
    counts[33] = 10
    h = Histogram(1e-9, -32e-9, counts, 1010)
    cc = comb_contrast(h)
    assert not cc.flagged[0] and cc.flagged[1:].all()
    assert np.isnan(cc.contrast[1:]).all()


def test_fine_binned_peak_spacing(base):
    cfg = base.replace(tagger_resolution=10e-12)
    s = simulate_stream(cfg, "hv", 5.0, 5)
    _, dt = count_coincidences(s, 256e-9)
    h = build_histogram(dt, 10e-12, 40e-9, resolution=10e-12)
    sp = comb_peak_spacing(h)
    assert abs(sp.spacing - 2.03e-9) <= 10e-12
    assert sp.spacing == pytest.approx(derive_quantities(base).round_trip_time, abs=2e-12)


# --- visibility and fit ----------------------------------------------------------


def test_visibility_examples():
    from cavity_spdc.analysis import visibility

    assert visibility(10.0, 0.0) == 1.0
    assert visibility(3.0, 1.0) == 0.5
    assert visibility(5.0, 5.0) == 0.0
    with pytest.raises(VisibilityError):
        visibility(0.0, 0.0)
    with pytest.raises(VisibilityError):
        visibility(1.0, 2.0)


def synthetic_scan(base, r=1000.0, vis=0.9, center=0.12e-3):
    x = standard_scan_grid(base)
    return x, hom_model(x, r, derive_quantities(base).zeta, center, vis)


def test_noiseless_fit_recovers_parameters_4_sig_figs(base):
    x, y = synthetic_scan(base)
    fit = fit_triangle(x, y)
    assert fit.converged
    assert fit.width == pytest.approx(derive_quantities(base).hom_base_width, rel=5e-5)
    assert round(fit.width * 1e3, 2) == 2.03
    assert fit.center == pytest.approx(0.12e-3, rel=5e-5)
    assert fit.vis_param == pytest.approx(0.9, rel=5e-5)
    assert fit.r_avg == pytest.approx(1000.0, rel=5e-5)
    assert fit.visibility == pytest.approx(0.9 / 1.1, rel=5e-5)


def test_pure_model_with_pinned_visibility(base):
    x, y = synthetic_scan(base, vis=1.0, center=0.0)
    fit = fit_triangle(x, y, fix_visibility=1.0)
    assert fit.width == pytest.approx(derive_quantities(base).hom_base_width, rel=5e-5)
    assert fit.visibility == pytest.approx(1.0)


@pytest.mark.parametrize("scale", [1e-3, 7.0, 1e6])
def test_fit_scale_invariance(base, scale):
    x, y = synthetic_scan(base)
    noisy = y + np.random.default_rng(0).normal(0, 20, len(y))
    a = fit_triangle(x, noisy)
    b = fit_triangle(x, noisy * scale)
    assert b.width == pytest.approx(a.width, rel=1e-6)
    assert b.center == pytest.approx(a.center, rel=1e-6, abs=1e-12)
    assert b.visibility == pytest.approx(a.visibility, rel=1e-6)
    assert b.r_avg == pytest.approx(a.r_avg * scale, rel=1e-6)


def test_flat_data_gives_zero_visibility(base):
    x = standard_scan_grid(base)
    fit = fit_triangle(x, np.full(len(x), 42.0))
    assert fit.visibility == 0.0 and fit.converged
    assert fit_triangle(x, np.zeros(len(x))).visibility == 0.0


def test_fit_needs_five_points():
    with pytest.raises(ConfigError):
        fit_triangle([0, 1, 2, 3], [1, 0, 0, 1])


def test_exclusion_mask_replays_drift_rejection(base):
    x, y = synthetic_scan(base)
    drifted = y.copy()
    far = x > 2.5e-3
    drifted[far] *= 0.6
    biased = fit_triangle(x, drifted)
    clean = fit_triangle(x, drifted, exclude=far)
    assert abs(biased.width - derive_quantities(base).hom_base_width) > 1e-5
    assert clean.width == pytest.approx(derive_quantities(base).hom_base_width, rel=5e-5)


def test_fit_errors_reported_with_variances(base):
    x, y = synthetic_scan(base)
    fit = fit_triangle(x, y, variances=y)
    assert 0 < fit.visibility_err < 0.05
    assert 0 < fit.width_err < 0.2e-3


# --- scans -------------------------------------------------------------------------


def test_zero_rate_scan(base):
    cfg = base.replace(pair_generation_rate_per_mw=0.0)
    res = run_hom_scan(cfg, np.linspace(-1e-3, 1e-3, 5), 0.1, 1)
    assert not res.coincidences.any() and not res.singles_a.any()
    assert res.fit.visibility_raw == 0.0


def test_no_interference_gives_flat_scan(base):
    cfg = base.replace(hv_spectral_overlap=0.0)
    grid = np.linspace(-2e-3, 2e-3, 11)
    res = run_hom_scan(cfg, grid, 0.5, 2, fit=False)
    c = res.coincidences.astype(float)
    mean = c.mean()
    assert np.all(np.abs(c - mean) <= 3 * np.sqrt(mean))


def test_scan_grid(base):
    g = standard_scan_grid(base)
    assert len(g) == 41
    assert g[0] == pytest.approx(-4e-3) and g[-1] == pytest.approx(4e-3)
    assert np.diff(g) == pytest.approx(np.full(40, 0.2e-3))


def test_scan_csv_round_trip(tmp_path, base):
    res = run_hom_scan(base.replace(pump_power=20e-6), np.linspace(-2e-3, 2e-3, 9), 0.2, 4)
    res.write_csv(tmp_path / "scan.csv", ["seed: 4"])
    back = HomScanResult.read_csv(tmp_path / "scan.csv")
    np.testing.assert_allclose(back.path_difference, res.path_difference, atol=1e-9)
    np.testing.assert_array_equal(back.coincidences, res.coincidences)
    np.testing.assert_allclose(back.accidentals, res.accidentals, atol=1e-6)
    assert fit_scan(back).width == pytest.approx(res.fit.width, rel=1e-4)


def test_scan_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("path_difference_mm,coincidences\n0.0,10\n0.2,x\n")
    with pytest.raises(ScanFormatError, match="row 3"):
        HomScanResult.read_csv(p)
    p.write_text("path_difference_mm\n0.0\n")
    with pytest.raises(ScanFormatError, match="coincidences"):
        HomScanResult.read_csv(p)


def test_scan_is_sorted(base):
    res = HomScanResult(np.array([2.0, 1.0, 3.0]), np.array([5, 6, 7]), np.zeros(3), np.zeros(3),
                        np.ones(3), np.zeros(3), 256e-9, 256e-9)
    np.testing.assert_array_equal(res.coincidences, [6, 5, 7])


@pytest.fixture(scope="module")
def pump_series():
    base = SourceConfig.reference()
    grid = np.linspace(-2e-3, 2e-3, 21)
    out = {}
    for uw, dur in ((12, 3.0), (50, 1.0), (100, 1.0), (200, 1.0)):
        out[uw] = run_hom_scan(base.replace(pump_power=uw * 1e-6), grid, dur, [99, uw]).fit
    return out


def test_raw_visibility_nonincreasing_in_pump(pump_series):
    raw = [pump_series[uw].visibility_raw for uw in (12, 50, 100, 200)]
    assert all(a >= b for a, b in zip(raw, raw[1:])), raw
    lo, hi = pump_series[200], pump_series[12]
    sep = (hi.visibility_raw - lo.visibility_raw) / math.hypot(hi.visibility_raw_err, lo.visibility_raw_err)
    assert sep >= 3


def test_corrected_visibility_flat_in_pump(pump_series):
    ref = pump_series[12]
    for uw in (50, 100, 200):
        f = pump_series[uw]
        sigma = math.hypot(f.visibility_corrected_err, ref.visibility_corrected_err)
        assert abs(f.visibility_corrected - ref.visibility_corrected) <= 2 * sigma


# --- determinism -------------------------------------------------------------------


def test_chunked_simulation_byte_identical(base):
    a = simulate_stream(base, "diag", 0.35, 21, path_difference=0.3e-3, n_chunks=1).to_bytes()
    b = simulate_stream(base, "diag", 0.35, 21, path_difference=0.3e-3, n_chunks=7).to_bytes()
    c = simulate_stream(base, "diag", 0.35, 21, path_difference=0.3e-3, n_chunks=4, workers=2).to_bytes()
    assert a == b == c


def test_parallel_scan_identical(base):
    grid = np.linspace(-1e-3, 1e-3, 5)
    cfg = base.replace(pump_power=20e-6)
    a = run_hom_scan(cfg, grid, 0.1, 8, fit=False)
    b = run_hom_scan(cfg, grid, 0.1, 8, fit=False, workers=2, n_chunks=3)
    np.testing.assert_array_equal(a.coincidences, b.coincidences)
    np.testing.assert_array_equal(a.singles_a, b.singles_a)
