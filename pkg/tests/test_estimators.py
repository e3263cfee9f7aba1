import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

import oracles
from conftest import random_bars, random_panel
from impactlab.core import BarSeries, LagCurve, PairPanel, SessionGrid
from impactlab.estimators import (average_over_partners, avg_diffusion, cross_response,
                                  diffusion_scaling, mean_curve, pair_diffusion,
                                  per_share_response, read_curve_csv, self_correlator,
                                  self_response, sign_correlator, two_sided_correlator,
                                  volume_conditioned_response, volume_impact_constants,
                                  volume_product_averages, write_curve_csv)
from impactlab.fits import PowerLawFit, fit_power_law

T = 60


def rel_err(got, want):
    """Largest absolute deviation relative to the largest reference value."""
    return float(np.max(np.abs(np.asarray(got) - want)) / np.max(np.abs(want)))


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_cross_response_matches_loop(panel, method):
    got = cross_response(panel, T, method).curve
    assert got.min_lag == 1 and got.max_lag == T
    assert rel_err(got.values, oracles.response(panel, T)) < 1e-12


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_sign_correlator_matches_loop(panel, method):
    want = oracles.correlator(panel, T)
    lags, vals, _ = two_sided_correlator(panel, T, method)
    np.testing.assert_array_equal(lags, np.arange(-T, T + 1))
    ref = np.array([want[int(k)] for k in lags])
    assert np.max(np.abs(vals - ref)) < 1e-12
    one_sided = sign_correlator(panel, T, method=method).curve
    np.testing.assert_array_equal(one_sided.values, vals[T:])


@pytest.mark.parametrize("method", ["fft", "direct"])
def test_pair_diffusion_matches_loop(panel, method):
    got = pair_diffusion(panel, T, method)
    assert rel_err(got.values, oracles.diffusion(panel, T)) < 1e-12


def test_response_counts_only_signed_slots(rng):
    p = random_panel(rng, n_days=1, slots=300)
    c = cross_response(p, 5).curve
    a, b = p.a[0], p.b[0]
    for tau in range(1, 6):
        assert c.counts[tau - 1] == np.count_nonzero(b.sign[: a.slots - tau])


def test_lags_never_cross_days():
    # day 1 ends high, day 2 starts low: any straddling lag would show a jump
    d = [dt.date(2008, 1, 2), dt.date(2008, 1, 3)]
    mk = lambda day, lvl: BarSeries("AAA", SessionGrid(day, 50), np.full(50, lvl),
                                    np.ones(50, np.int8), np.ones(50))
    p = PairPanel((mk(d[0], 5.0), mk(d[1], 1.0)), (mk(d[0], 5.0), mk(d[1], 1.0)))
    np.testing.assert_array_equal(cross_response(p, 10).curve.values, 0.0)
    np.testing.assert_array_equal(pair_diffusion(p, 10).values, 0.0)


def test_constant_signs_have_unit_correlator(rng):
    d = dt.date(2008, 1, 2)
    b = BarSeries("AAA", SessionGrid(d, 200), np.zeros(200), np.ones(200, np.int8), np.ones(200))
    c = self_correlator([b], 50).curve
    np.testing.assert_array_equal(c.values, 1.0)


def test_self_statistics_equal_pair_with_itself(rng):
    days = [random_bars("AAA", dt.date(2008, 1, 2), 400, rng)]
    np.testing.assert_array_equal(self_response(days, 20).curve.values,
                                  cross_response(PairPanel(tuple(days), tuple(days)), 20).curve.values)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lead=st.integers(0, 40), p=st.floats(0.05, 1.0))
def test_correlator_mirror_identity_is_exact(seed, lead, p):
    rng = np.random.default_rng(seed)
    d = dt.date(2008, 1, 2)
    a = random_bars("AAA", d, 300, rng, lead_nan=lead, p_trade=p)
    b = random_bars("BBB", d, 300, rng, lead_nan=lead // 2, p_trade=p)
    lags, ab, _ = two_sided_correlator(PairPanel((a,), (b,)), 40)
    _, ba, _ = two_sided_correlator(PairPanel((b,), (a,)), 40)
    assert np.array_equal(ab, ba[::-1])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-3, 3), scale=st.floats(0.1, 10))
def test_diffusion_is_bilinear_in_returns(seed, shift, scale):
    rng = np.random.default_rng(seed)
    p = random_panel(rng, n_days=1, slots=200)
    base = pair_diffusion(p, 20).values
    a = p.a[0]
    moved = BarSeries(a.stock, a.grid, scale * a.log_mid + shift, a.sign, a.volume)
    got = pair_diffusion(PairPanel((moved,), p.b), 20).values
    np.testing.assert_allclose(got, scale * base, rtol=1e-9, atol=1e-18)


def test_partner_averages_pick_the_right_pairs():
    c = lambda v: LagCurve(1, [v, v])
    curves = {("A", "B"): c(1.0), ("A", "C"): c(3.0), ("B", "A"): c(10.0), ("C", "A"): c(30.0)}
    assert average_over_partners(curves, "A", "passive").values[0] == 2.0
    assert average_over_partners(curves, "A", "active").values[0] == 20.0
    with pytest.raises(ValueError):
        average_over_partners(curves, "A", "sideways")


def test_mean_curve_uses_common_support():
    m = mean_curve([LagCurve(0, [1.0, 2.0, 3.0]), LagCurve(1, [4.0, 5.0])])
    assert (m.min_lag, m.max_lag) == (1, 2)
    np.testing.assert_array_equal(m.values, [3.0, 4.0])


def test_avg_diffusion_averages_pairs(rng):
    p1 = random_panel(rng, 1, 200, stocks=("AAA", "BBB"))
    p2 = PairPanel(p1.a, tuple(random_bars("CCC", b.date, 200, rng) for b in p1.b))
    got = avg_diffusion([p1, p2], 10)
    want = 0.5 * (pair_diffusion(p1, 10).values + pair_diffusion(p2, 10).values)
    np.testing.assert_allclose(got.curve.values, want, rtol=1e-15)
    assert sorted(got.per_pair) == ["BBB", "CCC"]


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.8])
def test_diffusion_scaling_shape(lam):
    tau = np.arange(1, 501)
    s = diffusion_scaling(LagCurve(1, 2e-7 * tau ** (2 * lam))).values
    d = np.diff(s)
    if lam == 0.5:
        np.testing.assert_allclose(s, s[0], rtol=1e-13)
    elif lam > 0.5:
        assert (d > 0).all()
    else:
        assert (d < 0).all()


def test_per_share_response_divides():
    c = per_share_response(LagCurve(1, [2.0, 4.0]), 2.0)
    np.testing.assert_array_equal(c.values, [1.0, 2.0])
    with pytest.raises(ValueError):
        per_share_response(LagCurve(1, [1.0]), 0.0)


def test_volume_conditioned_response_bins(rng):
    p = random_panel(rng, 2, 2000)
    prof = volume_conditioned_response([p], "I-passive", tau=1, bins=8)
    assert prof.count.sum() > 0
    mass = np.sum(prof.density * (prof.hi - prof.lo))
    assert 0.9 < mass <= 1.0 + 1e-12
    assert np.all(prof.lo < prof.hi)


def test_volume_impact_constants_are_law_means(rng):
    p = random_panel(rng, 2, 2000)
    profs = {s: volume_conditioned_response([p], s, 1, 8)
             for s in ("self", "I-passive", "I-active", "II-passive", "II-active")}
    law = PowerLawFit(1.0, 0.5, (0, np.inf), 0.0, decaying=False)
    c = volume_impact_constants(profs, {s: law for s in profs}, np.inf)
    v = profs["I-passive"].volumes
    assert c.f_self_passive == pytest.approx(np.mean(np.sqrt(v[v > 0])), rel=1e-12)


def test_curve_csv_round_trip(tmp_path, rng):
    c = LagCurve(1, rng.normal(size=30), rng.integers(1, 100, 30))
    write_curve_csv(tmp_path / "c.csv", c)
    back = read_curve_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.values, c.values)
    np.testing.assert_array_equal(back.counts, c.counts)
    assert back.min_lag == 1


def test_unknown_method_rejected(panel):
    with pytest.raises(ValueError):
        cross_response(panel, 5, "magic")


# ---------------------------------------------------------------------------
# worked examples and exact transformations
# ---------------------------------------------------------------------------

D0 = dt.date(2008, 1, 2)


def test_constant_mid_gives_zero_response(rng):
    b = random_bars("BBB", D0, 300, rng)
    flat = BarSeries("AAA", SessionGrid(D0, 300), np.full(300, 3.0), b.sign, b.volume)
    np.testing.assert_array_equal(cross_response(PairPanel((flat,), (b,)), 20).curve.values, 0.0)


def test_single_trade_response_is_the_one_sample():
    n = 10
    mid = np.zeros(n)
    mid[1:] = 0.001
    sign = np.zeros(n, np.int8)
    sign[0] = 1
    a = BarSeries("AAA", SessionGrid(D0, n), mid, np.zeros(n, np.int8), np.zeros(n))
    b = BarSeries("BBB", SessionGrid(D0, n), np.zeros(n), sign, np.r_[1.0, np.zeros(n - 1)])
    assert cross_response(PairPanel((a,), (b,)), 1).curve.values[0] == 0.001


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_negating_partner_signs_negates_response_and_correlator(seed):
    rng = np.random.default_rng(seed)
    p = random_panel(rng, n_days=2, slots=300, max_lead=10)
    flipped = tuple(BarSeries(b.stock, b.grid, b.log_mid, (-b.sign).astype(np.int8), b.volume)
                    for b in p.b)
    q = PairPanel(p.a, flipped)
    assert np.array_equal(cross_response(q, 30).curve.values, -cross_response(p, 30).curve.values)
    assert np.array_equal(sign_correlator(q, 30).curve.values, -sign_correlator(p, 30).curve.values)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-5, 5))
def test_shifting_log_mid_leaves_returns_unchanged(seed, shift):
    rng = np.random.default_rng(seed)
    p = random_panel(rng, n_days=1, slots=300, max_lead=5)
    moved = PairPanel(tuple(BarSeries(a.stock, a.grid, a.log_mid + shift, a.sign, a.volume)
                            for a in p.a), p.b)
    r0, r1 = cross_response(p, 30).curve.values, cross_response(moved, 30).curve.values
    np.testing.assert_allclose(r1, r0, rtol=0, atol=1e-12 * np.abs(r0).max())
    d0, d1 = pair_diffusion(p, 30).values, pair_diffusion(moved, 30).values
    np.testing.assert_allclose(d1, d0, rtol=0, atol=1e-10 * np.abs(d0).max())


def test_independent_signs_have_small_correlator():
    rng = np.random.default_rng(17)
    n = 200_000
    mk = lambda s: BarSeries(s, SessionGrid(D0, n), np.zeros(n),
                             rng.choice([-1, 1], n).astype(np.int8), np.ones(n))
    days = [(mk("AAA"), mk("BBB")) for _ in range(5)]
    c = sign_correlator(PairPanel(tuple(d[0] for d in days), tuple(d[1] for d in days)), 50)
    assert np.all(np.abs(c.curve.values[1:]) < 0.005)


def test_partner_average_edge_cases():
    c = LagCurve(1, [0.3, -0.2, 0.1])
    np.testing.assert_array_equal(average_over_partners({("A", "B"): c}, "A", "passive").values, c.values)
    neg = LagCurve(1, -c.values)
    both = average_over_partners({("A", "B"): c, ("A", "C"): neg, ("A", "A"): c}, "A", "passive")
    np.testing.assert_array_equal(both.values, 0.0)
    with pytest.raises(ValueError):
        average_over_partners({("A", "A"): c}, "A", "passive")


def test_partner_average_matches_loop_mean(rng):
    curves = {("A", f"P{k:02d}"): LagCurve(1, rng.normal(size=25)) for k in range(30)}
    got = average_over_partners(curves, "A", "passive").values
    want = [sum(c.values[t] for c in curves.values()) / 30 for t in range(25)]
    np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-16)


def test_diffusion_of_identical_returns_is_mean_square(rng):
    a = random_bars("AAA", D0, 500, rng)
    b = BarSeries("BBB", a.grid, a.log_mid, a.sign, a.volume)
    d = pair_diffusion(PairPanel((a,), (b,)), 10).values
    assert np.all(d >= 0)
    assert d[0] == pytest.approx(np.mean(np.diff(a.log_mid) ** 2), rel=1e-12)


def test_independent_returns_have_small_diffusion(rng):
    p = random_panel(rng, n_days=4, slots=5000)
    d = pair_diffusion(p, 5).values
    # with sd 1e-3 steps, r_a * r_b at lag tau has sd tau * 1e-6
    n = 4 * 5000
    assert np.all(np.abs(d) < 3 * np.arange(1, 6) * 1e-6 / np.sqrt(n / np.arange(1, 6)))


def test_scaling_of_quadratic_diffusion_is_sqrt_tau():
    tau = np.arange(1, 50, dtype=float)
    np.testing.assert_allclose(diffusion_scaling(LagCurve(1, tau**2)).values, np.sqrt(tau), rtol=1e-15)
    np.testing.assert_array_equal(diffusion_scaling(LagCurve(1, -4 * tau)).values, 2.0)


def _impact_panel(rng, slots, c, delta, sigma=1.0):
    """Prices move by ``c * v**delta * sign`` right after each trade."""
    sign = rng.choice([-1, 1], slots).astype(np.int8)
    vol = rng.lognormal(0.0, sigma, slots)
    step = c * vol**delta * sign
    mid = np.r_[0.0, np.cumsum(step[:-1])]
    a = BarSeries("AAA", SessionGrid(D0, slots), mid, sign, vol)
    return PairPanel((a,), (a,))


def test_volume_profile_reproduces_power_law():
    rng = np.random.default_rng(21)
    prof = volume_conditioned_response(_impact_panel(rng, 200_000, 0.3, 0.51), "self", 1, 12)
    # every sample of r * sign is exactly 0.3 * v**0.51, so bin means are law means
    idx = np.searchsorted(prof.bin_edges, prof.volumes, side="right") - 1
    law = 0.3 * prof.volumes**0.51
    want = [law[idx == k].mean() for k in np.unique(idx)]
    np.testing.assert_allclose(prof.response, want, rtol=1e-12)
    fit = fit_power_law((prof.centers, prof.response), (0, np.inf), decaying=False)
    assert fit.exponent == pytest.approx(0.51, abs=0.03)


def test_volume_profile_flat_and_single_bin(rng):
    p = random_panel(rng, 1, 20000)
    prof = volume_conditioned_response(p, "self", 1, 6)
    assert np.all(np.abs(prof.response) < 4e-3 / np.sqrt(prof.count))
    a = p.a[0]
    one = BarSeries("AAA", a.grid, a.log_mid, a.sign, np.where(a.sign != 0, 2.0, 0.0))
    single = volume_conditioned_response(PairPanel((one,), (one,)), "self", 1)
    assert single.response.size == 1


def test_volume_constant_of_unit_volumes():
    n = 50
    sign = np.ones(n, np.int8)
    a = BarSeries("AAA", SessionGrid(D0, n), np.zeros(n), sign, np.ones(n))
    p = PairPanel((a,), (a,))
    profs = {s: volume_conditioned_response(p, s, 1) for s in
             ("I-passive", "I-active", "II-passive", "II-active")}
    law = PowerLawFit(0.3, 1.7, (0, np.inf), 0.0, decaying=False)
    c = volume_impact_constants(profs, {s: law for s in profs})
    assert [c.f_self_passive, c.f_self_active, c.g_cross_passive, c.g_cross_active] == \
        pytest.approx([0.3] * 4, rel=1e-15)


def test_volume_constant_matches_truncated_lognormal_mean():
    rng = np.random.default_rng(22)
    sigma, delta, c = 1.0, 0.5, 0.3
    p = _impact_panel(rng, 200_000, c, delta, sigma)
    profs = {s: volume_conditioned_response(p, s, 1) for s in
             ("I-passive", "I-active", "II-passive", "II-active")}
    law = PowerLawFit(c, delta, (0, np.inf), 0.0, decaying=False)
    got = volume_impact_constants(profs, {s: law for s in profs}).f_self_passive
    # E[c v^d | v <= 1] for log v ~ N(0, sigma^2)
    want = c * math.exp(delta**2 * sigma**2 / 2) * norm.cdf(-delta * sigma) / norm.cdf(0.0)
    assert got == pytest.approx(want, rel=0.02)


def test_unit_impact_laws_give_unit_products(rng):
    p = random_panel(rng, 2, 500)
    one = PowerLawFit(1.0, 0.0, (0, np.inf), 0.0, decaying=False)
    v = volume_product_averages([p], {s: one for s in ("I-passive", "I-active", "II-passive", "II-active")},
                                np.inf)
    assert (v.LL, v.II, v.LI, v.IL) == (1.0, 1.0, 1.0, 1.0)


def test_independent_volumes_factorize(rng):
    p = random_panel(rng, 3, 20000)
    law = PowerLawFit(1.0, 0.5, (0, np.inf), 0.0, decaying=False)
    v = volume_product_averages([p], {s: law for s in ("I-passive", "I-active", "II-passive", "II-active")},
                                np.inf)
    vi = np.concatenate([a.volume for a in p.a])
    vj = np.concatenate([b.volume for b in p.b])
    both = (vi > 0) & (vj > 0)
    want = np.mean(np.sqrt(vi[both])) * np.mean(np.sqrt(vj[both]))
    assert v.LL == pytest.approx(want, rel=0.02)
