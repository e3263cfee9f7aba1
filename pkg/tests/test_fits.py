import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from impactlab.core import LagCurve
from impactlab.fits import (FitError, PowerLawFit, chi2_normalized, fit_log, fit_power_law,
                            fit_report)


def test_noiseless_power_law_is_exact():
    c = LagCurve.from_function(lambda t: 0.1 * t ** -0.7, 1, 2000)
    f = fit_power_law(c, (10, 1000))
    assert abs(f.exponent - 0.7) < 1e-12
    assert f.amplitude == pytest.approx(0.1, rel=1e-10)
    assert f.fit_range == (10.0, 1000.0)


@settings(max_examples=60)
@given(amp=st.floats(1e-6, 1e3), gamma=st.floats(-2.0, 3.0),
       lo=st.integers(1, 50), width=st.integers(5, 500))
def test_fit_matches_normal_equations(amp, gamma, lo, width):
    x = np.arange(lo, lo + width, dtype=float)
    y = amp * x ** -gamma * (1 + 0.1 * np.sin(x))
    f = fit_power_law((x, y), (lo, lo + width))
    assert -f.exponent == pytest.approx(oracles.power_law_slope(x, y), rel=1e-9, abs=1e-9)


def test_growing_law_reports_slope():
    x = np.linspace(0.1, 5, 40)
    f = fit_power_law((x, 2.0 * x**0.45), (0, 10), decaying=False)
    assert f.exponent == pytest.approx(0.45, abs=1e-12)
    np.testing.assert_allclose(f(x), 2.0 * x**0.45, rtol=1e-10)


def test_nonpositive_values_shrink_the_range(caplog):
    x = np.arange(1, 101, dtype=float)
    y = x ** -0.5
    y[60] = -1e-3
    with caplog.at_level(logging.WARNING):
        f = fit_power_law((x, y), (1, 100))
    assert f.fit_range == (1.0, 60.0)
    assert "shrunk" in caplog.text


def test_too_few_points_is_an_error():
    x = np.arange(1, 20, dtype=float)
    y = -np.ones_like(x)
    y[:2] = 1.0
    with pytest.raises(FitError):
        fit_power_law((x, y), (1, 20))


def test_multiplicative_noise_recovery():
    t = np.arange(1, 1001, dtype=float)
    gammas = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        y = 0.1 * t**-0.7 * (1 + 0.05 * rng.standard_normal(t.size))
        gammas.append(fit_power_law((t, y), (10, 1000)).exponent)
    gammas = np.array(gammas)
    assert np.all(np.abs(gammas - 0.7) <= 0.03)


def test_log_fit():
    x = np.arange(1, 200, dtype=float)
    f = fit_log((x, 3.0 - 0.25 * np.log(x)))
    assert f.slope == pytest.approx(-0.25, abs=1e-12)
    assert f.intercept == pytest.approx(3.0, abs=1e-12)


@settings(max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-6, 1e6))
def test_chi2_properties(seed, c):
    rng = np.random.default_rng(seed)
    e, m = rng.normal(size=30), rng.normal(size=30)
    assert chi2_normalized(e, e) == 0.0
    assert chi2_normalized(e, m) >= 0.0
    assert chi2_normalized(c * e, c * m) == pytest.approx(chi2_normalized(e, m), rel=1e-9)
    assert chi2_normalized(e, np.zeros(30)) == pytest.approx(1.0, rel=1e-15)


def test_chi2_needs_matching_support():
    with pytest.raises(ValueError):
        chi2_normalized(LagCurve(1, [1.0, 2.0]), LagCurve(0, [1.0, 2.0]))
    with pytest.raises(ValueError):
        chi2_normalized(np.zeros(3), np.ones(3))


def test_fit_json_round_trip_and_report():
    f = PowerLawFit(0.2, 0.6, (10.0, 1000.0), 1.5)
    assert PowerLawFit.from_json(f.to_json()) == f
    text = fit_report(f, chi2=0.01)
    assert "0.6" in text and math.isfinite(f(5.0))
