"""Brute-force reference implementations used by the test-suite.

Everything here is written as plain loops straight from the definitions,
with no FFTs, Toeplitz tricks or prefix sums.
"""

import math

import numpy as np


def _valid_from(*series):
    return max(s.first_valid for s in series)


def response(panel, T_max):
    """R_ab(tau) as sum over signed slots of r_a(t, tau) * sign_b(t) / #signed."""
    sums = [0.0] * (T_max + 1)
    counts = [0] * (T_max + 1)
    for a, b in panel:
        n, t0 = a.slots, a.first_valid
        x, s = a.log_mid.tolist(), b.sign.tolist()
        for tau in range(1, T_max + 1):
            for t in range(t0, n - tau):
                if s[t] != 0:
                    sums[tau] += (x[t + tau] - x[t]) * s[t]
                    counts[tau] += 1
    return np.array([sums[k] / counts[k] for k in range(1, T_max + 1)])


def correlator(panel, T_max):
    """Theta_ab(tau) for tau in [-T_max, T_max], zero signs kept in the average."""
    out = {}
    for tau in range(-T_max, T_max + 1):
        num, cnt = 0, 0
        for a, b in panel:
            n, t0 = a.slots, _valid_from(a, b)
            sa, sb = a.sign.tolist(), b.sign.tolist()
            for t in range(t0, n):
                if t0 <= t + tau < n:
                    num += sa[t + tau] * sb[t]
                    cnt += 1
        out[tau] = num / cnt
    return out


def diffusion(panel, T_max):
    """D_ab(tau) = mean over t of r_a(t, tau) * r_b(t, tau)."""
    sums = [0.0] * (T_max + 1)
    counts = [0] * (T_max + 1)
    for a, b in panel:
        n, t0 = a.slots, _valid_from(a, b)
        x, y = a.log_mid.tolist(), b.log_mid.tolist()
        for tau in range(1, T_max + 1):
            for t in range(t0, n - tau):
                sums[tau] += (x[t + tau] - x[t]) * (y[t + tau] - y[t])
                counts[tau] += 1
    return np.array([sums[k] / counts[k] for k in range(1, T_max + 1)])


def response_double_sum(G, theta_fwd, theta_back, tau, t_cut):
    """Cross-response per share from the lag double sum.

    ``sum_{0<=t<tau} G(tau-t) P(t) + sum_{-t_cut<=t<0} [G(tau-t) - G(-t)] Q(-t)``,
    with ``G`` truncated to lags ``<= t_cut``.
    Terms are accumulated with exact (fsum) summation so the oracle's own
    rounding stays far below the tolerance it is used to check.
    """
    g = lambda k: G(k) if k <= t_cut else 0.0
    terms = []
    for t in range(0, tau):
        terms.append(g(tau - t) * theta_fwd(t))
    for t in range(-t_cut, 0):
        terms.append(g(tau - t) * theta_back(-t))
        terms.append(-g(-t) * theta_back(-t))
    return math.fsum(terms)


def diffusion_component(G1, G2, theta1, theta2, V, noise, tau, t_cut):
    """One diffusion component from its eight separate lag sums (t = 0).

    Trade times run over ``[-t_cut, tau)``; ``theta1`` is used when the
    ``G1`` trade comes later, ``theta2`` when the ``G2`` trade does.
    """
    past = range(-t_cut, 0)
    now = range(0, tau)
    d1 = lambda k: G1(tau - k) - G1(-k)
    d2 = lambda k: G2(tau - k) - G2(-k)
    s = 0.0
    for k in now:
        s += G1(tau - k) * G2(tau - k) * theta1(0)
    for k in past:
        s += d1(k) * d2(k) * theta1(0)
    for k1 in now:
        for k2 in now:
            if k1 < k2:
                s += G1(tau - k1) * G2(tau - k2) * theta2(k2 - k1)
            elif k2 < k1:
                s += G1(tau - k1) * G2(tau - k2) * theta1(k1 - k2)
    for k1 in past:
        for k2 in past:
            if k1 < k2:
                s += d1(k1) * d2(k2) * theta2(k2 - k1)
            elif k2 < k1:
                s += d1(k1) * d2(k2) * theta1(k1 - k2)
    for k2 in now:
        for k1 in past:
            s += d1(k1) * G2(tau - k2) * theta2(k2 - k1)
    for k1 in now:
        for k2 in past:
            s += G1(tau - k1) * d2(k2) * theta1(k1 - k2)
    return s * V + tau * noise


def power_law_slope(x, y):
    """Least-squares slope of log y on log x via the textbook normal equations."""
    lx = [math.log(v) for v in x]
    ly = [math.log(v) for v in y]
    n = len(lx)
    mx, my = sum(lx) / n, sum(ly) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    sxx = sum((a - mx) ** 2 for a in lx)
    return sxy / sxx
