"""Least-squares power-law and logarithmic fits, and the normalized chi^2."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import LagCurve

log = logging.getLogger(__name__)


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    """``y = amplitude * x**(sign * exponent)``.

    For decaying correlators ``exponent`` is the decay exponent (the fitted
    log-log slope is ``-exponent``); for volume laws it is the slope itself.
    """

    amplitude: float
    exponent: float
    fit_range: tuple[float, float]
    residual: float
    decaying: bool = True

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = -self.exponent if self.decaying else self.exponent
        return self.amplitude * x**p

    def to_json(self) -> dict:
        d = asdict(self)
        d["fit_range"] = list(self.fit_range)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PowerLawFit":
        d = dict(d)
        d["fit_range"] = tuple(d["fit_range"])
        return cls(**d)


@dataclass(frozen=True)
class LogFit:
    """``y = intercept + slope * ln(x)``."""

    intercept: float
    slope: float
    residual: float

    def __call__(self, x):
        return self.intercept + self.slope * np.log(np.asarray(x, dtype=float))


def _xy(data):
    """Abscissa/ordinate arrays from a LagCurve, VolumeProfile or (x, y) pair."""
    if isinstance(data, LagCurve):
        return data.lags.astype(float), data.values
    if hasattr(data, "centers") and hasattr(data, "response"):
        return np.asarray(data.centers, float), np.asarray(data.response, float)
    x, y = data
    return np.asarray(x, float), np.asarray(y, float)


def _select(x, y, lo, hi):
    keep = np.isfinite(y) & (x >= lo) & (x <= hi)
    return x[keep], y[keep]


def fit_power_law(data, fit_range=(10, 1000), decaying: bool = True) -> PowerLawFit:
    """Ordinary least squares on ``(log x, log y)`` inside ``fit_range``.

    Non-positive ordinates cannot be log-transformed. When one appears the
    range is cut just before the first such point, and a warning is logged.
    """
    x, y = _xy(data)
    lo, hi = fit_range
    x, y = _select(x, y, lo, hi)
    bad = np.flatnonzero((y <= 0) | (x <= 0))
    if bad.size:
        cut = bad[0]
        log.warning(
            "non-positive value at x=%g; power-law fit range shrunk to [%g, %g)",
            x[cut], lo, x[cut],
        )
        x, y = x[:cut], y[:cut]
    if x.size < 3:
        raise FitError(f"power-law fit needs >= 3 positive points in [{lo}, {hi}]")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sum((ly - (intercept + slope * lx)) ** 2))
    exponent = -slope if decaying else slope
    return PowerLawFit(
        math.exp(intercept), float(exponent), (float(x[0]), float(x[-1])), resid, decaying
    )


def fit_log(data, fit_range=(0.0, math.inf)) -> LogFit:
    """Least squares of ``y`` against ``ln x``."""
    x, y = _xy(data)
    x, y = _select(x, y, *fit_range)
    keep = x > 0
    x, y = x[keep], y[keep]
    if x.size < 3:
        raise FitError("logarithmic fit needs >= 3 points")
    lx = np.log(x)
    slope, intercept = np.polyfit(lx, y, 1)
    resid = float(np.sum((y - (intercept + slope * lx)) ** 2))
    return LogFit(float(intercept), float(slope), resid)


def chi2_normalized(empirical, model) -> float:
    """``sum (emp - mod)^2 / sum emp^2`` over the common lags.

    Dimensionless and invariant under a joint rescaling of both curves.
    """
    if isinstance(empirical, LagCurve) and isinstance(model, LagCurve):
        if (empirical.min_lag, empirical.max_lag) != (model.min_lag, model.max_lag):
            raise ValueError("curves must share the same lag support")
        e, m = empirical.values, model.values
    else:
        e, m = np.asarray(empirical, float), np.asarray(model, float)
        if e.shape != m.shape:
            raise ValueError("curves must have the same length")
    denom = float(np.dot(e, e))
    if denom == 0.0:
        raise ValueError("empirical curve is identically zero")
    d = e - m
    return float(np.dot(d, d)) / denom


def fit_report(fit: PowerLawFit, chi2: float | None = None) -> str:
    return json.dumps(
        {
            "amplitude": fit.amplitude,
            "exponent": fit.exponent,
            "range": list(fit.fit_range),
            "chi2": fit.residual if chi2 is None else chi2,
        },
        sort_keys=True,
    )
