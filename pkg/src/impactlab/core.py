"""Domain types and the one-second session grid.

Every lagged quantity in the package is computed inside a single trading
session. A session runs 9:40-15:50 local time at one-second resolution,
i.e. 22200 slots. Lags are integer numbers of seconds.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SESSION_SLOTS = 22200
SESSION_START = dt.time(9, 40)
SESSION_END = dt.time(15, 50)


class EmptyPanelError(ValueError):
    """Two stocks share no trading day."""


def validate_symbol(symbol: str) -> str:
    if not isinstance(symbol, str) or not symbol:
        raise ValueError(f"invalid stock symbol {symbol!r}")
    if symbol != symbol.upper() or not symbol.replace(".", "").isalnum():
        raise ValueError(f"stock symbol must be an uppercase ticker, got {symbol!r}")
    return symbol


@dataclass(frozen=True)
class SessionGrid:
    """One trading day on the one-second grid.

    ``slots`` is 22200 for real sessions. Shorter grids are accepted for
    synthetic panels and tests; :meth:`is_full_session` tells them apart.
    """

    date: dt.date
    slots: int = SESSION_SLOTS
    start: dt.time = SESSION_START
    end: dt.time = SESSION_END

    def __post_init__(self):
        if self.slots < 1:
            raise ValueError("a session needs at least one slot")

    @property
    def is_full_session(self) -> bool:
        return self.slots == SESSION_SLOTS


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BarSeries:
    """Per-slot log-midpoint, aggregated trade sign and traded volume.

    ``log_mid`` is NaN only on a leading run of slots (before the first
    quote of the day); such slots are excluded from every average.
    """

    stock: str
    grid: SessionGrid
    log_mid: np.ndarray
    sign: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        validate_symbol(self.stock)
        n = self.grid.slots
        lm = _frozen(self.log_mid, np.float64)
        sg = _frozen(self.sign, np.int8)
        vol = _frozen(self.volume, np.float64)
        if not (lm.shape == sg.shape == vol.shape == (n,)):
            raise ValueError(
                f"bar arrays must all have length {n}, got "
                f"{lm.shape}, {sg.shape}, {vol.shape}"
            )
        if not np.isin(sg, (-1, 0, 1)).all():
            raise ValueError("signs must lie in {-1, 0, +1}")
        if (vol < 0).any() or not np.isfinite(vol).all():
            raise ValueError("volumes must be finite and non-negative")
        if ((sg != 0) & (vol == 0)).any():
            raise ValueError("a signed slot must carry volume")
        nan = np.isnan(lm)
        first = int(np.argmin(nan)) if not nan.all() else n
        if nan[first:].any():
            raise ValueError("log_mid may be missing only before the first quote")
        if np.isinf(lm).any():
            raise ValueError("log_mid must be finite")
        object.__setattr__(self, "log_mid", lm)
        object.__setattr__(self, "sign", sg)
        object.__setattr__(self, "volume", vol)

    @property
    def date(self) -> dt.date:
        return self.grid.date

    @property
    def slots(self) -> int:
        return self.grid.slots

    @property
    def first_valid(self) -> int:
        """Index of the first slot with a known midpoint (``slots`` if none)."""
        nan = np.isnan(self.log_mid)
        return int(np.argmin(nan)) if not nan.all() else self.slots

    def with_volume(self, volume) -> "BarSeries":
        return BarSeries(self.stock, self.grid, self.log_mid, self.sign, volume)


@dataclass(frozen=True, eq=False)
class LagCurve:
    """Values indexed by the contiguous integer lags ``min_lag..max_lag``."""

    min_lag: int
    values: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        if self.min_lag < 0:
            raise ValueError("lags are non-negative")
        vals = _frozen(self.values, np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("a lag curve needs at least one value")
        object.__setattr__(self, "values", vals)
        if self.counts is not None:
            cnt = _frozen(self.counts, np.int64)
            if cnt.shape != vals.shape:
                raise ValueError("counts must align with values")
            object.__setattr__(self, "counts", cnt)

    @classmethod
    def from_function(cls, fn, min_lag: int, max_lag: int) -> "LagCurve":
        lags = np.arange(min_lag, max_lag + 1)
        return cls(min_lag, np.asarray(fn(lags), dtype=float))

    @property
    def max_lag(self) -> int:
        return self.min_lag + self.values.size - 1

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.min_lag, self.max_lag + 1)

    def __len__(self) -> int:
        return self.values.size

    def __call__(self, lag):
        lag = np.asarray(lag)
        if (lag < self.min_lag).any() or (lag > self.max_lag).any():
            raise IndexError(
                f"lag outside [{self.min_lag}, {self.max_lag}]"
            )
        return self.values[lag - self.min_lag]

    def covers(self, lo: int, hi: int) -> bool:
        return self.min_lag <= lo and hi <= self.max_lag

    def restrict(self, lo: int, hi: int) -> "LagCurve":
        if not self.covers(lo, hi) or hi < lo:
            raise IndexError(f"[{lo}, {hi}] not inside [{self.min_lag}, {self.max_lag}]")
        sl = slice(lo - self.min_lag, hi - self.min_lag + 1)
        counts = None if self.counts is None else self.counts[sl]
        return LagCurve(lo, self.values[sl], counts)

    def map(self, fn) -> "LagCurve":
        return LagCurve(self.min_lag, fn(self.values), self.counts)


@dataclass(frozen=True, eq=False)
class PairPanel:
    """Day-aligned bar series of an impacted stock ``a`` and partner ``b``."""

    a: tuple[BarSeries, ...]
    b: tuple[BarSeries, ...]
    common_days: tuple[dt.date, ...] = field(default=())

    def __post_init__(self):
        a, b = tuple(self.a), tuple(self.b)
        if len(a) != len(b):
            raise ValueError("panel sides must have the same number of days")
        for x, y in zip(a, b):
            if x.date != y.date or x.slots != y.slots:
                raise ValueError(f"misaligned day {x.date} vs {y.date}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "common_days", tuple(x.date for x in a))

    @property
    def stocks(self) -> tuple[str, str]:
        return self.a[0].stock, self.b[0].stock

    def swap(self) -> "PairPanel":
        return PairPanel(self.b, self.a)

    def __iter__(self):
        return iter(zip(self.a, self.b))

    def __len__(self) -> int:
        return len(self.a)


def _check_sorted_unique(days: Sequence[BarSeries]):
    dates = [d.date for d in days]
    if any(x >= y for x, y in zip(dates, dates[1:])):
        raise ValueError("bar series must be sorted by date without duplicates")


def align_pair(days_i: Sequence[BarSeries], days_j: Sequence[BarSeries]) -> PairPanel:
    """Keep only the days on which both stocks traded."""
    _check_sorted_unique(days_i)
    _check_sorted_unique(days_j)
    by_date = {d.date: d for d in days_j}
    a, b = [], []
    for d in days_i:
        if d.date in by_date:
            a.append(d)
            b.append(by_date[d.date])
    if not a:
        raise EmptyPanelError("the two stocks share no trading day")
    return PairPanel(tuple(a), tuple(b))


def log_return(series: BarSeries, t: int, tau: int) -> float:
    """Log-midpoint change of ``series`` from slot ``t`` to ``t + tau``."""
    if tau < 0 or t < 0 or t + tau >= series.slots:
        raise IndexError(f"slot {t} + lag {tau} outside session of {series.slots} slots")
    return float(series.log_mid[t + tau] - series.log_mid[t])


def business_days(start: dt.date, n: int) -> list[dt.date]:
    out, d = [], start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += dt.timedelta(days=1)
    return out


def group_by_stock(series: Iterable[BarSeries]) -> dict[str, list[BarSeries]]:
    out: dict[str, list[BarSeries]] = {}
    for s in series:
        out.setdefault(s.stock, []).append(s)
    for v in out.values():
        v.sort(key=lambda s: s.date)
    return out
