"""Tick files to one-second bars.

Trades and quotes arrive as one CSV per (stock, day, kind), with ``ts``
given in integer seconds since 9:40:00::

    ts,price,shares        (trades)
    ts,bid,ask             (quotes)

Trade signs are inferred from consecutive trade prices (a tick test), then
aggregated to a single sign per second.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import SESSION_SLOTS, BarSeries, SessionGrid, validate_symbol

log = logging.getLogger(__name__)

FORMAT_HEADER = "# impactlab-format v1"
TRADE_COLUMNS = ("ts", "price", "shares")
QUOTE_COLUMNS = ("ts", "bid", "ask")
BAR_COLUMNS = ("slot", "log_mid", "sign", "volume")


class IngestError(ValueError):
    """A tick file is malformed."""


class DayRejected(ValueError):
    """A day cannot be turned into bars (e.g. it has no usable quote)."""


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class TickRecord:
    timestamp: int
    price: float
    shares: int

    def __post_init__(self):
        if self.price <= 0 or not math.isfinite(self.price):
            raise ValueError(f"trade price must be positive, got {self.price}")
        if self.shares <= 0:
            raise ValueError(f"trade size must be positive, got {self.shares}")


@dataclass(frozen=True)
class QuoteRecord:
    timestamp: int
    bid: float
    ask: float

    def __post_init__(self):
        if not (self.bid > 0 and self.ask > 0) or not math.isfinite(self.bid + self.ask):
            raise ValueError(f"quotes must be positive, got {self.bid}/{self.ask}")

    @property
    def crossed(self) -> bool:
        return self.bid > self.ask


@dataclass
class RawDay:
    stock: str
    date: dt.date
    trades: list[TickRecord]
    quotes: list[QuoteRecord]
    slots: int = SESSION_SLOTS

    def __post_init__(self):
        validate_symbol(self.stock)
        for name, recs in (("trades", self.trades), ("quotes", self.quotes)):
            ts = [r.timestamp for r in recs]
            if any(a > b for a, b in zip(ts, ts[1:])):
                raise ValueError(f"{name} of {self.stock} {self.date} not sorted by time")
            if ts and (ts[0] < 0 or ts[-1] >= self.slots):
                raise ValueError(f"{name} timestamp outside [0, {self.slots})")


@dataclass
class IngestStats:
    crossed_quotes: int = 0
    rejected_days: list[str] = field(default_factory=list)


def _sgn(x: float) -> int:
    return (x > 0) - (x < 0)


def classify_intra_second_signs(
    prices: Sequence[float], prev_sign: int = 0, prev_price: float | None = None
) -> list[int]:
    """Tick-test signs for a run of consecutive trades.

    A price rise is a buy (+1), a fall a sell (-1); an unchanged price
    repeats the previous sign. ``prev_price``/``prev_sign`` describe the last
    trade already processed that day. Without a predecessor the first trade
    gets sign 0.
    """
    out = []
    sign, last = prev_sign, prev_price
    for p in prices:
        if last is None:
            sign = 0
        elif p != last:
            sign = _sgn(p - last)
        out.append(sign)
        last = p
    return out


def aggregate_second(signs: Sequence[int]) -> int:
    """Net sign of all trades within one second (0 if none or balanced)."""
    return _sgn(sum(signs))


def build_bar_series(raw: RawDay, stats: IngestStats | None = None) -> BarSeries:
    """Aggregate one day of ticks onto the one-second grid.

    Volumes are raw share counts; see :func:`normalize_volumes`.
    """
    n = raw.slots
    quotes = [q for q in raw.quotes if not q.crossed]
    crossed = len(raw.quotes) - len(quotes)
    if crossed:
        log.warning("%s %s: dropped %d crossed quotes", raw.stock, raw.date, crossed)
        if stats is not None:
            stats.crossed_quotes += crossed
    if not quotes:
        raise DayRejected(f"{raw.stock} {raw.date}: no usable quotes")

    # last quote at or before the end of each slot, carried forward
    mid = np.full(n, np.nan)
    for q in quotes:
        mid[q.timestamp] = math.log(0.5 * (q.bid + q.ask))
    filled = np.where(~np.isnan(mid), np.arange(n), -1)
    np.maximum.accumulate(filled, out=filled)
    log_mid = np.where(filled >= 0, mid[np.maximum(filled, 0)], np.nan)

    sign = np.zeros(n, dtype=np.int8)
    volume = np.zeros(n)
    prev_sign, prev_price = 0, None
    trades = raw.trades
    k = 0
    while k < len(trades):
        t = trades[k].timestamp
        end = k
        while end < len(trades) and trades[end].timestamp == t:
            end += 1
        chunk = trades[k:end]
        prices = [tr.price for tr in chunk]
        signs = classify_intra_second_signs(prices, prev_sign, prev_price)
        sign[t] = aggregate_second(signs)
        volume[t] = float(sum(tr.shares for tr in chunk))
        prev_sign, prev_price = signs[-1], prices[-1]
        k = end
    return BarSeries(raw.stock, SessionGrid(raw.date, n), log_mid, sign, volume)


def normalize_volumes(days: Sequence[BarSeries]) -> list[BarSeries]:
    """Divide every slot volume by the stock's mean volume per slot.

    The mean runs over all slots of all days (zeros included), so after
    normalization the grand mean is one.
    """
    total = math.fsum(float(d.volume.sum()) for d in days)
    n_slots = sum(d.slots for d in days)
    if not days or total <= 0:
        raise NormalizationError("cannot normalize volumes that are all zero")
    scale = n_slots / total
    return [d.with_volume(d.volume * scale) for d in days]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def tick_path(data_dir: Path, stock: str, date: dt.date, kind: str) -> Path:
    return Path(data_dir) / f"{stock}_{date.isoformat()}_{kind}.csv"


def _data_rows(path: Path, columns: tuple[str, ...]):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"{path}: empty file") from None
    if tuple(h.strip() for h in header) != columns:
        raise IngestError(f"{path}: expected columns {','.join(columns)}, got {','.join(header)}")
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(columns):
            raise IngestError(f"{path}:{lineno}: expected {len(columns)} fields")
        yield lineno, row


def read_trades(path: Path) -> list[TickRecord]:
    out = []
    for lineno, (ts, price, shares) in _data_rows(path, TRADE_COLUMNS):
        try:
            out.append(TickRecord(int(ts), float(price), int(shares)))
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
    return out


def read_quotes(path: Path) -> list[QuoteRecord]:
    out = []
    for lineno, (ts, bid, ask) in _data_rows(path, QUOTE_COLUMNS):
        try:
            out.append(QuoteRecord(int(ts), float(bid), float(ask)))
        except ValueError as exc:
            raise IngestError(f"{path}:{lineno}: {exc}") from None
    return out


def read_raw_day(data_dir: Path, stock: str, date: dt.date, slots: int = SESSION_SLOTS) -> RawDay:
    trades = read_trades(tick_path(data_dir, stock, date, "trades"))
    quotes = read_quotes(tick_path(data_dir, stock, date, "quotes"))
    try:
        return RawDay(stock, date, trades, quotes, slots)
    except ValueError as exc:
        raise IngestError(str(exc)) from None


def write_trades(path: Path, trades: Sequence[TickRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(TRADE_COLUMNS) + "\n")
        for tr in trades:
            fh.write(f"{tr.timestamp},{tr.price!r},{tr.shares}\n")


def write_quotes(path: Path, quotes: Sequence[QuoteRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(QUOTE_COLUMNS) + "\n")
        for q in quotes:
            fh.write(f"{q.timestamp},{q.bid!r},{q.ask!r}\n")


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_bars(path: Path, bars: BarSeries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(",".join(BAR_COLUMNS) + "\n")
        for t in range(bars.slots):
            fh.write(f"{t},{_fmt(bars.log_mid[t])},{int(bars.sign[t])},{_fmt(bars.volume[t])}\n")


def read_bars(path: Path, stock: str, date: dt.date) -> BarSeries:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise IngestError(f"{path}: empty file")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != BAR_COLUMNS:
        raise IngestError(f"{path}: expected columns {','.join(BAR_COLUMNS)}, got {','.join(header)}")
    try:
        arr = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None
    n = arr.shape[0]
    if n == 0 or arr.shape[1] != len(BAR_COLUMNS):
        raise IngestError(f"{path}: expected rows of {len(BAR_COLUMNS)} fields")
    if not np.array_equal(arr[:, 0], np.arange(n)):
        raise IngestError(f"{path}: slots must be contiguous from 0")
    sign = arr[:, 2]
    if not np.array_equal(sign, np.rint(sign)):
        raise IngestError(f"{path}: signs must be integers")
    return BarSeries(stock, SessionGrid(date, n), arr[:, 1], sign.astype(np.int8), arr[:, 3])


def bar_path(bar_dir: Path, stock: str, date: dt.date) -> Path:
    return Path(bar_dir) / f"{stock}_{date.isoformat()}.csv"


def discover_ticks(data_dir: Path) -> dict[str, list[dt.date]]:
    """Map each stock to the dates for which both tick files exist."""
    found: dict[tuple[str, dt.date], set[str]] = {}
    for p in sorted(Path(data_dir).glob("*_*_*.csv")):
        parts = p.stem.rsplit("_", 2)
        if len(parts) != 3 or parts[2] not in ("trades", "quotes"):
            continue
        try:
            date = dt.date.fromisoformat(parts[1])
        except ValueError:
            continue
        found.setdefault((parts[0], date), set()).add(parts[2])
    out: dict[str, list[dt.date]] = {}
    for (stock, date), kinds in sorted(found.items()):
        if kinds == {"trades", "quotes"}:
            out.setdefault(stock, []).append(date)
    return out
