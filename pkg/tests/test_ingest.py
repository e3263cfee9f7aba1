import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_bars
from impactlab.ingest import (DayRejected, IngestError, IngestStats, QuoteRecord, RawDay,
                              TickRecord, aggregate_second, build_bar_series, bar_path,
                              classify_intra_second_signs, discover_ticks, normalize_volumes,
                              read_bars, read_raw_day, read_trades, tick_path, write_bars, write_quotes,
                              write_trades)

D = dt.date(2008, 1, 2)


def test_tick_test_signs():
    assert classify_intra_second_signs([10.0, 10.01, 10.01, 10.0]) == [0, 1, 1, -1]
    assert classify_intra_second_signs([10.0], prev_sign=-1, prev_price=10.0) == [-1]
    assert classify_intra_second_signs([10.02], prev_sign=-1, prev_price=10.0) == [1]


def test_second_aggregation():
    assert aggregate_second([1, 1, -1]) == 1
    assert aggregate_second([1, -1]) == 0
    assert aggregate_second([]) == 0


@settings(max_examples=100)
@given(st.lists(st.sampled_from([-1, 0, 1]), max_size=30))
def test_aggregate_is_sign_of_sum(signs):
    assert aggregate_second(signs) == int(np.sign(sum(signs)))


def test_bar_series_from_ticks():
    raw = RawDay("AAA", D, [TickRecord(2, 10.0, 100), TickRecord(2, 10.01, 50),
                            TickRecord(4, 10.0, 10), TickRecord(4, 10.0, 10),
                            TickRecord(6, 10.02, 5)],
                 [QuoteRecord(1, 9.99, 10.01), QuoteRecord(5, 10.0, 10.02)], slots=8)
    b = build_bar_series(raw)
    assert np.isnan(b.log_mid[0]) and b.first_valid == 1
    assert b.log_mid[4] == pytest.approx(math.log(10.0))
    assert b.log_mid[7] == pytest.approx(math.log(10.01))
    # second 2: first trade of the day has sign 0, then +1 -> net +1
    np.testing.assert_array_equal(b.sign, [0, 0, 1, 0, -1, 0, 1, 0])
    np.testing.assert_array_equal(b.volume, [0, 0, 150, 0, 20, 0, 5, 0])


def test_crossed_quotes_are_dropped():
    stats = IngestStats()
    raw = RawDay("AAA", D, [], [QuoteRecord(0, 10.05, 10.0), QuoteRecord(3, 9.99, 10.01)], slots=5)
    b = build_bar_series(raw, stats)
    assert stats.crossed_quotes == 1 and b.first_valid == 3


def test_day_without_quotes_is_rejected():
    with pytest.raises(DayRejected):
        build_bar_series(RawDay("AAA", D, [TickRecord(0, 10.0, 1)], [], slots=5))


def test_unsorted_ticks_rejected():
    with pytest.raises(ValueError):
        RawDay("AAA", D, [TickRecord(3, 10.0, 1), TickRecord(1, 10.0, 1)], [], slots=5)


def test_volume_normalization_mean_one(rng):
    days = [random_bars("AAA", d, 500, rng) for d in (D, dt.date(2008, 1, 3))]
    norm = normalize_volumes(days)
    assert np.mean(np.concatenate([d.volume for d in norm])) == pytest.approx(1.0, rel=1e-12)


def test_tick_files_round_trip(tmp_path):
    trades = [TickRecord(0, 10.0, 100), TickRecord(3, 10.01, 7)]
    quotes = [QuoteRecord(0, 9.995, 10.005)]
    write_trades(tick_path(tmp_path, "AAA", D, "trades"), trades)
    write_quotes(tick_path(tmp_path, "AAA", D, "quotes"), quotes)
    (tmp_path / "notes.txt").write_text("ignored")
    assert discover_ticks(tmp_path) == {"AAA": [D]}
    raw = read_raw_day(tmp_path, "AAA", D, slots=10)
    assert raw.trades == trades and raw.quotes == quotes


def test_malformed_trades_reported(tmp_path):
    p = tick_path(tmp_path, "AAA", D, "trades")
    p.write_text("ts,price,shares\n0,abc,5\n")
    with pytest.raises(IngestError, match="2"):
        read_trades(p)


def test_bar_files_round_trip(tmp_path, rng):
    b = random_bars("AAA", D, 300, rng, lead_nan=7)
    write_bars(bar_path(tmp_path, "AAA", D), b)
    back = read_bars(bar_path(tmp_path, "AAA", D), "AAA", D)
    np.testing.assert_array_equal(back.log_mid, b.log_mid)
    np.testing.assert_array_equal(back.sign, b.sign)
    np.testing.assert_array_equal(back.volume, b.volume)
    assert bar_path(tmp_path, "AAA", D).read_text().startswith("# impactlab-format v1\n")


def test_bar_file_with_wrong_columns(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("slot,mid,sign,volume\n0,1,0,0\n")
    with pytest.raises(IngestError):
        read_bars(p, "AAA", D)
