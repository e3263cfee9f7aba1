import datetime as dt
import sys

import numpy as np
import pytest

from impactlab.core import BarSeries, PairPanel, SessionGrid, business_days


def random_bars(stock, date, slots, rng, *, lead_nan=0, p_trade=0.6, step=1e-3):
    """Random-walk log-mid with i.i.d. signs; the first ``lead_nan`` mids are unknown."""
    log_mid = np.log(50.0) + np.cumsum(rng.normal(0.0, step, slots))
    log_mid[:lead_nan] = np.nan
    sign = rng.choice([-1, 1], slots) * (rng.random(slots) < p_trade)
    volume = np.where(sign != 0, rng.lognormal(0.0, 1.0, slots), 0.0)
    return BarSeries(stock, SessionGrid(date, slots), log_mid, sign.astype(np.int8), volume)


def random_panel(rng, n_days=3, slots=1000, max_lead=0, stocks=("AAA", "BBB")):
    dates = business_days(dt.date(2008, 1, 2), n_days)
    a, b = [], []
    for d in dates:
        a.append(random_bars(stocks[0], d, slots, rng, lead_nan=int(rng.integers(0, max_lead + 1))))
        b.append(random_bars(stocks[1], d, slots, rng, lead_nan=int(rng.integers(0, max_lead + 1))))
    return PairPanel(tuple(a), tuple(b))


@pytest.fixture
def rng():
    return np.random.default_rng(20080102)


@pytest.fixture
def panel(rng):
    return random_panel(rng, n_days=3, slots=1000, max_lead=25)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
