"""Synthetic markets built from the superposition price model.

Each stock's log-midpoint is the sum of the impacts of its own trades
(self kernel), the impacts of every other stock's trades (cross kernel) and
i.i.d. Gaussian noise::

    log m_i(t) = m_i0 + sum_{t'<t} G_self(t-t') f(v_i(t')) e_i(t')
                      + sum_{j!=i} sum_{t'<t} G_cross(t-t') g(v_j(t')) e_j(t')
                      + sum_{t'<t} eta_i(t')

Signs are thresholded fractional Gaussian noise sharing one market factor,
so self-correlators decay as power laws and cross-correlators are positive.
This generator is one admissible choice; nothing here claims it describes
real order flow.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .core import BarSeries, PairPanel, SessionGrid, align_pair, business_days
from .fits import fit_power_law
from .ingest import (FORMAT_HEADER, QuoteRecord, TickRecord, bar_path, tick_path,
                     write_bars, write_quotes, write_trades)
from .propagator import T_CUT, KernelParams, kernel_eval

log = logging.getLogger(__name__)

GENERATOR_LABEL = "thresholded fractional Gaussian noise with one market factor"
SIGN_FIT_RANGE = (10, 500)

# stream tags for the seed-splitting rule
_SIGNS, _COMMON, _VOLUME, _NOISE = 0, 1, 2, 3


def child_rng(seed: int, tag: int, stock: int, day: int) -> np.random.Generator:
    """Independent stream for (seed, kind of draw, stock index, day index)."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag, stock, day]))


# ---------------------------------------------------------------------------
# signs
# ---------------------------------------------------------------------------

def fgn_autocorrelation(hurst: float, lags) -> np.ndarray:
    k = np.abs(np.asarray(lags, dtype=float))
    h2 = 2.0 * hurst
    return 0.5 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)


def fgn_pair(hurst: float, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Two independent unit-variance fGn paths of length ``n`` (circulant embedding)."""
    m = 2 * n
    c = fgn_autocorrelation(hurst, np.arange(n + 1))
    row = np.concatenate((c, c[-2:0:-1]))
    lam = np.fft.fft(row).real
    lam[lam < 0] = 0.0  # round-off only; fGn embeddings are non-negative definite
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = np.fft.fft(np.sqrt(lam / m) * w)[:n]
    return y.real.copy(), y.imag.copy()


def _threshold_correlator(hurst: float, white: float, lags) -> np.ndarray:
    """Sign correlation of a thresholded latent with unit variance, lags >= 1."""
    rho = (1.0 - white) * fgn_autocorrelation(hurst, lags)
    return (2.0 / math.pi) * np.arcsin(rho)


def _fit_threshold(hurst: float, white: float, participation: float):
    lags = np.arange(SIGN_FIT_RANGE[0], SIGN_FIT_RANGE[1] + 1)
    vals = participation**2 * _threshold_correlator(hurst, white, lags)
    return fit_power_law((lags, vals), SIGN_FIT_RANGE)


def _bisect(fn, lo: float, hi: float, target: float, iters: int = 60) -> float:
    """Root of a monotone ``fn(x) = target`` on [lo, hi]."""
    flo = fn(lo) - target
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid) - target
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@lru_cache(maxsize=64)
def tune_latent(gamma: float, theta: float | None, participation: float) -> tuple[float, float]:
    """Hurst index and white-noise share reproducing the target sign law.

    The sign correlator of the thresholded process is known in closed form,
    so the exponent and amplitude of its power-law fit over lags 10..500
    are matched by bisection (Hurst index inside, white share outside).
    """
    if not 0 < gamma < 1:
        raise ValueError(f"gamma_self must lie in (0, 1) for long memory, got {gamma}")

    def hurst_for(white: float) -> float:
        return _bisect(lambda h: _fit_threshold(h, white, participation).exponent,
                       0.5 + 1e-6, 1 - 1e-6, gamma)

    if theta is None:
        return hurst_for(0.0), 0.0
    top = _fit_threshold(hurst_for(0.0), 0.0, participation).amplitude
    if not 0 < theta <= top:
        raise ValueError(f"theta_self must lie in (0, {top:.4g}] for participation {participation}")
    white = _bisect(lambda w: _fit_threshold(hurst_for(w), w, participation).amplitude,
                    0.0, 0.999, theta, iters=40)
    return hurst_for(white), white


@dataclass(frozen=True)
class SignProcessSpec:
    """Target sign law ``Theta_ii(tau) ~ theta_self * tau^-gamma_self``.

    ``theta_self=None`` keeps the largest amplitude the participation allows.
    ``cross_loading`` is the market-factor weight of every latent.
    """

    gamma_self: float = 0.8
    theta_self: float | None = None
    cross_loading: float = 0.3
    participation: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma_self:
            raise ValueError("gamma_self must be positive")
        if not 0 <= self.cross_loading < 1:
            raise ValueError("cross_loading must lie in [0, 1)")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must lie in (0, 1]")

    @property
    def latent(self) -> tuple[float, float]:
        return tune_latent(self.gamma_self, self.theta_self, self.participation)

    def correlators(self, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
        """Exact self and cross sign correlators on lags 0..max_lag."""
        hurst, white = self.latent
        lags = np.arange(max_lag + 1)
        rho = (1.0 - white) * fgn_autocorrelation(hurst, lags)
        rho[0] = 1.0
        p, r2 = self.participation, self.cross_loading**2
        self_c = p**2 * (2 / math.pi) * np.arcsin(rho)
        self_c[0] = p
        cross_c = p**2 * (2 / math.pi) * np.arcsin(r2 * rho)
        return self_c, cross_c

    def to_json(self) -> dict:
        hurst, white = self.latent
        return {"gamma_self": self.gamma_self, "theta_self": self.theta_self,
                "cross_loading": self.cross_loading, "participation": self.participation,
                "hurst": hurst, "white_share": white, "generator": GENERATOR_LABEL}


def gen_signs(spec: SignProcessSpec, n_stocks: int, slots: int, seed: int,
              day: int = 0) -> np.ndarray:
    """Signs of shape (n_stocks, slots) for one day."""
    hurst, white = spec.latent
    rho = spec.cross_loading
    cr = child_rng(seed, _COMMON, 0, day)
    common, _ = fgn_pair(hurst, slots, cr)
    if white:
        common = math.sqrt(1 - white) * common + math.sqrt(white) * cr.standard_normal(slots)
    out = np.empty((n_stocks, slots), dtype=np.int8)
    for i in range(n_stocks):
        rng = child_rng(seed, _SIGNS, i, day)
        idio, _ = fgn_pair(hurst, slots, rng)
        if white:
            idio = math.sqrt(1 - white) * idio + math.sqrt(white) * rng.standard_normal(slots)
        latent = rho * common + math.sqrt(1 - rho * rho) * idio
        s = np.where(latent >= 0, 1, -1).astype(np.int8)
        if spec.participation < 1:
            s[rng.random(slots) >= spec.participation] = 0
        out[i] = s
    return out


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VolumeLaw:
    """Log-normal trade volumes, ``log v ~ N(mu, sigma^2)``, and impact laws ``v^delta``."""

    mu: float = 0.0
    sigma: float = 1.1
    delta_self: float = 0.5
    delta_cross: float = 0.5

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def f(self, v):
        return np.asarray(v, float) ** self.delta_self

    def g(self, v):
        return np.asarray(v, float) ** self.delta_cross


def gen_volumes(law: VolumeLaw, slots: int, seed: int, stock: int = 0, day: int = 0) -> np.ndarray:
    """Raw (unnormalized) log-normal volumes for every slot."""
    rng = child_rng(seed, _VOLUME, stock, day)
    return np.exp(law.mu + law.sigma * rng.standard_normal(slots))


def normalize_panel_volumes(volumes: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Scale so the mean over all slots of all days is exactly one."""
    total = math.fsum(float(v.sum()) for v in volumes)
    n = sum(v.size for v in volumes)
    if total <= 0:
        return [np.zeros_like(v) for v in volumes]
    return [v * (n / total) for v in volumes]


# ---------------------------------------------------------------------------
# prices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    n_stocks: int = 10
    n_days: int = 50
    kernel_self: KernelParams = KernelParams(2e-6, 2e-4, 2.0, 0.35)
    kernel_cross: KernelParams = KernelParams(2e-7, 2e-5, 2.0, 0.35)
    sign_spec: SignProcessSpec = SignProcessSpec()
    volume_law: VolumeLaw = VolumeLaw()
    noise_std: float = 0.0
    initial_log_price: tuple[float, ...] = ()
    seed: int = 0
    slots: int = 22200
    burn_in: int = T_CUT
    start_date: dt.date = dt.date(2008, 1, 2)
    symbols: tuple[str, ...] = ()

    def __post_init__(self):
        if self.n_stocks < 2:
            raise ValueError("a synthetic market needs at least two stocks")
        if self.n_days < 1 or self.slots < 2 or self.burn_in < 0:
            raise ValueError("n_days >= 1, slots >= 2 and burn_in >= 0 required")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.initial_log_price and len(self.initial_log_price) != self.n_stocks:
            raise ValueError("one initial log price per stock")
        if self.symbols and len(self.symbols) != self.n_stocks:
            raise ValueError("one symbol per stock")

    @property
    def stock_names(self) -> tuple[str, ...]:
        return self.symbols or tuple(f"S{i:02d}" for i in range(self.n_stocks))

    def init_price(self, i: int) -> float:
        return self.initial_log_price[i] if self.initial_log_price else math.log(100.0)

    def to_json(self) -> dict:
        return {
            "n_stocks": self.n_stocks, "n_days": self.n_days,
            "kernel_self": self.kernel_self.to_json(),
            "kernel_cross": self.kernel_cross.to_json(),
            "sign_spec": self.sign_spec.to_json(),
            "volume_law": {"mu": self.volume_law.mu, "sigma": self.volume_law.sigma,
                           "delta_self": self.volume_law.delta_self,
                           "delta_cross": self.volume_law.delta_cross},
            "noise_std": self.noise_std,
            "initial_log_price": [self.init_price(i) for i in range(self.n_stocks)],
            "seed": self.seed, "slots": self.slots, "burn_in": self.burn_in,
            "start_date": self.start_date.isoformat(), "symbols": list(self.stock_names),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "SimConfig":
        ss = dict(d.get("sign_spec", {}))
        sign = SignProcessSpec(**{k: ss[k] for k in ("gamma_self", "theta_self", "cross_loading",
                                                     "participation") if k in ss})
        kw = dict(
            n_stocks=int(d.get("n_stocks", 10)), n_days=int(d.get("n_days", 50)),
            sign_spec=sign, noise_std=float(d.get("noise_std", 0.0)),
            seed=int(d.get("seed", 0)), slots=int(d.get("slots", 22200)),
            burn_in=int(d.get("burn_in", T_CUT)),
        )
        if "kernel_self" in d:
            kw["kernel_self"] = KernelParams.from_json(d["kernel_self"])
        if "kernel_cross" in d:
            kw["kernel_cross"] = KernelParams.from_json(d["kernel_cross"])
        if "volume_law" in d:
            kw["volume_law"] = VolumeLaw(**d["volume_law"])
        if d.get("initial_log_price"):
            kw["initial_log_price"] = tuple(float(x) for x in d["initial_log_price"])
        if "start_date" in d:
            kw["start_date"] = dt.date.fromisoformat(d["start_date"])
        if d.get("symbols"):
            kw["symbols"] = tuple(d["symbols"])
        return cls(**kw)


def _kernel_table(p: KernelParams, n: int) -> np.ndarray:
    """``G(0..n-1)`` with ``G(0) = 0``: a trade moves the price from the next slot on."""
    tab = np.zeros(n)
    tab[1:] = kernel_eval(p, np.arange(1, n))
    return tab


def propagate(kernel_table: np.ndarray, flow: np.ndarray, method: str = "auto") -> np.ndarray:
    """``out[t] = sum_{t'<t} G(t - t') flow[t']`` on the whole array."""
    n = flow.size
    nz = np.flatnonzero(flow)
    if method == "auto":
        method = "direct" if nz.size <= 64 else "fft"
    if method == "direct":
        out = np.zeros(n)
        for t in nz:
            out[t:] += kernel_table[: n - t] * flow[t]
        return out
    if method != "fft":
        raise ValueError(f"unknown method {method!r}")
    if nz.size == 0:
        return np.zeros(n)
    return fftconvolve(flow, kernel_table[:n])[:n]


def gen_prices(cfg: SimConfig, signs: np.ndarray, volumes: np.ndarray,
               noise: np.ndarray | None = None, method: str = "auto") -> np.ndarray:
    """Log-midpoints for arrays of shape (n_stocks, n) covering burn-in + session.

    The returned array has the same shape; callers drop the burn-in.
    """
    signs = np.asarray(signs)
    volumes = np.asarray(volumes, float)
    if signs.shape != volumes.shape or signs.ndim != 2:
        raise ValueError("signs and volumes must be aligned (n_stocks, slots) arrays")
    n_st, n = signs.shape
    law = cfg.volume_law
    g_self = _kernel_table(cfg.kernel_self, n)
    g_cross = _kernel_table(cfg.kernel_cross, n)
    traded = signs != 0
    f_flow = np.where(traded, law.f(volumes) * signs, 0.0)
    g_flow = np.where(traded, law.g(volumes) * signs, 0.0)
    market = g_flow.sum(axis=0)
    out = np.empty((n_st, n))
    for i in range(n_st):
        impact = propagate(g_self, f_flow[i], method)
        others = market - g_flow[i]
        if others.any():
            impact = impact + propagate(g_cross, others, method)
        if noise is not None:
            impact = impact + np.concatenate(([0.0], np.cumsum(noise[i][:-1])))
        out[i] = cfg.init_price(i) + impact
    return out


@dataclass(frozen=True, eq=False)
class SyntheticPanel:
    days: Mapping[str, tuple[BarSeries, ...]]
    ground_truth: SimConfig

    @property
    def stocks(self) -> tuple[str, ...]:
        return tuple(self.days)

    def pair(self, a: str, b: str) -> PairPanel:
        return align_pair(self.days[a], self.days[b])

    def pairs(self) -> dict[tuple[str, str], PairPanel]:
        return {(a, b): self.pair(a, b) for a in self.stocks for b in self.stocks if a != b}


def _day_signs(cfg: SimConfig, day: int) -> np.ndarray:
    return gen_signs(cfg.sign_spec, cfg.n_stocks, cfg.burn_in + cfg.slots, cfg.seed, day)


def simulate_panel(cfg: SimConfig) -> SyntheticPanel:
    """Generate every (stock, day) bar series.

    Volumes of a stock are normalized over the session slots of all days.
    A burn-in of ``burn_in`` slots before each session supplies the price
    history, so impacts of earlier trades are present from the first slot.
    """
    n_tot = cfg.burn_in + cfg.slots
    sess = slice(cfg.burn_in, n_tot)
    dates = business_days(cfg.start_date, cfg.n_days)

    def day_volumes(day, signs):
        return np.stack([np.where(signs[i] != 0, gen_volumes(cfg.volume_law, n_tot, cfg.seed, i, day), 0.0)
                         for i in range(cfg.n_stocks)])

    # first pass: volume totals per stock over the sessions
    totals = np.zeros(cfg.n_stocks)
    for d in range(cfg.n_days):
        vol = day_volumes(d, _day_signs(cfg, d))
        totals += [math.fsum(v) for v in vol[:, sess]]
    n_slots = cfg.n_days * cfg.slots
    scale = np.where(totals > 0, n_slots / np.where(totals > 0, totals, 1.0), 0.0)

    names = cfg.stock_names
    out: dict[str, list[BarSeries]] = {s: [] for s in names}
    for d in range(cfg.n_days):
        signs = _day_signs(cfg, d)
        vol = day_volumes(d, signs) * scale[:, None]
        noise = None
        if cfg.noise_std > 0:
            noise = np.stack([child_rng(cfg.seed, _NOISE, i, d).normal(0.0, cfg.noise_std, n_tot)
                              for i in range(cfg.n_stocks)])
        prices = gen_prices(cfg, signs, vol, noise)
        grid = SessionGrid(dates[d], cfg.slots)
        for i, s in enumerate(names):
            out[s].append(BarSeries(s, grid, prices[i, sess], signs[i, sess], vol[i, sess]))
    return SyntheticPanel({s: tuple(v) for s, v in out.items()}, cfg)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def bars_to_ticks(bars: BarSeries, tick: float = 0.01, share_unit: int = 100):
    """One trade per signed slot and a quote whenever the midpoint moves.

    Trade prices step one tick up for buys and one down for sells, so the
    tick test recovers every sign after the first trade of the day.
    """
    mids = np.exp(bars.log_mid)
    quotes = []
    last = None
    for t in range(bars.slots):
        m = float(mids[t])
        if m != last:
            quotes.append(QuoteRecord(t, m - tick / 2, m + tick / 2))
            last = m
    trades = []
    price = round(float(mids[0]), 2)
    for t in np.flatnonzero(bars.sign):
        price = round(max(price + tick * int(bars.sign[t]), tick), 2)
        shares = max(1, int(round(float(bars.volume[t]) * share_unit)))
        trades.append(TickRecord(int(t), price, shares))
    return trades, quotes


def write_panel(panel: SyntheticPanel, tick_dir: Path | None = None, bar_dir: Path | None = None,
                truth_path: Path | None = None) -> dict:
    """Write tick files, bar files and the ground-truth JSON (each optional)."""
    n = 0
    for d in (tick_dir, bar_dir):
        if d is not None:
            Path(d).mkdir(parents=True, exist_ok=True)
    for stock, days in panel.days.items():
        for b in days:
            if bar_dir is not None:
                write_bars(bar_path(bar_dir, stock, b.date), b)
            if tick_dir is not None:
                trades, quotes = bars_to_ticks(b)
                write_trades(tick_path(tick_dir, stock, b.date, "trades"), trades)
                write_quotes(tick_path(tick_dir, stock, b.date, "quotes"), quotes)
            n += 1
    if truth_path is not None:
        truth = {"format": FORMAT_HEADER.lstrip("# "), "generator": GENERATOR_LABEL,
                 "ground_truth": panel.ground_truth.to_json()}
        Path(truth_path).write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    return {"series": n, "stocks": len(panel.days)}
