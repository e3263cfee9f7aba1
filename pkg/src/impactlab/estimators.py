"""Empirical response functions, sign correlators and price diffusion.

All time averages pool every qualifying slot of every day with equal weight
and never let a lag straddle two sessions. Lagged sums are evaluated per
day either by FFT correlation (default) or by an explicit loop over lags
(``method="direct"``); both give the same result to rounding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import fft as sfft

from .core import LagCurve, PairPanel
from .fits import PowerLawFit

FORMAT_HEADER = "# impactlab-format v1"

SCENARIOS = ("self", "I-passive", "I-active", "II-passive", "II-active")
# scenario -> (price side, sign side, volume side) within a PairPanel (a=i, b=j)
_SCENARIO_SIDES = {
    "self": ("a", "a", "a"),
    "I-passive": ("a", "b", "a"),
    "II-passive": ("a", "b", "b"),
    "I-active": ("b", "a", "b"),
    "II-active": ("b", "a", "a"),
}


@dataclass(frozen=True, eq=False)
class ResponseSet:
    pair: tuple[str, str]
    curve: LagCurve

    @property
    def count(self):
        return self.curve.counts


@dataclass(frozen=True, eq=False)
class CorrelatorSet:
    stocks: tuple[str, ...]
    curve: LagCurve
    kind: str = "cross"


@dataclass(frozen=True, eq=False)
class VolumeProfile:
    """Mean response at a fixed lag, conditioned on binned traded volume."""

    bin_edges: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    centers: np.ndarray
    response: np.ndarray
    count: np.ndarray
    density: np.ndarray
    volumes: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))
    scenario: str = "self"
    tau: int = 1


@dataclass(frozen=True, eq=False)
class DiffusionSet:
    stock: str
    curve: LagCurve
    per_pair: dict = field(default_factory=dict)


@dataclass(frozen=True)
class VolumeImpactConstants:
    f_self_passive: float
    f_self_active: float
    g_cross_passive: float
    g_cross_active: float

    def __post_init__(self):
        for k, v in vars(self).items():
            if not v >= 0:
                raise ValueError(f"{k} must be non-negative, got {v}")


@dataclass(frozen=True)
class VolumeProducts:
    LL: float
    II: float
    LI: float
    IL: float


# ---------------------------------------------------------------------------
# per-day lagged sums
# ---------------------------------------------------------------------------

def _xcorr(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    """``c[k] = sum_t a[t] * b[t + k]`` for ``k = 0..max_lag`` (zero padded)."""
    n = a.size + b.size - 1
    nfft = sfft.next_fast_len(n, real=True)
    fa = sfft.rfft(a, nfft)
    fb = sfft.rfft(b, nfft)
    c = sfft.irfft(np.conj(fa) * fb, nfft)
    k = min(max_lag, a.size - 1)
    out = np.zeros(max_lag + 1)
    out[: k + 1] = c[: k + 1]
    return out


def _xcorr_direct(a: np.ndarray, b: np.ndarray, max_lag: int) -> np.ndarray:
    n = a.size
    out = np.zeros(max_lag + 1)
    for k in range(min(max_lag, n - 1) + 1):
        out[k] = np.dot(a[: n - k], b[k:])
    return out


def _centered(x: np.ndarray, t0: int) -> np.ndarray:
    """Log-mid shifted by its in-session mean; zero before ``t0``."""
    out = np.zeros(x.size)
    if t0 < x.size:
        seg = x[t0:]
        out[t0:] = seg - seg.mean()
    return out


def _lag_counts(n: int, t0: int, max_lag: int) -> np.ndarray:
    lags = np.arange(max_lag + 1)
    return np.maximum(0, n - lags - t0)


def _response_day(price, sign, max_lag: int, method: str):
    """Sum over t of ``r(t, tau) * sign(t)`` and the number of signed slots."""
    n = price.slots
    t0 = price.first_valid
    a = sign.sign.astype(float)
    a[:t0] = 0.0
    x = _centered(price.log_mid, t0)
    if method == "direct":
        sums = np.zeros(max_lag + 1)
        for k in range(1, min(max_lag, n - 1) + 1):
            sums[k] = np.dot(a[: n - k], x[k:] - x[: n - k])
    else:
        lead = _xcorr(a, x, max_lag)
        prefix = np.concatenate(([0.0], np.cumsum(a * x)))
        stop = np.maximum(n - np.arange(max_lag + 1), 0)
        sums = lead - prefix[stop]
    signed = np.concatenate(([0], np.cumsum(a != 0)))
    counts = signed[np.maximum(n - np.arange(max_lag + 1), 0)]
    return sums, counts


def _diffusion_day(sx, sy, max_lag: int, method: str):
    n = sx.slots
    t0 = max(sx.first_valid, sy.first_valid)
    x = _centered(sx.log_mid, t0)
    y = _centered(sy.log_mid, t0)
    counts = _lag_counts(n, t0, max_lag)
    if method == "direct":
        sums = np.zeros(max_lag + 1)
        for k in range(1, min(max_lag, n - 1 - t0) + 1):
            sums[k] = np.dot(x[t0 + k:] - x[t0: n - k], y[t0 + k:] - y[t0: n - k])
        return sums, counts
    xy = x * y
    prefix = np.concatenate(([0.0], np.cumsum(xy)))
    lags = np.arange(max_lag + 1)
    lo = np.minimum(t0 + lags, n)
    hi = np.maximum(n - lags, t0)
    late = prefix[n] - prefix[lo]  # sum_{u >= t0 + tau} xy(u)
    early = prefix[hi] - prefix[t0]  # sum_{t0 <= t < n - tau} xy(t)
    cross = _xcorr(y, x, max_lag) + _xcorr(x, y, max_lag)
    sums = np.where(counts > 0, late + early - cross, 0.0)
    sums[0] = 0.0
    return sums, counts


def _sign_xcorr_day(si, sj, max_lag: int, method: str):
    """Integer sums of ``sign_i(t + tau) * sign_j(t)`` for tau in [-T, T]."""
    n = si.slots
    t0 = max(si.first_valid, sj.first_valid)
    ai = si.sign.astype(float)
    aj = sj.sign.astype(float)
    ai[:t0] = 0.0
    aj[:t0] = 0.0
    corr = _xcorr_direct if method == "direct" else _xcorr
    pos = np.rint(corr(aj, ai, max_lag)).astype(np.int64)
    neg = np.rint(corr(ai, aj, max_lag)).astype(np.int64)
    counts = _lag_counts(n, t0, max_lag)
    return pos, neg, counts


def _pooled_curve(sums, counts, min_lag: int) -> LagCurve:
    """Divide pooled sums by counts, dropping the tail of lags with no data."""
    sums = np.asarray(sums)[min_lag:]
    counts = np.asarray(counts)[min_lag:]
    ok = counts > 0
    if not ok.any():
        raise ValueError("no qualifying slots at any lag")
    # counts never increase with the lag, so empty lags form a tail
    last = int(np.count_nonzero(ok)) - 1
    sums, counts = sums[: last + 1], counts[: last + 1]
    return LagCurve(min_lag, sums / counts, counts)


def _check_method(method: str):
    if method not in ("fft", "direct"):
        raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# response, correlators, diffusion
# ---------------------------------------------------------------------------

def cross_response(panel: PairPanel, T_max: int = 3000, method: str = "fft") -> ResponseSet:
    """R_ij(tau): mean lagged log-return of stock a after a signed trade of b.

    Slots where b did not trade (sign 0) are not observations and are
    skipped.
    """
    _check_method(method)
    if len(panel) == 0:
        raise ValueError("empty panel")
    sums = np.zeros(T_max + 1)
    counts = np.zeros(T_max + 1, dtype=np.int64)
    for a, b in panel:
        s, c = _response_day(a, b, T_max, method)
        sums += s
        counts += c
    return ResponseSet(panel.stocks, _pooled_curve(sums, counts, 1))


def self_response(days, T_max: int = 3000, method: str = "fft") -> ResponseSet:
    panel = PairPanel(tuple(days), tuple(days))
    return cross_response(panel, T_max, method)


def two_sided_correlator(panel: PairPanel, T_max: int = 3000, method: str = "fft"):
    """Theta_ab(tau) = <sign_a(t + tau) sign_b(t)> for tau in [-T_max, T_max].

    Returns ``(lags, values, counts)``. Numerators are exact integers, so
    swapping the two stocks mirrors the result bit for bit.
    """
    _check_method(method)
    pos = np.zeros(T_max + 1, dtype=np.int64)
    neg = np.zeros(T_max + 1, dtype=np.int64)
    counts = np.zeros(T_max + 1, dtype=np.int64)
    for a, b in panel:
        p, q, c = _sign_xcorr_day(a, b, T_max, method)
        pos += p
        neg += q
        counts += c
    if counts[0] == 0:
        raise ValueError("no qualifying slots")
    keep = counts > 0
    top = int(np.flatnonzero(keep)[-1])
    pos, neg, counts = pos[: top + 1], neg[: top + 1], counts[: top + 1]
    lags = np.arange(-top, top + 1)
    num = np.concatenate((neg[:0:-1], pos))
    cnt = np.concatenate((counts[:0:-1], counts))
    return lags, num / cnt, cnt


def sign_correlator(panel: PairPanel, T_max: int = 3000, kind: str = "cross",
                    method: str = "fft") -> CorrelatorSet:
    """Theta_ab(tau) for tau >= 0. Zero signs stay in the average."""
    lags, vals, cnt = two_sided_correlator(panel, T_max, method)
    zero = int(np.flatnonzero(lags == 0)[0])
    curve = LagCurve(0, vals[zero:], cnt[zero:])
    a, b = panel.stocks
    stocks = (a,) if kind == "self" else (a, b)
    return CorrelatorSet(stocks, curve, kind)


def self_correlator(days, T_max: int = 3000, method: str = "fft") -> CorrelatorSet:
    panel = PairPanel(tuple(days), tuple(days))
    return sign_correlator(panel, T_max, "self", method)


def _common_support(curves: Sequence[LagCurve]) -> tuple[int, int]:
    lo = max(c.min_lag for c in curves)
    hi = min(c.max_lag for c in curves)
    if hi < lo:
        raise ValueError("curves share no common lag")
    return lo, hi


def mean_curve(curves: Sequence[LagCurve]) -> LagCurve:
    if not curves:
        raise ValueError("no curves to average")
    lo, hi = _common_support(curves)
    vals = np.mean([c.restrict(lo, hi).values for c in curves], axis=0)
    return LagCurve(lo, vals)


def average_over_partners(curves: Mapping[tuple[str, str], LagCurve], stock: str,
                          mode: str) -> LagCurve:
    """Unweighted mean of pair curves over partners, self excluded.

    ``curves[(i, j)]`` holds the statistic with impacted/leading stock ``i``
    and impacting/lagging stock ``j``. ``passive`` averages ``(stock, j)``
    over ``j``; ``active`` averages ``(j, stock)``.
    """
    if mode == "passive":
        picked = [curves[k] for k in sorted(curves) if k[0] == stock and k[1] != stock]
    elif mode == "active":
        picked = [curves[k] for k in sorted(curves) if k[1] == stock and k[0] != stock]
    else:
        raise ValueError(f"mode must be passive or active, got {mode!r}")
    if not picked:
        raise ValueError(f"{stock} has no partner curves")
    return mean_curve(picked)


def pair_diffusion(panel: PairPanel, T_max: int = 1000, method: str = "fft") -> LagCurve:
    """D_ab(tau) = <r_a(t, tau) r_b(t, tau)>_t, for tau >= 1."""
    _check_method(method)
    sums = np.zeros(T_max + 1)
    counts = np.zeros(T_max + 1, dtype=np.int64)
    for a, b in panel:
        s, c = _diffusion_day(a, b, T_max, method)
        sums += s
        counts += c
    return _pooled_curve(sums, counts, 1)


def avg_diffusion(panels: Sequence[PairPanel], T_max: int = 1000,
                  method: str = "fft") -> DiffusionSet:
    """Partner-averaged diffusion of the stock on side ``a`` of every panel."""
    if not panels:
        raise ValueError("no partner panels")
    stock = panels[0].stocks[0]
    per_pair = {}
    for p in panels:
        if p.stocks[0] != stock:
            raise ValueError("all panels must share the impacted stock")
        per_pair[p.stocks[1]] = pair_diffusion(p, T_max, method)
    curve = mean_curve([per_pair[k] for k in sorted(per_pair)])
    return DiffusionSet(stock, curve, per_pair)


def diffusion_scaling(curve: LagCurve) -> LagCurve:
    """``sqrt(|D(tau)| / tau)``: flat for normal diffusion."""
    c = curve if curve.min_lag >= 1 else curve.restrict(1, curve.max_lag)
    return LagCurve(c.min_lag, np.sqrt(np.abs(c.values) / c.lags), c.counts)


def per_share_response(avg_response: LagCurve, constant: float) -> LagCurve:
    if not constant > 0:
        raise ValueError(f"volume-impact constant must be positive, got {constant}")
    return avg_response.map(lambda v: v / constant)


# ---------------------------------------------------------------------------
# volume dependence
# ---------------------------------------------------------------------------

def _scenario_samples(panel: PairPanel, scenario: str, tau: int):
    price_side, sign_side, vol_side = _SCENARIO_SIDES[scenario]
    prods, vols, all_vols = [], [], []
    for a, b in panel:
        sides = {"a": a, "b": b}
        p, s, v = sides[price_side], sides[sign_side], sides[vol_side]
        n = p.slots
        if tau >= n:
            continue
        t = np.arange(n - tau)
        ok = (s.sign[: n - tau] != 0) & (t >= p.first_valid) & (v.volume[: n - tau] > 0)
        r = p.log_mid[tau:] - p.log_mid[: n - tau]
        prods.append((r * s.sign[: n - tau])[ok])
        vols.append(v.volume[: n - tau][ok])
        all_vols.append(v.volume[v.volume > 0])
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)
    return cat(prods), cat(vols), cat(all_vols)


def volume_conditioned_response(panels, scenario: str = "self", tau: int = 1,
                                bins=20) -> VolumeProfile:
    """Mean of ``r(t, tau) * sign(t)`` per bin of the conditioning volume.

    ``bins`` is a number of logarithmic bins spanning the observed non-zero
    volumes, or an explicit increasing array of edges. Several panels are
    pooled slot by slot. Empty bins are left out.
    """
    if scenario not in _SCENARIO_SIDES:
        raise ValueError(f"unknown scenario {scenario!r}")
    if isinstance(panels, PairPanel):
        panels = [panels]
    parts = [_scenario_samples(p, scenario, tau) for p in panels]
    prods = np.concatenate([x[0] for x in parts])
    vols = np.concatenate([x[1] for x in parts])
    all_vols = np.concatenate([x[2] for x in parts])
    if vols.size == 0:
        raise ValueError("no signed slots with non-zero volume")
    if np.ndim(bins) == 0:
        lo, hi = all_vols.min(), all_vols.max()
        if lo == hi:
            edges = np.array([lo * (1 - 1e-9), hi * (1 + 1e-9)])
        else:
            edges = np.geomspace(lo, hi, int(bins) + 1)
            edges[-1] = np.nextafter(hi, np.inf)
    else:
        edges = np.asarray(bins, dtype=float)
    if np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must increase")
    idx = np.searchsorted(edges, vols, side="right") - 1
    inside = (idx >= 0) & (idx < edges.size - 1)
    nb = edges.size - 1
    count = np.bincount(idx[inside], minlength=nb)
    total = np.bincount(idx[inside], weights=prods[inside], minlength=nb)
    hist, _ = np.histogram(all_vols, bins=edges)
    width = np.diff(edges)
    density = hist / (hist.sum() * width) if hist.sum() else np.zeros(nb)
    keep = count > 0
    lo, hi = edges[:-1][keep], edges[1:][keep]
    centers = np.sqrt(lo * hi) if (lo > 0).all() else 0.5 * (lo + hi)
    return VolumeProfile(
        bin_edges=edges, lo=lo, hi=hi, centers=centers,
        response=total[keep] / count[keep], count=count[keep], density=density[keep],
        volumes=vols[inside], scenario=scenario, tau=tau,
    )


def _mean_impact(fit: PowerLawFit, v: np.ndarray, v_max: float) -> float:
    q = v[(v > 0) & (v <= v_max)]
    if q.size == 0:
        raise ValueError(f"no volumes in (0, {v_max}]")
    return float(np.mean(fit(q)))


def volume_impact_constants(profiles: Mapping[str, VolumeProfile],
                            fits: Mapping[str, PowerLawFit],
                            v_max: float = 1.0) -> VolumeImpactConstants:
    """Average fitted volume impact ``c * v**delta`` over observed ``v <= v_max``.

    Keys are the scenario names ``I-passive``, ``I-active``, ``II-passive``
    and ``II-active``.
    """
    def const(key):
        return _mean_impact(fits[key], profiles[key].volumes, v_max)

    return VolumeImpactConstants(
        f_self_passive=const("I-passive"),
        f_self_active=const("I-active"),
        g_cross_passive=const("II-passive"),
        g_cross_active=const("II-active"),
    )


def volume_product_averages(panels: Sequence[PairPanel],
                            fits: Mapping[str, PowerLawFit],
                            v_max: float = 1.0) -> VolumeProducts:
    """Time-then-partner means of products of fitted volume impacts.

    Each panel has the studied stock i on side ``a`` and a partner j on
    side ``b``. Only slots whose involved volumes lie in ``(0, v_max]``
    enter a mean.
    """
    f_i, f_j = fits["I-passive"], fits["I-active"]
    g_i, g_j = fits["II-passive"], fits["II-active"]

    def fn(fit, v):
        return fit(v)

    acc = {k: [] for k in ("LL", "II", "LI", "IL")}
    for p in panels:
        vi = np.concatenate([a.volume for a, _ in p])
        vj = np.concatenate([b.volume for _, b in p])
        qi = (vi > 0) & (vi <= v_max)
        qj = (vj > 0) & (vj <= v_max)
        both = qi & qj
        if both.any():
            acc["LL"].append(np.mean(fn(f_i, vi[both]) * fn(f_j, vj[both])))
            acc["II"].append(np.mean(fn(g_i, vj[both]) * fn(g_j, vi[both])))
        if qi.any():
            acc["LI"].append(np.mean(fn(f_i, vi[qi]) * fn(g_j, vi[qi])))
        if qj.any():
            acc["IL"].append(np.mean(fn(g_i, vj[qj]) * fn(f_j, vj[qj])))
    for k, v in acc.items():
        if not v:
            raise ValueError(f"no qualifying slots for V^({k})")
    return VolumeProducts(**{k: float(np.mean(v)) for k, v in acc.items()})


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def write_curve_csv(path: Path, curve: LagCurve):
    counts = curve.counts
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write("tau,value,count\n")
        for k, (tau, val) in enumerate(zip(curve.lags, curve.values)):
            c = "" if counts is None else str(int(counts[k]))
            fh.write(f"{tau},{_fmt(val)},{c}\n")


def read_curve_csv(path: Path) -> LagCurve:
    with open(path, encoding="utf-8") as fh:
        rows = [ln.rstrip("\n").split(",") for ln in fh if not ln.startswith("#")]
    if not rows or rows[0] != ["tau", "value", "count"]:
        raise ValueError(f"{path}: not a curve file")
    rows = rows[1:]
    lags = [int(r[0]) for r in rows]
    if lags != list(range(lags[0], lags[0] + len(lags))):
        raise ValueError(f"{path}: lags must be contiguous")
    vals = [float(r[1]) for r in rows]
    counts = None if rows[0][2] == "" else [int(r[2]) for r in rows]
    return LagCurve(lags[0], np.array(vals), None if counts is None else np.array(counts))


def curve_to_json(curve: LagCurve) -> dict:
    d = {"min_lag": curve.min_lag, "values": [float(v) for v in curve.values]}
    if curve.counts is not None:
        d["counts"] = [int(c) for c in curve.counts]
    return d


def write_curve_json(path: Path, curve: LagCurve):
    Path(path).write_text(json.dumps(curve_to_json(curve)) + "\n", encoding="utf-8")


def write_profile_csv(path: Path, prof: VolumeProfile):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write("v_lo,v_hi,v_center,response,count,density\n")
        for row in zip(prof.lo, prof.hi, prof.centers, prof.response, prof.count, prof.density):
            lo, hi, c, r, n, d = row
            fh.write(f"{_fmt(lo)},{_fmt(hi)},{_fmt(c)},{_fmt(r)},{int(n)},{_fmt(d)}\n")
