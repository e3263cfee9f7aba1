"""Kernel calibration by seeded random search, weight scans and diffusion ranking.

The search is best-of-N: global proposals drawn log-uniformly for tau0 and
Gamma0 and uniformly for beta and Gamma, interleaved with local
multiplicative perturbations of the incumbent whose step size adapts to the
recent success rate. Objective evaluations are pure, so a fixed seed gives a
bit-identical result.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Mapping, Sequence, TypeVar

import numpy as np

from .core import LagCurve
from .fits import chi2_normalized
from .propagator import KernelParams, ScenarioIIIConfig, SignMatrix, volume_constants_for

log = logging.getLogger(__name__)

PAPER_WEIGHTS = (0.1, 0.3, 0.5, 0.7, 0.9)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Parameter box, iteration budget and seed of one calibration."""

    gamma_perm: tuple[float, float] = (0.0, 1e-3)
    gamma_temp: tuple[float, float] = (1e-6, 1e-2)
    tau0: tuple[float, float] = (1e-5, 1e3)
    beta: tuple[float, float] = (0.01, 2.0)
    budget: int = 20000
    seed: int = 0
    global_every: int = 10  # every n-th proposal after the warm-up is global
    warmup: float = 0.1  # share of the budget spent on global proposals first
    allow_negative: bool = False
    profile_linear: bool = True

    def __post_init__(self):
        for name in ("gamma_perm", "gamma_temp", "tau0", "beta"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ValueError(f"range of {name} must be finite with lo <= hi")
        if self.budget < 1:
            raise ValueError("budget must be at least 1")
        if not self.allow_negative:
            if self.gamma_temp[0] <= 0 or self.tau0[0] <= 0:
                raise ValueError("gamma_temp and tau0 ranges are log-scaled and must be positive")
            if self.gamma_perm[0] < 0 or self.beta[0] < 0:
                raise ValueError("negative gamma_perm/beta need allow_negative=True")
        elif self.tau0[0] <= 0:
            raise ValueError("tau0 must stay positive")

    def contains(self, p: KernelParams) -> bool:
        return all(lo <= v <= hi for v, (lo, hi) in (
            (p.gamma_perm, self.gamma_perm), (p.gamma_temp, self.gamma_temp),
            (p.tau0, self.tau0), (p.beta, self.beta)))

    def to_json(self) -> dict:
        return {"gamma_perm": list(self.gamma_perm), "gamma_temp": list(self.gamma_temp),
                "tau0_s": list(self.tau0), "beta": list(self.beta),
                "budget": self.budget, "seed": self.seed}


@dataclass(frozen=True)
class CalibrationResult:
    best: KernelParams
    chi2_response: float
    scenario: str
    mode: str = "passive"
    weight: float | None = None
    chi2_diffusion: float | None = None
    trace: tuple[tuple[int, float], ...] = ()
    iterations: int = 0
    seed: int = 0

    def to_json(self) -> dict:
        return {"scenario": self.scenario, "mode": self.mode, "w": self.weight,
                "params": self.best.to_json(), "chi2_response": self.chi2_response,
                "chi2_diffusion": self.chi2_diffusion, "iterations": self.iterations,
                "seed": self.seed}


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinearKernelModel:
    """Theoretical curve ``offset + scale * A G(params)``.

    The curve is linear in ``(gamma_temp, gamma_perm)``: with
    ``h = (1 + (tau/tau0)^2)^(-beta/2)`` it is
    ``offset + gamma_temp * scale * A h + gamma_perm * scale * A 1``.
    """

    empirical: np.ndarray
    matrix: SignMatrix
    offset: np.ndarray | None = None
    scale: float = 1.0

    @cached_property
    def _lags(self) -> np.ndarray:
        return np.arange(1, self.matrix.t_cut + 1, dtype=float)

    @cached_property
    def _ones(self) -> np.ndarray:
        return self.scale * self.matrix.entries.sum(axis=1)

    @cached_property
    def _target(self) -> np.ndarray:
        return self.empirical if self.offset is None else self.empirical - self.offset

    @cached_property
    def _norm(self) -> float:
        d = float(np.dot(self.empirical, self.empirical))
        if d == 0.0:
            raise ValueError("empirical curve is identically zero")
        return d

    def shape(self, tau0: float, beta: float) -> np.ndarray:
        t = self._lags / tau0
        return self.scale * self.matrix.fast_matvec(np.exp(-0.5 * beta * np.log1p(t * t)))

    def curve(self, p: KernelParams) -> np.ndarray:
        out = p.gamma_temp * self.shape(p.tau0, p.beta) + p.gamma_perm * self._ones
        return out if self.offset is None else out + self.offset

    def chi2(self, p: KernelParams) -> float:
        d = self._target - p.gamma_temp * self.shape(p.tau0, p.beta) - p.gamma_perm * self._ones
        val = float(np.dot(d, d)) / self._norm
        return val if math.isfinite(val) else math.inf

    def best_amplitudes(self, tau0: float, beta: float, space: "SearchSpace") -> tuple[float, float, float]:
        """Box-constrained least squares for ``(gamma_temp, gamma_perm)``."""
        a, b, y = self.shape(tau0, beta), self._ones, self._target
        aa, ab, bb = np.dot(a, a), np.dot(a, b), np.dot(b, b)
        ay, by = np.dot(a, y), np.dot(b, y)
        (alo, ahi), (blo, bhi) = space.gamma_temp, space.gamma_perm

        def clip(x, lo, hi):
            return min(max(x, lo), hi)

        cands = []
        det = aa * bb - ab * ab
        if det > 1e-300 * max(aa * bb, 1e-300):
            x, z = (ay * bb - by * ab) / det, (by * aa - ay * ab) / det
            if alo <= x <= ahi and blo <= z <= bhi:
                cands.append((x, z))
        for z in (blo, bhi):
            cands.append((clip((ay - z * ab) / aa if aa > 0 else alo, alo, ahi), z))
        for x in (alo, ahi):
            cands.append((x, clip((by - x * ab) / bb if bb > 0 else blo, blo, bhi)))
        yy = np.dot(y, y)
        best = None
        for x, z in cands:
            sse = yy - 2 * x * ay - 2 * z * by + x * x * aa + 2 * x * z * ab + z * z * bb
            if best is None or sse < best[2]:
                best = (x, z, sse)
        return best


# ---------------------------------------------------------------------------
# proposals
# ---------------------------------------------------------------------------

_NAMES = ("gamma_perm", "gamma_temp", "tau0", "beta")


def _is_log(space: SearchSpace, name: str) -> bool:
    lo, _ = getattr(space, name)
    return name in ("gamma_temp", "tau0") and lo > 0


def _global(space: SearchSpace, rng: np.random.Generator) -> np.ndarray:
    x = np.empty(4)
    for k, name in enumerate(_NAMES):
        lo, hi = getattr(space, name)
        if _is_log(space, name):
            x[k] = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            x[k] = rng.uniform(lo, hi)
    return x


def _local(space: SearchSpace, x: np.ndarray, step: float, rng: np.random.Generator) -> np.ndarray:
    y = x.copy()
    z = rng.standard_normal(4)
    for k, name in enumerate(_NAMES):
        lo, hi = getattr(space, name)
        if _is_log(space, name):
            y[k] = x[k] * math.exp(step * z[k])
        else:
            scale = max(abs(x[k]), 1e-4 * (hi - lo))
            y[k] = x[k] + step * scale * z[k]
        y[k] = min(max(y[k], lo), hi)
    return y


def _params(x: np.ndarray) -> KernelParams:
    return KernelParams(float(x[0]), float(x[1]), float(x[2]), float(x[3]))


def random_search(objective, space: SearchSpace, scenario: str = "custom",
                  mode: str = "passive", weight: float | None = None) -> CalibrationResult:
    """Minimize ``objective`` over ``space``; deterministic under ``space.seed``.

    ``objective`` is a callable on :class:`KernelParams` or a
    :class:`LinearKernelModel`. For the latter, with ``space.profile_linear``
    set, each proposal's amplitudes are replaced by their constrained
    least-squares optimum, so the search effectively runs over (tau0, beta).
    """
    rng = np.random.default_rng(space.seed)
    model = objective if isinstance(objective, LinearKernelModel) else None
    profile = model is not None and space.profile_linear
    fn = model.chi2 if model is not None else objective
    n_warm = max(1, int(space.budget * space.warmup))
    best_x, best_f = None, math.inf
    trace: list[tuple[int, float]] = []
    step, tried, wins = 0.5, 0, 0
    for it in range(space.budget):
        use_global = best_x is None or it < n_warm or (it - n_warm) % space.global_every == 0
        x = _global(space, rng) if use_global else _local(space, best_x, step, rng)
        if profile:
            x[1], x[0], _ = model.best_amplitudes(x[2], x[3], space)
        f = fn(_params(x))
        improved = math.isfinite(f) and f < best_f
        if improved:
            best_x, best_f = x, f
            trace.append((it, f))
        if not use_global:
            tried += 1
            wins += improved
            if tried == 40:
                step *= 1.5 if wins > 8 else 1 / 1.5
                if step < 1e-7:
                    step = 0.5
                step = min(step, 2.0)
                tried = wins = 0
    if best_x is None:
        raise CalibrationError(f"no finite chi^2 in {space.budget} iterations")
    return CalibrationResult(_params(best_x), float(best_f), scenario, mode, weight,
                             None, tuple(trace), space.budget, space.seed)


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def response_model(empirical: LagCurve, matrix: SignMatrix) -> LinearKernelModel:
    """Per-share response against ``A G(params)`` (Scenarios I and II)."""
    return LinearKernelModel(empirical.restrict(1, matrix.t_cut).values, matrix)


def scenario3_model(empirical: LagCurve, cfg: ScenarioIIIConfig, mode: str) -> LinearKernelModel:
    """Average response against ``w R_I <f> + A_II G(params) <g>``."""
    f, g = volume_constants_for(cfg.constants, mode)
    matrix = cfg.scenario2_matrices[mode]
    n = matrix.t_cut
    offset = cfg.weight * f * cfg.scenario1[mode].restrict(1, n).values
    return LinearKernelModel(empirical.restrict(1, n).values, matrix, offset, g)


def calibrate_scenario(empirical: LagCurve, matrix_inputs, space: SearchSpace,
                       scenario: str, mode: str = "passive") -> CalibrationResult:
    """Fit kernel parameters of one scenario.

    ``matrix_inputs`` is a :class:`SignMatrix` for Scenarios I and II
    (``empirical`` is then a per-share response) and a
    :class:`ScenarioIIIConfig` for Scenario III (``empirical`` is the plain
    average response).
    """
    if scenario in ("I", "II"):
        if not isinstance(matrix_inputs, SignMatrix):
            raise TypeError("Scenarios I and II calibrate against a SignMatrix")
        if not empirical.covers(1, matrix_inputs.t_cut):
            raise ValueError("empirical curve must cover lags 1..T_cut")
        obj = response_model(empirical, matrix_inputs)
        weight = None
    elif scenario == "III":
        if not isinstance(matrix_inputs, ScenarioIIIConfig):
            raise TypeError("Scenario III calibrates against a ScenarioIIIConfig")
        obj = scenario3_model(empirical, matrix_inputs, mode)
        weight = matrix_inputs.weight
    else:
        raise ValueError(f"scenario must be I, II or III, got {scenario!r}")
    res = random_search(obj, space, scenario, mode, weight)
    log.info("scenario %s %s w=%s: chi2=%.4g %s", scenario, mode, weight,
             res.chi2_response, res.best)
    return res


def scan_weights(template: ScenarioIIIConfig, weights: Sequence[float], empirical: LagCurve,
                 space: SearchSpace, mode: str = "passive") -> list[CalibrationResult]:
    """One Scenario III calibration per weight, ordered by weight.

    The Scenario I curves in ``template`` stay fixed; only the Scenario II
    kernel of ``mode`` is refitted.
    """
    out = []
    for w in sorted(weights):
        cfg = ScenarioIIIConfig(w, template.constants, template.scenario1,
                                template.scenario2_kernels, template.scenario2_matrices)
        out.append(calibrate_scenario(empirical, cfg, space, "III", mode))
    return out


T = TypeVar("T")


def rank_by_diffusion(candidates: Sequence[T], empirical_scaling: LagCurve,
                      theory: Callable[[T], LagCurve]) -> list[tuple[T, float]]:
    """Candidates ordered by chi^2 between empirical and theoretical diffusion scaling.

    ``theory`` maps a candidate to its theoretical diffusion-scaling curve on
    the empirical lags. Sorting is stable, so ties keep the input order.
    """
    scored = []
    for c in candidates:
        th = theory(c)
        lo = max(th.min_lag, empirical_scaling.min_lag)
        hi = min(th.max_lag, empirical_scaling.max_lag)
        chi2 = chi2_normalized(empirical_scaling.restrict(lo, hi), th.restrict(lo, hi))
        scored.append((c, chi2))
    return sorted(scored, key=lambda t: t[1])


def with_diffusion_chi2(res: CalibrationResult, chi2: float) -> CalibrationResult:
    return replace(res, chi2_diffusion=float(chi2))


def report_json(results: Sequence[CalibrationResult], extra: Mapping | None = None) -> str:
    body = {"results": [r.to_json() for r in results]}
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True)
