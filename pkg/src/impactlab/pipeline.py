"""Analysis stages shared by the command line, the scripts and the tests.

``estimate`` turns a universe of bar series into averaged responses,
correlators and diffusion; ``fit`` adds power-law fits and volume-impact
constants; ``calibrate`` runs the two-stage kernel calibration and ranks
the Scenario III weights by diffusion consistency.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .calibrate import (PAPER_WEIGHTS, CalibrationResult, SearchSpace, calibrate_scenario,
                        rank_by_diffusion, scan_weights, with_diffusion_chi2)
from .core import BarSeries, EmptyPanelError, LagCurve, PairPanel, align_pair
from .estimators import (VolumeImpactConstants, VolumeProducts, average_over_partners,
                         avg_diffusion, cross_response, diffusion_scaling, mean_curve,
                         per_share_response, read_curve_csv, self_correlator, self_response,
                         two_sided_correlator, volume_conditioned_response,
                         volume_impact_constants, volume_product_averages, write_curve_csv,
                         write_profile_csv)
from .fits import FitError, PowerLawFit, chi2_normalized, fit_power_law
from .propagator import (DiffusionInputs, KernelParams, ScenarioIIIConfig, SignMatrix,
                         build_sign_matrix, correlator_table, invert_response, scenario3_response,
                         theo_diffusion, theo_response)

log = logging.getLogger(__name__)

Universe = Mapping[str, Sequence[BarSeries]]
VOLUME_SCENARIOS = ("self", "I-passive", "I-active", "II-passive", "II-active")


@dataclass(frozen=True)
class AnalysisConfig:
    t_cut: int = 3000
    t_diff: int = 1000
    target: str | None = None  # None: average over every stock
    correlator_mode: str = "fit"
    correlator_fit_range: tuple[float, float] = (10, 1000)
    volume_bins: int = 20
    volume_fit_range: tuple[float, float] = (0.0, math.inf)
    v_max: float = 1.0
    # fixed impact exponents replace fitted volume laws when given
    impact_exponents: Mapping[str, float] | None = None
    weights: tuple[float, ...] = PAPER_WEIGHTS
    noise_total: float = 1e-8
    scenario: str = "III"
    space: SearchSpace = SearchSpace()

    def __post_init__(self):
        if self.t_cut < 1 or self.t_diff < 1:
            raise ValueError("t_cut and t_diff must be positive")
        if self.correlator_mode not in ("fit", "raw", "hybrid"):
            raise ValueError(f"unknown correlator mode {self.correlator_mode!r}")
        if not all(0 < w < 1 for w in self.weights) or not self.weights:
            raise ValueError("weights must lie in (0, 1)")
        if self.scenario not in ("I", "II", "III"):
            raise ValueError(f"scenario must be I, II or III, got {self.scenario!r}")

    @property
    def corr_lags(self) -> int:
        """Largest correlator lag any stage needs."""
        return self.t_cut + self.t_diff


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PairStats:
    response: dict[tuple[str, str], LagCurve]  # (i, j): R_ij, price i, sign j
    correlator: dict[tuple[str, str], LagCurve]  # (i, j): Theta_ij(tau), tau >= 0
    diffusion: dict[tuple[str, str], LagCurve]  # unordered, i < j
    self_response: dict[str, LagCurve]
    self_correlator: dict[str, LagCurve]


@dataclass(frozen=True, eq=False)
class Estimates:
    """Averaged curves of the studied stock (or of the whole market)."""

    r_self: LagCurve
    r_passive: LagCurve
    r_active: LagCurve
    theta_self: LagCurve
    theta_self_avg: LagCurve
    theta_passive: LagCurve
    theta_active: LagCurve
    diffusion: LagCurve
    profiles: dict
    stocks: tuple[str, ...]
    target: str | None = None
    volume_panels: tuple[PairPanel, ...] = field(default=(), repr=False)


def pair_panels(universe: Universe) -> dict[tuple[str, str], PairPanel]:
    """Day-aligned panels for every ordered pair sharing at least one day."""
    names = sorted(universe)
    out = {}
    for a in names:
        for b in names:
            if a == b:
                continue
            try:
                out[(a, b)] = align_pair(universe[a], universe[b])
            except EmptyPanelError:
                log.warning("%s and %s share no day; pair skipped", a, b)
    return out


def pair_statistics(universe: Universe, panels: Mapping[tuple[str, str], PairPanel],
                    cfg: AnalysisConfig) -> PairStats:
    names = sorted(universe)
    resp, corr, diff = {}, {}, {}
    for (a, b), p in sorted(panels.items()):
        resp[(a, b)] = cross_response(p, cfg.t_cut).curve
        if a < b:
            lags, vals, cnt = two_sided_correlator(p, cfg.corr_lags)
            zero = int(np.flatnonzero(lags == 0)[0])
            corr[(a, b)] = LagCurve(0, vals[zero:], cnt[zero:])
            corr[(b, a)] = LagCurve(0, vals[zero::-1], cnt[zero::-1])
            diff[(a, b)] = avg_diffusion([p], cfg.t_diff).curve
    sresp = {s: self_response(universe[s], cfg.t_cut).curve for s in names}
    scorr = {s: self_correlator(universe[s], cfg.corr_lags).curve for s in names}
    return PairStats(resp, corr, diff, sresp, scorr)


def _partners(keys, stock: str, side: int) -> list:
    return [k for k in sorted(keys) if k[side] == stock and k[1 - side] != stock]


def _target_curves(stats: PairStats, t: str) -> dict[str, LagCurve]:
    others = sorted({k[1] for k in _partners(stats.response, t, 0)})
    if not others:
        raise ValueError(f"{t} has no partner")
    return {
        "r_self": stats.self_response[t],
        "r_passive": mean_curve([stats.response[k] for k in _partners(stats.response, t, 0)]),
        "r_active": mean_curve([stats.response[k] for k in _partners(stats.response, t, 1)]),
        "theta_self": stats.self_correlator[t],
        "theta_self_avg": mean_curve([stats.self_correlator[j] for j in others]),
        "theta_passive": mean_curve([stats.correlator[k] for k in _partners(stats.correlator, t, 0)]),
        "theta_active": mean_curve([stats.correlator[k] for k in _partners(stats.correlator, t, 1)]),
        "diffusion": mean_curve([stats.diffusion[tuple(sorted((t, j)))] for j in others
                                 if tuple(sorted((t, j))) in stats.diffusion]),
    }


def ring_panels(universe: Universe, panels: Mapping[tuple[str, str], PairPanel]) -> list[PairPanel]:
    """Each stock paired with the next one; keeps volume statistics small."""
    names = sorted(universe)
    out = []
    for k, a in enumerate(names):
        b = names[(k + 1) % len(names)]
        if (a, b) in panels:
            out.append(panels[(a, b)])
    return out


def estimate(universe: Universe, cfg: AnalysisConfig,
             stats: PairStats | None = None) -> tuple[Estimates, PairStats]:
    if len(universe) < 2:
        raise ValueError("the universe needs at least two stocks")
    panels = pair_panels(universe)
    if not panels:
        raise EmptyPanelError("no pair of stocks shares a trading day")
    if stats is None:
        stats = pair_statistics(universe, panels, cfg)
    targets = [cfg.target] if cfg.target else sorted(universe)
    per = [_target_curves(stats, t) for t in targets]
    avg = {k: mean_curve([p[k] for p in per]) for k in per[0]}
    if cfg.target:
        vol_panels = [panels[k] for k in _partners(panels, cfg.target, 0)]
    else:
        vol_panels = ring_panels(universe, panels)
    profiles = {s: volume_conditioned_response(vol_panels, s, 1, cfg.volume_bins)
                for s in VOLUME_SCENARIOS}
    est = Estimates(profiles=profiles, stocks=tuple(sorted(universe)), target=cfg.target,
                    volume_panels=tuple(vol_panels), **avg)
    return est, stats


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Fits:
    theta_self: PowerLawFit | None
    theta_self_avg: PowerLawFit | None
    theta_passive: PowerLawFit | None
    theta_active: PowerLawFit | None
    volume: dict[str, PowerLawFit]
    constants: VolumeImpactConstants
    self_constant: float
    products: VolumeProducts

    @classmethod
    def from_json(cls, d: Mapping) -> "Fits":
        c = d["correlators"]
        const = dict(d["constants"])
        self_c = const.pop("self")
        return cls(*(PowerLawFit.from_json(c[k]) if c.get(k) else None for k in
                     ("theta_self", "theta_self_avg", "theta_passive", "theta_active")),
                   {k: PowerLawFit.from_json(v) for k, v in d["volume"].items()},
                   VolumeImpactConstants(**const), float(self_c),
                   VolumeProducts(**d["volume_products"]))

    def to_json(self) -> dict:
        return {
            "correlators": {k: getattr(self, k) and getattr(self, k).to_json() for k in
                            ("theta_self", "theta_self_avg", "theta_passive", "theta_active")},
            "volume": {k: v.to_json() for k, v in sorted(self.volume.items())},
            "constants": vars(self.constants) | {"self": self.self_constant},
            "volume_products": vars(self.products),
        }


def _unit(fit: PowerLawFit) -> PowerLawFit:
    """The volume law with unit amplitude (response scale removed)."""
    return PowerLawFit(1.0, fit.exponent, fit.fit_range, fit.residual, decaying=False)


def _fixed_law(exponent: float) -> PowerLawFit:
    return PowerLawFit(1.0, float(exponent), (0.0, math.inf), 0.0, decaying=False)


def fit(est: Estimates, cfg: AnalysisConfig) -> Fits:
    rng = cfg.correlator_fit_range
    cf = {}
    for k in ("theta_self", "theta_self_avg", "theta_passive", "theta_active"):
        try:
            cf[k] = fit_power_law(getattr(est, k), rng)
        except FitError as exc:
            # raw tables never read the fit, so a noisy correlator is not fatal there
            if cfg.correlator_mode != "raw":
                raise FitError(f"{k}: {exc}") from None
            log.warning("%s: %s; kept raw", k, exc)
            cf[k] = None
    if cfg.impact_exponents:
        ex = cfg.impact_exponents
        laws = {"self": _fixed_law(ex["self"]),
                "I-passive": _fixed_law(ex["self"]), "I-active": _fixed_law(ex["self"]),
                "II-passive": _fixed_law(ex["cross"]), "II-active": _fixed_law(ex["cross"])}
        vfits = dict(laws)
    else:
        vfits = {}
        for s, prof in est.profiles.items():
            try:
                vfits[s] = fit_power_law(prof, cfg.volume_fit_range, decaying=False)
            except FitError as exc:
                raise FitError(f"volume law {s}: {exc}") from None
        laws = {s: _unit(f) for s, f in vfits.items()}
    constants = volume_impact_constants(est.profiles, laws, cfg.v_max)
    self_const = float(np.mean(laws["self"](est.profiles["self"].volumes[
        (est.profiles["self"].volumes > 0) & (est.profiles["self"].volumes <= cfg.v_max)])))
    products = volume_product_averages(est.volume_panels, laws, cfg.v_max)
    return Fits(cf["theta_self"], cf["theta_self_avg"], cf["theta_passive"], cf["theta_active"],
                vfits, constants, self_const, products)


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Matrices:
    passive_I: SignMatrix
    active_I: SignMatrix
    passive_II: SignMatrix
    active_II: SignMatrix
    self_II: SignMatrix

    def scenario(self, scenario: str, mode: str) -> SignMatrix:
        return getattr(self, f"{mode}_{scenario}")


def correlator_tables(est: Estimates, fits: Fits, cfg: AnalysisConfig, n: int) -> dict[str, LagCurve]:
    mode = cfg.correlator_mode
    return {k: correlator_table(getattr(est, k), getattr(fits, k), n, mode)
            for k in ("theta_self", "theta_self_avg", "theta_passive", "theta_active")}


def build_matrices(est: Estimates, fits: Fits, cfg: AnalysisConfig) -> Matrices:
    tab = correlator_tables(est, fits, cfg, cfg.t_cut)
    tp, ta = tab["theta_passive"], tab["theta_active"]
    return Matrices(
        passive_I=build_sign_matrix(tp, ta, cfg.t_cut, "passive-I"),
        active_I=build_sign_matrix(tp, ta, cfg.t_cut, "active-I"),
        passive_II=build_sign_matrix(tab["theta_self_avg"], None, cfg.t_cut, "avg-self-II"),
        active_II=build_sign_matrix(tab["theta_self"], None, cfg.t_cut, "self-II"),
        self_II=build_sign_matrix(tab["theta_self"], None, cfg.t_cut, "self-II"),
    )


def per_share(est: Estimates, fits: Fits, scenario: str, mode: str) -> LagCurve:
    c = fits.constants
    const = {("I", "passive"): c.f_self_passive, ("I", "active"): c.f_self_active,
             ("II", "passive"): c.g_cross_passive, ("II", "active"): c.g_cross_active}[(scenario, mode)]
    curve = est.r_passive if mode == "passive" else est.r_active
    return per_share_response(curve, const)


def empirical_self_kernel(est: Estimates, fits: Fits, matrices: Matrices) -> LagCurve:
    """Self kernel from the self-response by matrix inversion."""
    return invert_response(matrices.self_II, per_share_response(est.r_self, fits.self_constant))


@dataclass(frozen=True, eq=False)
class WeightCandidate:
    weight: float
    passive: CalibrationResult
    active: CalibrationResult


ZERO_KERNEL = KernelParams(0.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True, eq=False)
class CalibrationReport:
    scenario: str
    scenario_I: dict[str, CalibrationResult]
    scenario_II: dict[str, CalibrationResult]
    scenario_III: list[WeightCandidate]
    best_weight: float | None
    diffusion_chi2: dict[str, float]
    theory_diffusion: dict[str, LagCurve]
    empirical_diffusion: LagCurve
    seed: int
    budget: int

    def best(self) -> WeightCandidate | None:
        return next((c for c in self.scenario_III if c.weight == self.best_weight), None)

    def kernels(self) -> dict[str, KernelParams]:
        """Kernels of the calibrated scenario (at the selected weight for III)."""
        if self.scenario == "I":
            return {"self": self.scenario_I["passive"].best, "passive": ZERO_KERNEL,
                    "active": ZERO_KERNEL}
        if self.scenario == "II":
            return {"self": ZERO_KERNEL, "passive": self.scenario_II["passive"].best,
                    "active": self.scenario_II["active"].best}
        b = self.best()
        return {"self": self.scenario_I["passive"].best.scaled(b.weight),
                "passive": b.passive.best, "active": b.active.best}

    def to_json(self) -> dict:
        res = [r.to_json() for r in self.scenario_I.values()]
        res += [r.to_json() for r in self.scenario_II.values()]
        for c in self.scenario_III:
            res += [c.passive.to_json(), c.active.to_json()]
        return {
            "scenario": self.scenario,
            "results": res,
            "selected_w": self.best_weight,
            "chi2_diffusion": self.diffusion_chi2,
            "kernels": {k: v.to_json() for k, v in self.kernels().items()},
            "seed": self.seed, "iterations": self.budget,
        }


def diffusion_inputs(est: Estimates, fits: Fits, cfg: AnalysisConfig, kernels: Mapping[str, KernelParams],
                     tables: Mapping[str, LagCurve]) -> DiffusionInputs:
    return DiffusionInputs(
        self_kernel=kernels["self"], self_kernel_avg=kernels["self_avg"],
        passive_kernel=kernels["passive"], active_kernel=kernels["active"],
        theta_passive=tables["theta_passive"], theta_active=tables["theta_active"],
        theta_self=tables["theta_self"], theta_self_avg=tables["theta_self_avg"],
        volume=fits.products, noise_total=cfg.noise_total, t_cut=cfg.t_cut,
    )


def calibrate(est: Estimates, fits: Fits, cfg: AnalysisConfig) -> CalibrationReport:
    """Two-stage calibration: Scenarios I and II first, then III per weight.

    With ``cfg.scenario`` set to I or II only that stage runs. Every
    calibrated scenario gets a diffusion chi^2; Scenario III weights are
    ranked by it and the best one is selected.
    """
    space = cfg.space
    modes = ("passive", "active")
    mats = build_matrices(est, fits, cfg)
    tables = correlator_tables(est, fits, cfg, cfg.corr_lags - 1)
    emp = diffusion_scaling(est.diffusion.restrict(1, cfg.t_diff))
    theory: dict[str, LagCurve] = {}
    chi2: dict[str, float] = {}

    def scaled_theory(scenario: str, kernels, key: str) -> LagCurve:
        ks = {"self": ZERO_KERNEL, "self_avg": ZERO_KERNEL, "passive": ZERO_KERNEL,
              "active": ZERO_KERNEL} | dict(kernels)
        curve = theo_diffusion(scenario, diffusion_inputs(est, fits, cfg, ks, tables), cfg.t_diff)
        theory[key] = curve
        return diffusion_scaling(curve)

    s1, s2, cands, best_w = {}, {}, [], None
    if cfg.scenario in ("I", "III"):
        s1 = {m: calibrate_scenario(per_share(est, fits, "I", m), mats.scenario("I", m), space, "I", m)
              for m in modes}
        th = scaled_theory("I", {"self": s1["passive"].best, "self_avg": s1["active"].best}, "I")
        chi2["I"] = chi2_normalized(emp, th)
        s1 = {m: with_diffusion_chi2(r, chi2["I"]) for m, r in s1.items()}
    if cfg.scenario in ("II", "III"):
        s2 = {m: calibrate_scenario(per_share(est, fits, "II", m), mats.scenario("II", m), space, "II", m)
              for m in modes}
        th = scaled_theory("II", {"passive": s2["passive"].best, "active": s2["active"].best}, "II")
        chi2["II"] = chi2_normalized(emp, th)
        s2 = {m: with_diffusion_chi2(r, chi2["II"]) for m, r in s2.items()}
    if cfg.scenario == "III":
        r1 = {m: theo_response(mats.scenario("I", m), s1[m].best) for m in modes}
        template = ScenarioIIIConfig(cfg.weights[0], fits.constants, r1,
                                     {m: s2[m].best for m in modes},
                                     {m: mats.scenario("II", m) for m in modes})
        scans = {m: scan_weights(template, cfg.weights,
                                 est.r_passive if m == "passive" else est.r_active, space, m)
                 for m in modes}
        cands = [WeightCandidate(p.weight, p, a) for p, a in zip(scans["passive"], scans["active"])]
        g1p, g1a = s1["passive"].best, s1["active"].best

        def cand_theory(c: WeightCandidate) -> LagCurve:
            ks = {"self": g1p.scaled(c.weight), "self_avg": g1a.scaled(c.weight),
                  "passive": c.passive.best, "active": c.active.best}
            return scaled_theory("III", ks, f"III_w{c.weight:g}")

        ranked = rank_by_diffusion(cands, emp, cand_theory)
        for c, x in ranked:
            chi2[f"III_w{c.weight:g}"] = x
        cands = [WeightCandidate(c.weight, with_diffusion_chi2(c.passive, chi2[f"III_w{c.weight:g}"]),
                                 with_diffusion_chi2(c.active, chi2[f"III_w{c.weight:g}"]))
                 for c in cands]
        best_w = ranked[0][0].weight
    return CalibrationReport(cfg.scenario, s1, s2, cands, best_w, chi2, theory,
                             est.diffusion.restrict(1, cfg.t_diff), space.seed, space.budget)


def scenario3_curve(report: CalibrationReport, fits: Fits, mats: Matrices, est: Estimates,
                    weight: float, mode: str) -> LagCurve:
    """Theoretical Scenario III average response at one weight."""
    c = next(c for c in report.scenario_III if c.weight == weight)
    r1 = {m: theo_response(mats.scenario("I", m), report.scenario_I[m].best) for m in ("passive", "active")}
    cfg3 = ScenarioIIIConfig(weight, fits.constants, r1,
                             {"passive": c.passive.best, "active": c.active.best},
                             {m: mats.scenario("II", m) for m in ("passive", "active")})
    return scenario3_response(cfg3, mode)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

AVERAGE_CURVES = ("r_self", "r_passive", "r_active", "theta_self", "theta_self_avg",
                  "theta_passive", "theta_active", "diffusion")


def save_estimates(est: Estimates, stats: PairStats, out: Path) -> list[Path]:
    """One CSV per statistic: ``<stat>_<stock>[_<partner>].csv`` plus averages."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, curve: LagCurve):
        path = out / f"{name}.csv"
        write_curve_csv(path, curve)
        written.append(path)

    for (a, b), c in sorted(stats.response.items()):
        put(f"response_{a}_{b}", c)
    for (a, b), c in sorted(stats.correlator.items()):
        put(f"correlator_{a}_{b}", c)
    for (a, b), c in sorted(stats.diffusion.items()):
        put(f"diffusion_{a}_{b}", c)
    for s, c in sorted(stats.self_response.items()):
        put(f"self-response_{s}", c)
    for s, c in sorted(stats.self_correlator.items()):
        put(f"self-correlator_{s}", c)
    for s in est.stocks:
        try:
            put(f"response-passive_{s}", average_over_partners(stats.response, s, "passive"))
            put(f"response-active_{s}", average_over_partners(stats.response, s, "active"))
        except ValueError:
            log.warning("%s has no partner; averages skipped", s)
    for k in AVERAGE_CURVES:
        put(f"avg_{k}", getattr(est, k))
    for name, prof in sorted(est.profiles.items()):
        path = out / f"profile_{name}.csv"
        write_profile_csv(path, prof)
        written.append(path)
    meta = {"stocks": list(est.stocks), "target": est.target}
    (out / "summary.json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return written


def load_estimates(est_dir: Path, universe: Universe, cfg: AnalysisConfig) -> Estimates:
    """Averaged curves from disk; volume profiles are rebuilt from the bars."""
    est_dir = Path(est_dir)
    curves = {}
    for k in AVERAGE_CURVES:
        path = est_dir / f"avg_{k}.csv"
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run the estimate stage first")
        curves[k] = read_curve_csv(path)
    panels = pair_panels(universe)
    if cfg.target:
        vol_panels = [panels[k] for k in _partners(panels, cfg.target, 0)]
    else:
        vol_panels = ring_panels(universe, panels)
    profiles = {s: volume_conditioned_response(vol_panels, s, 1, cfg.volume_bins)
                for s in VOLUME_SCENARIOS}
    return Estimates(profiles=profiles, stocks=tuple(sorted(universe)), target=cfg.target,
                     volume_panels=tuple(vol_panels), **curves)
