"""Command-line front end: ``impactlab <command> --config run.json``.

Stages talk to each other only through files under ``out_dir``::

    bars/{SYM}_{date}.csv        ingest (or simulate)
    estimate/*.csv               estimate
    fit/fits.json                fit
    calibrate/report.json        calibrate
    report/fig_*.csv             report

Logs go to stderr; stdout carries a single JSON summary line.
Exit codes: 0 success, 1 computation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import pipeline
from .calibrate import PAPER_WEIGHTS, CalibrationError, SearchSpace
from .core import validate_symbol
from .estimators import diffusion_scaling, read_curve_csv, write_curve_csv
from .fits import FitError
from .ingest import (FORMAT_HEADER, DayRejected, IngestError, IngestStats, NormalizationError,
                     bar_path, build_bar_series, discover_ticks, normalize_volumes, read_bars,
                     read_raw_day, write_bars)
from .propagator import KernelParams, SingularMatrixError, kernel_eval, theo_response
from .simulate import SimConfig, simulate_panel, write_panel

log = logging.getLogger("impactlab")

COMMANDS = ("ingest", "simulate", "estimate", "fit", "calibrate", "report")


class InputError(Exception):
    """Bad configuration or missing/malformed input (exit code 2)."""


@dataclasses.dataclass(frozen=True)
class RunConfig:
    data_dir: Path
    out_dir: Path
    universe: tuple[str, ...] = ()
    t_max: int = 1000
    t_cut: int = 3000
    scenario: str = "III"
    weights: tuple[float, ...] = PAPER_WEIGHTS
    seed: int = 0
    budget: int = 20000
    threads: int = 0
    target: str | None = None
    session_slots: int = 22200
    correlator_mode: str = "fit"
    v_max: float = 1.0
    impact_exponents: dict | None = None
    noise_total: float = 1e-8
    simulate: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for s in self.universe:
            validate_symbol(s)
        if self.universe and len(self.universe) < 2:
            raise ValueError("the universe needs at least two stocks")
        if self.t_cut < 1 or self.t_max < 1 or self.budget < 1:
            raise ValueError("t_cut, t_max and budget must be positive")
        if self.scenario not in ("I", "II", "III"):
            raise ValueError("scenario must be I, II or III")

    def analysis(self) -> pipeline.AnalysisConfig:
        return pipeline.AnalysisConfig(
            t_cut=self.t_cut, t_diff=self.t_max, target=self.target,
            correlator_mode=self.correlator_mode, v_max=self.v_max,
            impact_exponents=self.impact_exponents, weights=tuple(self.weights),
            noise_total=self.noise_total, scenario=self.scenario,
            space=SearchSpace(budget=self.budget, seed=self.seed),
        )

    @property
    def bar_dir(self) -> Path:
        return self.out_dir / "bars"

    def stage_dir(self, name: str) -> Path:
        return self.out_dir / name


def load_config(path: Path | None, overrides: dict) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InputError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {path}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    base = Path(path).parent if path is not None else Path.cwd()
    for key in ("data_dir", "out_dir"):
        if key not in raw:
            raise InputError(f"config needs '{key}'")
        p = Path(raw[key])
        raw[key] = p if p.is_absolute() else base / p
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("universe", "weights"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        return RunConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid config: {exc}") from None


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"format": FORMAT_HEADER.lstrip("# ")} | obj
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path, stage: str) -> dict:
    if not path.exists():
        raise InputError(f"{path} missing; run 'impactlab {stage}' first")
    return json.loads(path.read_text(encoding="utf-8"))


def _fmt(x: float) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _write_table(path: Path, header: Sequence[str], rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(FORMAT_HEADER + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _fmt(v) if isinstance(v, float)
                              else str(v) for v in row) + "\n")


def load_universe(cfg: RunConfig) -> dict[str, list]:
    """Bar series from ``out_dir/bars``, restricted to the configured universe."""
    if not cfg.bar_dir.is_dir():
        raise InputError(f"{cfg.bar_dir} missing; run 'impactlab ingest' or 'simulate' first")
    found: dict[str, list] = {}
    for p in sorted(cfg.bar_dir.glob("*_*.csv")):
        stock, _, date = p.stem.rpartition("_")
        if cfg.universe and stock not in cfg.universe:
            continue
        try:
            day = dt.date.fromisoformat(date)
        except ValueError:
            continue
        try:
            found.setdefault(stock, []).append(read_bars(p, stock, day))
        except (IngestError, ValueError) as exc:
            raise InputError(f"{p}: {exc}") from None
    missing = [s for s in cfg.universe if s not in found]
    if missing:
        raise InputError(f"no bars for {', '.join(missing)}")
    if len(found) < 2:
        raise InputError("need bars of at least two stocks")
    return found


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> dict:
    if not cfg.data_dir.is_dir():
        raise InputError(f"data directory {cfg.data_dir} does not exist")
    ticks = discover_ticks(cfg.data_dir)
    if cfg.universe:
        missing = [s for s in cfg.universe if s not in ticks]
        if missing:
            raise InputError("missing tick files for: " + ", ".join(missing))
        ticks = {s: ticks[s] for s in cfg.universe}
    if not ticks:
        raise InputError(f"no {{SYM}}_{{YYYY-MM-DD}}_trades.csv / _quotes.csv pairs in {cfg.data_dir}")
    stats = IngestStats()
    errors, written = [], 0
    for stock, dates in sorted(ticks.items()):
        days = []
        for date in dates:
            try:
                raw = read_raw_day(cfg.data_dir, stock, date, cfg.session_slots)
                days.append(build_bar_series(raw, stats))
            except IngestError as exc:
                errors.append(str(exc))
            except DayRejected as exc:
                log.warning("%s", exc)
                stats.rejected_days.append(f"{stock}_{date.isoformat()}")
        if errors:
            continue
        try:
            days = normalize_volumes(days)
        except NormalizationError as exc:
            log.warning("%s: %s; stock skipped", stock, exc)
            continue
        for d in days:
            write_bars(bar_path(cfg.bar_dir, stock, d.date), d)
            written += 1
    if errors:
        for e in errors:
            log.error("%s", e)
        raise InputError(f"{len(errors)} malformed tick file(s)")
    summary = {"bar_files": written, "stocks": len(ticks), "crossed_quotes": stats.crossed_quotes,
               "rejected_days": sorted(stats.rejected_days)}
    _write_json(cfg.bar_dir / "summary.json", summary)
    return summary


def cmd_simulate(cfg: RunConfig) -> dict:
    spec = dict(cfg.simulate)
    spec["seed"] = cfg.seed
    spec.setdefault("slots", cfg.session_slots)
    if cfg.universe:
        spec["symbols"] = list(cfg.universe)
        spec["n_stocks"] = len(cfg.universe)
    try:
        sim = SimConfig.from_json(spec)
    except (TypeError, ValueError, KeyError) as exc:
        raise InputError(f"invalid simulate section: {exc}") from None
    panel = simulate_panel(sim)
    out = write_panel(panel, tick_dir=cfg.data_dir, bar_dir=cfg.bar_dir,
                      truth_path=cfg.out_dir / "ground_truth.json")
    return out | {"ground_truth": str(cfg.out_dir / "ground_truth.json")}


def cmd_estimate(cfg: RunConfig) -> dict:
    universe = load_universe(cfg)
    ana = cfg.analysis()
    est, stats = pipeline.estimate(universe, ana)
    files = pipeline.save_estimates(est, stats, cfg.stage_dir("estimate"))
    return {"files": len(files), "stocks": len(universe), "pairs": len(stats.response)}


def cmd_fit(cfg: RunConfig) -> dict:
    universe = load_universe(cfg)
    ana = cfg.analysis()
    est = pipeline.load_estimates(cfg.stage_dir("estimate"), universe, ana)
    fits = pipeline.fit(est, ana)
    _write_json(cfg.stage_dir("fit") / "fits.json", fits.to_json())
    return {"theta_self_exponent": fits.theta_self.exponent if fits.theta_self else None,
            "constants": dataclasses.asdict(fits.constants)}


def _load_fitted(cfg: RunConfig):
    universe = load_universe(cfg)
    ana = cfg.analysis()
    est = pipeline.load_estimates(cfg.stage_dir("estimate"), universe, ana)
    fits = pipeline.Fits.from_json(_read_json(cfg.stage_dir("fit") / "fits.json", "fit"))
    return ana, est, fits


def cmd_calibrate(cfg: RunConfig) -> dict:
    ana, est, fits = _load_fitted(cfg)
    rep = pipeline.calibrate(est, fits, ana)
    out = cfg.stage_dir("calibrate")
    _write_json(out / "report.json", rep.to_json())
    for key, curve in sorted(rep.theory_diffusion.items()):
        write_curve_csv(out / f"diffusion_{key}.csv", curve)
    return {"scenario": rep.scenario, "selected_w": rep.best_weight,
            "chi2_diffusion": rep.diffusion_chi2}


def cmd_report(cfg: RunConfig) -> dict:
    ana, est, fits = _load_fitted(cfg)
    rep = _read_json(cfg.stage_dir("calibrate") / "report.json", "calibrate")
    out = cfg.stage_dir("report")
    mats = pipeline.build_matrices(est, fits, ana)

    # 1-2: volume dependence and volume density
    rows, dens = [], []
    for name, prof in sorted(est.profiles.items()):
        for c, r, n, d in zip(prof.centers, prof.response, prof.count, prof.density):
            rows.append((name, float(c), float(r), int(n)))
            dens.append((name, float(c), float(d)))
    _write_table(out / "fig_volume_response.csv", ("scenario", "volume", "response", "count"), rows)
    _write_table(out / "fig_volume_density.csv", ("scenario", "volume", "density"), dens)

    # 3: sign correlators with fits
    keys = ("theta_self", "theta_self_avg", "theta_passive", "theta_active")
    n = min(getattr(est, k).max_lag for k in keys)
    lags = np.arange(1, n + 1)
    cols = [getattr(est, k).restrict(1, n).values for k in keys]
    cols += [getattr(fits, k)(lags) if getattr(fits, k) else np.full(n, np.nan) for k in keys]
    _write_table(out / "fig_sign_correlators.csv",
                 ("tau",) + keys + tuple(f"{k}_fit" for k in keys),
                 ((int(t),) + tuple(float(c[i]) for c in cols) for i, t in enumerate(lags)))

    results = rep["results"]

    def params(scenario, mode, w=None):
        for r in results:
            if r["scenario"] == scenario and r["mode"] == mode and r["w"] == w:
                return KernelParams.from_json(r["params"])
        return None

    # 4-5: per-share responses with Scenario I/II theory
    t = np.arange(1, ana.t_cut + 1)
    for mode in ("passive", "active"):
        header, cols = ["tau"], []
        for scen in ("I", "II"):
            p = params(scen, mode)
            if p is None:
                continue
            emp = pipeline.per_share(est, fits, scen, mode).restrict(1, ana.t_cut)
            header += [f"empirical_{scen}", f"theory_{scen}"]
            cols += [emp.values, theo_response(mats.scenario(scen, mode), p).values]
        _write_table(out / f"fig_response_{mode}.csv", header,
                     ((int(x),) + tuple(float(c[i]) for c in cols) for i, x in enumerate(t)))

    # 6: Scenario III responses per weight (passive side)
    header, cols = ["tau", "empirical"], [est.r_passive.restrict(1, ana.t_cut).values]
    if rep["scenario"] == "III":
        p1 = {m: params("I", m) for m in ("passive", "active")}
        r1 = {m: theo_response(mats.scenario("I", m), p1[m]) for m in p1}
        for w in sorted({r["w"] for r in results if r["scenario"] == "III"}):
            cfg3 = pipeline.ScenarioIIIConfig(
                w, fits.constants, r1,
                {m: params("III", m, w) for m in ("passive", "active")},
                {m: mats.scenario("II", m) for m in ("passive", "active")})
            header.append(f"w{w:g}")
            cols.append(pipeline.scenario3_response(cfg3, "passive").values)
    _write_table(out / "fig_scenario3_response.csv", header,
                 ((int(x),) + tuple(float(c[i]) for c in cols) for i, x in enumerate(t)))

    # 7: kernels
    ks = {k: KernelParams.from_json(v) for k, v in rep["kernels"].items()}
    _write_table(out / "fig_kernels.csv", ("tau", "G_self", "G_passive", "G_active"),
                 ((int(x), float(kernel_eval(ks["self"], x)), float(kernel_eval(ks["passive"], x)),
                   float(kernel_eval(ks["active"], x))) for x in t))

    # 8: diffusion scaling, empirical and one theory column per weight
    emp = diffusion_scaling(est.diffusion.restrict(1, ana.t_diff))
    header, cols = ["tau", "empirical"], [emp.values]
    cal = cfg.stage_dir("calibrate")
    for path in sorted(cal.glob("diffusion_III_w*.csv")):
        th = diffusion_scaling(read_curve_csv(path)).restrict(1, ana.t_diff)
        header.append(path.stem.removeprefix("diffusion_III_"))
        cols.append(th.values)
    _write_table(out / "fig_diffusion.csv", header,
                 ((int(x),) + tuple(float(c[i]) for c in cols) for i, x in enumerate(emp.lags)))
    return {"figures": len(list(out.glob("fig_*.csv")))}


HANDLERS = {"ingest": cmd_ingest, "simulate": cmd_simulate, "estimate": cmd_estimate,
            "fit": cmd_fit, "calibrate": cmd_calibrate, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="impactlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", type=Path, help="JSON run configuration")
    ap.add_argument("--data-dir", dest="data_dir")
    ap.add_argument("--out-dir", dest="out_dir")
    ap.add_argument("--t-cut", dest="t_cut", type=int)
    ap.add_argument("--t-max", dest="t_max", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--weights", type=lambda s: [float(x) for x in s.split(",")],
                    help="comma-separated Scenario III weights")
    ap.add_argument("--budget", type=int, help="random-search iterations per calibration")
    ap.add_argument("--scenario", choices=("I", "II", "III"))
    ap.add_argument("--threads", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in ("data_dir", "out_dir", "t_cut", "t_max", "seed",
                                               "weights", "budget", "scenario", "threads")}
    try:
        cfg = load_config(args.config, overrides)
        threads = cfg.threads or os.cpu_count() or 1
        log.debug("threads=%d (stages run sequentially; results do not depend on it)", threads)
        summary = HANDLERS[args.command](cfg)
    except InputError as exc:
        log.error("%s", exc)
        print(json.dumps({"command": args.command, "status": "input_error", "error": str(exc)}))
        return 2
    except (FitError, CalibrationError, SingularMatrixError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        log.error("%s", exc)
        print(json.dumps({"command": args.command, "status": "failed", "error": str(exc)}))
        return 1
    except (FileNotFoundError, ValueError) as exc:
        log.error("%s", exc)
        print(json.dumps({"command": args.command, "status": "input_error", "error": str(exc)}))
        return 2
    print(json.dumps({"command": args.command, "status": "ok"} | summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
