"""Scenario definitions, config files, and full study runs.

A scenario bundles a price environment (flat, time-of-use tariff, or spot
series), an optional power target (diurnal load shifting), a rate-limit
variant, and mesh/feedback settings.  ``run_scenario`` always produces the
nominal baseline on the same prices so reports carry a like-for-like
profit-versus-nominal figure, and writes trajectory/report artifacts.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .economics import (
    HOUR,
    EconomicParameters,
    PowerTarget,
    PriceProfile,
    RunReport,
    bundled_price_path,
    diurnal_target,
    economics,
    load_price_profile,
)
from .errors import DomainError, InfeasibleProblemError, PotoptError
from .gridsim import GridSpec
from .model import CellState, ControlInput, integrate_lumped, nominal_state
from .nlp import SolverOptions
from .optimizer import (
    FeedbackConfig,
    OptimalTrajectory,
    OptimizationSpec,
    build_problem,
    feedback_update_run,
    solve_horizon,
)
from .parameters import CellParameters, default_parameters, parameters_from_dict

__all__ = ["ScenarioConfig", "StudyConfig", "load_study_config", "run_scenario",
           "run_batch", "nominal_baseline"]

KINDS = ("nominal", "diurnal", "tariff", "spot")
RATE_VARIANTS = {"fast": 360e3, "slow": 36e3}


@dataclass(frozen=True)
class ScenarioConfig:
    """What to run: price environment, modulation, rate variant, solver mode."""

    kind: str = "diurnal"
    label: str = ""
    modulation_fraction: float = 0.20
    rate_variant: str = "fast"
    flat_price: float = 60.0
    price_file: str | None = None
    nominal_current_a: float = 425e3
    nominal_acd_m: float = 0.028
    use_feedback: bool = False

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise DomainError(f"scenario kind must be one of {KINDS}, got {self.kind!r}")
        if self.rate_variant not in RATE_VARIANTS:
            raise DomainError(f"rate_variant must be one of {sorted(RATE_VARIANTS)}")
        if not 0.0 <= self.modulation_fraction <= 0.5:
            raise DomainError("modulation_fraction must lie in [0, 0.5]")

    def name(self) -> str:
        if self.label:
            return self.label
        bits = [self.kind]
        if self.kind == "diurnal":
            bits.append(f"{int(round(self.modulation_fraction * 100))}pct")
        if self.kind in ("tariff", "spot"):
            bits.append(self.rate_variant)
        return "_".join(bits)


@dataclass
class StudyConfig:
    """Aggregated configuration: cell, optimization, feedback, economics, scenario."""

    params: CellParameters = field(default_factory=default_parameters)
    spec: OptimizationSpec = field(default_factory=OptimizationSpec)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    econ: EconomicParameters = field(default_factory=EconomicParameters)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    initial_state: CellState | None = None

    def state(self) -> CellState:
        return self.initial_state if self.initial_state is not None else nominal_state()


def load_study_config(path: str | Path) -> StudyConfig:
    """Read the aggregated JSON config; every section is optional."""
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - {"cell_parameters", "optimization", "feedback",
                          "economics", "scenario", "initial_state"}
    if unknown:
        raise DomainError(f"unknown config section(s): {sorted(unknown)}")
    cfg = StudyConfig()
    if "cell_parameters" in raw:
        cfg.params = parameters_from_dict(raw["cell_parameters"])
    if "optimization" in raw:
        cfg.spec = replace(OptimizationSpec(), **_tupled(raw["optimization"]))
        cfg.spec.validate()
    if "feedback" in raw:
        fb = dict(raw["feedback"])
        gs = fb.pop("grid", None)
        if gs is not None:
            fb["grid"] = GridSpec(**gs)
        cfg.feedback = FeedbackConfig(**fb)
    if "economics" in raw:
        cfg.econ = EconomicParameters(**raw["economics"])
        cfg.econ.validate()
    if "scenario" in raw:
        cfg.scenario = ScenarioConfig(**raw["scenario"])
        cfg.scenario.validate()
    if "initial_state" in raw:
        from .bath import SpeciesMasses
        st = dict(raw["initial_state"])
        st["species"] = SpeciesMasses(**st["species"])
        cfg.initial_state = CellState(**st)
    return cfg


def _tupled(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def _prices_for(sc: ScenarioConfig, horizon_h: float) -> PriceProfile:
    if sc.price_file:
        return load_price_profile(sc.price_file)
    if sc.kind == "tariff":
        return load_price_profile(bundled_price_path("tariff"))
    if sc.kind == "spot":
        return load_price_profile(bundled_price_path("spot"))
    return PriceProfile.constant(sc.flat_price, max(horizon_h, 48.0))


def nominal_baseline(params: CellParameters, econ: EconomicParameters,
                     state: CellState, prices: PriceProfile, spec: OptimizationSpec,
                     u_nom: ControlInput) -> tuple[OptimalTrajectory, RunReport]:
    """Flat-input run over the horizon on the same prices."""
    t0, tf = spec.t0_h * HOUR, spec.tf_h * HOUR
    t_eval = np.linspace(t0, tf, int((tf - t0) / 300.0) + 1)
    tr = integrate_lumped(state, u_nom, params, (t0, tf), t_eval=t_eval, rtol=1e-9)
    from .model import faraday_production_rate
    prod = faraday_production_rate(1.0, params) * tr.i_line
    traj = OptimalTrajectory(
        times=tr.t, t_bath=tr.t_bath, t_ldg=tr.t_ldg, t_sw=tr.t_sw, m_ldg=tr.m_ldg,
        l_ldg=tr.l_ldg, m_bath=tr.m_bath, i_line=tr.i_line, acd=tr.acd,
        v_cell=tr.v_cell, power=tr.power, t_liq=tr.t_liq, superheat=tr.superheat,
        production_kg_h=prod, objective=0.0, status="optimal")
    report = economics(tr.t, tr.power, prod, prices, econ, label="nominal", status="optimal")
    traj.objective = report.objective
    return traj, report


def run_scenario(config: StudyConfig, out_dir: str | Path | None = None,
                 options: SolverOptions | None = None,
                 warm_start_from: OptimalTrajectory | None = None) -> dict:
    """Execute one scenario: nominal baseline plus the modulated run.

    Returns a dict with 'report' (modulated RunReport or baseline for kind
    nominal), 'baseline' report, trajectories, and the exit status string.
    Writes trajectory CSVs, a power-profile CSV and report JSON when
    ``out_dir`` is given.  Infeasibility is surfaced in the report status
    (with the feedback iteration index when applicable).
    """
    sc = config.scenario
    sc.validate()
    params, econ = config.params, config.econ
    state = config.state()
    spec = replace(config.spec, current_rate_a_per_h=RATE_VARIANTS[sc.rate_variant])
    prices = _prices_for(sc, spec.tf_h - spec.t0_h)
    u_nom = ControlInput(sc.nominal_current_a, sc.nominal_acd_m)

    base_traj, base_report = nominal_baseline(params, econ, state, prices, spec, u_nom)

    target = None
    if sc.kind == "diurnal":
        p_nom = base_traj.power[0]
        target = diurnal_target(p_nom, sc.modulation_fraction,
                                horizon_h=spec.tf_h - spec.t0_h)

    result: dict = {"baseline": base_report, "baseline_trajectory": base_traj,
                    "label": sc.name()}

    if sc.kind == "nominal":
        result["report"] = base_report
        result["trajectory"] = base_traj
        result["status"] = "optimal"
    else:
        try:
            if sc.use_feedback:
                traj = feedback_update_run(
                    spec, config.feedback, params=params, econ=econ,
                    initial_state=state, prices=prices, power_target=target,
                    options=options)
                report = economics(traj.times, traj.power, traj.production_kg_h,
                                   prices, econ, label=sc.name(), status=traj.status,
                                   margins=traj.margins)
            else:
                from .nlp import WarmStart
                warm = None
                if warm_start_from is not None and warm_start_from.solver_stats.get("solution") is not None:
                    warm = WarmStart(warm_start_from.solver_stats["solution"])
                problem = build_problem(spec, params, econ, state, prices, target)
                traj, res = solve_horizon(problem, options, warm)
                traj.solver_stats["solution"] = res.x
                report = economics(traj.times, traj.power, traj.production_kg_h,
                                   prices, econ, label=sc.name(), status=res.status,
                                   margins=traj.margins)
            result["report"] = report
            result["trajectory"] = traj
            result["status"] = report.status
        except InfeasibleProblemError as exc:
            report = RunReport(objective=float("nan"), profit=float("nan"),
                               revenue=float("nan"), expense_electricity=float("nan"),
                               expense_material=float("nan"), energy_mwh=float("nan"),
                               metal_kg=float("nan"), currency=econ.currency,
                               status="infeasible", label=sc.name())
            report.margins = {"failed_iteration": exc.iteration}
            result["report"] = report
            result["trajectory"] = None
            result["status"] = "infeasible"

    rep: RunReport = result["report"]
    if rep.status == "optimal" and sc.kind != "nominal":
        rep.profit_vs_nominal = rep.profit - base_report.profit

    if out_dir is not None:
        _write_artifacts(result, Path(out_dir), prices, target)
    return result


def _write_artifacts(result: dict, out_dir: Path, prices: PriceProfile,
                     target: PowerTarget | None) -> None:
    out = out_dir / result["label"]
    out.mkdir(parents=True, exist_ok=True)
    result["baseline_trajectory"].to_csv(out / "baseline_trajectory.csv")
    traj = result.get("trajectory")
    if traj is not None:
        traj.to_csv(out / "trajectory.csv")
        with open(out / "power_profile.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "power_w", "target_w", "price_per_mwh"])
            for k in range(len(traj.times)):
                t = traj.times[k]
                w.writerow([f"{t:.1f}", f"{traj.power[k]:.1f}",
                            f"{target.value(t):.1f}" if target is not None else "",
                            f"{prices.value_at_seconds(t):.2f}"])
    payload = {"report": result["report"].as_dict(),
               "baseline": result["baseline"].as_dict(),
               "status": result["status"]}
    if traj is not None:
        payload["solver"] = {k: v for k, v in traj.solver_stats.items() if k != "solution"}
        payload["iterations"] = traj.iteration_log
    (out / "report.json").write_text(json.dumps(payload, indent=2, default=float) + "\n")


def _run_one(args) -> dict:
    path, out_dir = args
    cfg = load_study_config(path)
    res = run_scenario(cfg, out_dir)
    return {"config": str(path), "label": res["label"], "status": res["status"],
            "profit": res["report"].profit if res["report"] else None}


def run_batch(config_paths, out_dir: str | Path | None = None,
              workers: int = 2) -> list[dict]:
    """Run independent scenario configs concurrently."""
    jobs = [(str(p), out_dir) for p in config_paths]
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))
