"""Command-line entry points.

Exit codes: 0 = optimal/feasible, 2 = infeasible, 1 = error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .economics import HOUR
from .errors import PotoptError
from .gridsim import GridSpec, export_grid_csv, init_grid, mass_weighted_average, step_grid
from .model import ControlInput, integrate_lumped, nominal_state
from .nlp import SolverOptions
from .optimizer import FeedbackConfig, OptimizationSpec
from .parameters import default_parameters, load_parameters
from .scenarios import ScenarioConfig, StudyConfig, load_study_config, run_batch, run_scenario

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _parse_grid(text: str) -> GridSpec:
    try:
        nx, ny = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 3x5, got {text!r}") from exc
    return GridSpec(nx=nx, ny=ny)


def _study_from_args(args) -> StudyConfig:
    cfg = load_study_config(args.config) if args.config else StudyConfig()
    if getattr(args, "params", None):
        cfg.params = load_parameters(args.params)
    spec = cfg.spec
    if getattr(args, "segments", None):
        spec = replace(spec, segments=args.segments)
    if getattr(args, "nodes", None):
        spec = replace(spec, nodes=args.nodes)
    if getattr(args, "hours", None):
        spec = replace(spec, tf_h=spec.t0_h + args.hours)
    cfg.spec = spec
    fb = cfg.feedback
    if getattr(args, "theta", None):
        fb = replace(fb, theta_s=args.theta * 60.0)
    if getattr(args, "grid", None):
        fb = replace(fb, grid=args.grid)
    if getattr(args, "truth", None):
        fb = replace(fb, truth=args.truth)
    cfg.feedback = fb
    sc = cfg.scenario
    if getattr(args, "kind", None):
        sc = replace(sc, kind=args.kind)
    if getattr(args, "fraction", None) is not None:
        sc = replace(sc, modulation_fraction=args.fraction)
    if getattr(args, "rate_variant", None):
        sc = replace(sc, rate_variant=args.rate_variant)
    if getattr(args, "price_file", None):
        sc = replace(sc, price_file=args.price_file)
    if getattr(args, "label", None):
        sc = replace(sc, label=args.label)
    cfg.scenario = sc
    return cfg


def _cmd_simulate(args) -> int:
    params = load_parameters(args.params) if args.params else default_parameters()
    state = nominal_state()
    u = ControlInput(args.current * 1e3, args.acd / 100.0)
    tf = args.hours * HOUR
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.grid is not None:
        grid = init_grid(state, args.grid, args.perturbation, params, seed=args.seed)
        n_snap = max(1, int(args.hours))
        for k in range(n_snap):
            grid = step_grid(grid, u, tf / n_snap)
        export_grid_csv(grid, out / "grid_final.csv")
        avg = mass_weighted_average(grid)
        print(f"grid simulation done: mean bath {avg.t_bath:.2f} degC, "
              f"ledge {avg.l_ldg * 100:.2f} cm -> {out / 'grid_final.csv'}")
    else:
        t_eval = np.linspace(0.0, tf, int(args.hours * 12) + 1)
        tr = integrate_lumped(state, u, params, (0.0, tf), t_eval=t_eval)
        import csv as _csv
        with open(out / "simulation.csv", "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["time", "i_line", "acd", "t_bath", "t_ldg", "t_sw",
                        "l_ldg", "m_bath", "v_cell", "P", "T_liq", "superheat"])
            for k in range(len(tr.t)):
                w.writerow([tr.t[k], tr.i_line[k], tr.acd[k], tr.t_bath[k], tr.t_ldg[k],
                            tr.t_sw[k], tr.l_ldg[k], tr.m_bath[k], tr.v_cell[k],
                            tr.power[k], tr.t_liq[k], tr.superheat[k]])
        print(f"lumped simulation done: final bath {tr.t_bath[-1]:.2f} degC, "
              f"ledge {tr.l_ldg[-1] * 100:.2f} cm -> {out / 'simulation.csv'}")
    return EXIT_OK


def _run_and_report(cfg: StudyConfig, args) -> int:
    res = run_scenario(cfg, args.out)
    rep = res["report"]
    if res["status"] == "optimal":
        extra = ""
        if rep.profit_vs_nominal is not None:
            extra = f", vs nominal {rep.profit_vs_nominal:+.2f}"
        print(f"{res['label']}: optimal, profit {rep.profit:.2f} {rep.currency}{extra}")
        return EXIT_OK
    print(f"{res['label']}: {res['status']} "
          f"(details: {json.dumps(rep.margins, default=float)})")
    return EXIT_INFEASIBLE if res["status"] == "infeasible" else EXIT_ERROR


def _cmd_optimize(args) -> int:
    cfg = _study_from_args(args)
    cfg.scenario = replace(cfg.scenario, use_feedback=False)
    return _run_and_report(cfg, args)


def _cmd_feedback(args) -> int:
    cfg = _study_from_args(args)
    cfg.scenario = replace(cfg.scenario, use_feedback=True)
    return _run_and_report(cfg, args)


def _cmd_scenario(args) -> int:
    cfg = _study_from_args(args)
    return _run_and_report(cfg, args)


def _cmd_batch(args) -> int:
    results = run_batch(args.configs, args.out, workers=args.workers)
    worst = EXIT_OK
    for r in results:
        print(f"{r['label']}: {r['status']} profit={r['profit']}")
        if r["status"] == "infeasible":
            worst = max(worst, EXIT_INFEASIBLE)
        elif r["status"] not in ("optimal",):
            worst = max(worst, EXIT_ERROR)
    return worst


def _add_mesh_args(sp) -> None:
    sp.add_argument("--config", help="aggregated JSON config file")
    sp.add_argument("--params", help="cell-parameter JSON file")
    sp.add_argument("--out", default="out", help="output directory")
    sp.add_argument("--segments", type=int, help="mesh segments")
    sp.add_argument("--nodes", type=int, help="collocation nodes per segment")
    sp.add_argument("--hours", type=float, help="horizon length in hours")
    sp.add_argument("--kind", choices=["nominal", "diurnal", "tariff", "spot"])
    sp.add_argument("--fraction", type=float, help="diurnal modulation fraction")
    sp.add_argument("--rate-variant", dest="rate_variant", choices=["fast", "slow"])
    sp.add_argument("--price-file", dest="price_file", help="price CSV path")
    sp.add_argument("--label", help="run label for output naming")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="potopt",
                                 description="Trajectory optimization for reduction-cell power modulation")
    ap.add_argument("--version", action="version", version=f"potopt {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="open-loop model run")
    sp.add_argument("--hours", type=float, default=48.0)
    sp.add_argument("--current", type=float, default=425.0, help="line current in kA")
    sp.add_argument("--acd", type=float, default=2.8, help="ACD in cm")
    sp.add_argument("--grid", type=_parse_grid, help="use the grid model, e.g. 3x5")
    sp.add_argument("--perturbation", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--params")
    sp.add_argument("--out", default="out")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("optimize", help="single-horizon optimization")
    _add_mesh_args(sp)
    sp.set_defaults(fn=_cmd_optimize)

    sp = sub.add_parser("feedback-run", help="shrinking-horizon feedback loop")
    _add_mesh_args(sp)
    sp.add_argument("--theta", type=float, help="update interval in minutes")
    sp.add_argument("--grid", type=_parse_grid, help="truth grid, e.g. 3x5")
    sp.add_argument("--truth", choices=["lumped", "grid"])
    sp.set_defaults(fn=_cmd_feedback)

    sp = sub.add_parser("scenario", help="full study (baseline + modulated run)")
    _add_mesh_args(sp)
    sp.set_defaults(fn=_cmd_scenario)

    sp = sub.add_parser("batch", help="run several scenario configs concurrently")
    sp.add_argument("configs", nargs="+")
    sp.add_argument("--out", default="out")
    sp.add_argument("--workers", type=int, default=2)
    sp.set_defaults(fn=_cmd_batch)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except PotoptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
