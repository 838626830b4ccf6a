"""Economic horizon optimization and the shrinking-horizon feedback loop.

The optimizer works on the reduced state (bath, ledge and sidewall
temperatures plus ledge mass); thickness bounds translate exactly to mass
bounds because the mass/thickness map is monotone.  A horizon solve
minimizes electricity plus material cost minus metal revenue subject to the
transcribed dynamics, operating boxes, input rate limits, the terminal
ledge-return window and (optionally) a power-tracking band.

The feedback loop repeatedly solves the remaining horizon, applies the
first ``theta`` seconds of the optimal inputs to a truth model (the lumped
model itself or the grid variant), replaces the optimizer state with the
mass-weighted average of the truth state, and shrinks the horizon.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bath import SpeciesMasses
from .collocation import (
    LobattoBasis,
    Mesh,
    TranscribedNLP,
    build_basis,
    eval_trajectory,
    make_layout,
    refined_mesh,
    sample_trajectory,
    transcribe,
)
from .economics import HOUR, EconomicParameters, PowerTarget, PriceProfile
from .errors import DomainError, InfeasibleProblemError
from .gridsim import GridSpec, init_grid, mass_weighted_average, step_grid
from .model import (
    CellState,
    Conserved,
    ControlInput,
    cell_voltage,
    expand_state,
    faraday_production_rate,
    integrate_lumped,
    ledge_mass_from_thickness,
    ledge_thickness_from_mass,
    reduced_jacobian,
    reduced_rhs,
    reduced_state,
)
from .nlp import NlpProblem, SolverOptions, SolverResult, WarmStart, solve
from .parameters import CellParameters

__all__ = ["OptimizationSpec", "FeedbackConfig", "OptimalTrajectory",
           "HorizonProblem", "build_problem", "solve_horizon",
           "feedback_update_run", "nominal_input"]


@dataclass(frozen=True)
class OptimizationSpec:
    """Horizon, operating boxes, rate limits and tracking tolerances."""

    t0_h: float = 0.0
    tf_h: float = 48.0
    ledge_bounds_m: tuple[float, float] = (0.02, 0.15)
    current_bounds_a: tuple[float, float] = (200e3, 1.25 * 425e3)
    acd_bounds_m: tuple[float, float] = (0.025, 0.05)
    current_rate_a_per_h: float = 360e3
    acd_rate_m_per_h: float = 0.0036
    terminal_window_m: float = 0.002          # ledge-thickness return tolerance
    power_band_w: float = 53_550.0            # 3% of nominal 1.785 MW
    segments: int = 48
    nodes: int = 7
    # wide numerical safety boxes for the temperatures
    t_bath_box: tuple[float, float] = (800.0, 1100.0)
    t_ldg_box: tuple[float, float] = (300.0, 1000.0)
    t_sw_box: tuple[float, float] = (50.0, 950.0)

    def validate(self) -> None:
        for name in ("ledge_bounds_m", "current_bounds_a", "acd_bounds_m",
                     "t_bath_box", "t_ldg_box", "t_sw_box"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DomainError(f"{name}: lower bound must be below upper")
        if self.terminal_window_m <= 0 or self.power_band_w <= 0:
            raise DomainError("terminal window and power band must be > 0")
        if self.current_rate_a_per_h <= 0 or self.acd_rate_m_per_h <= 0:
            raise DomainError("rate limits must be > 0")
        if self.tf_h <= self.t0_h:
            raise DomainError("tf must exceed t0")
        if self.segments < 1 or self.nodes < 2:
            raise DomainError("mesh needs segments >= 1 and nodes >= 2")


@dataclass(frozen=True)
class FeedbackConfig:
    """Update interval and truth-model selection for the feedback loop."""

    theta_s: float = 600.0
    truth: str = "grid"              # "lumped" | "grid"
    grid: GridSpec = field(default_factory=GridSpec)
    perturbation: float = 0.0
    seed: int = 0

    def validate(self, horizon_s: float) -> None:
        if self.theta_s <= 0:
            raise DomainError("theta must be > 0")
        n = horizon_s / self.theta_s
        if abs(n - round(n)) > 1e-9:
            raise DomainError(
                f"theta = {self.theta_s} s must divide the horizon {horizon_s} s evenly")
        if self.truth not in ("lumped", "grid"):
            raise DomainError(f"truth model must be 'lumped' or 'grid', got {self.truth!r}")


@dataclass
class OptimalTrajectory:
    """Solved (or realized) trajectory with derived outputs and diagnostics."""

    times: np.ndarray
    t_bath: np.ndarray
    t_ldg: np.ndarray
    t_sw: np.ndarray
    m_ldg: np.ndarray
    l_ldg: np.ndarray
    m_bath: np.ndarray
    i_line: np.ndarray
    acd: np.ndarray
    v_cell: np.ndarray
    power: np.ndarray
    t_liq: np.ndarray
    superheat: np.ndarray
    production_kg_h: np.ndarray
    objective: float
    status: str
    margins: dict = field(default_factory=dict)
    solver_stats: dict = field(default_factory=dict)
    iteration_log: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "i_line", "acd", "t_bath", "t_ldg", "t_sw",
                        "l_ldg", "m_bath", "v_cell", "P", "T_liq", "superheat"])
            for k in range(len(self.times)):
                w.writerow([f"{self.times[k]:.3f}", f"{self.i_line[k]:.3f}",
                            f"{self.acd[k]:.6f}", f"{self.t_bath[k]:.4f}",
                            f"{self.t_ldg[k]:.4f}", f"{self.t_sw[k]:.4f}",
                            f"{self.l_ldg[k]:.6f}", f"{self.m_bath[k]:.3f}",
                            f"{self.v_cell[k]:.5f}", f"{self.power[k]:.2f}",
                            f"{self.t_liq[k]:.4f}", f"{self.superheat[k]:.4f}"])

    def summary(self) -> dict:
        return {"objective": self.objective, "status": self.status,
                "margins": self.margins, "solver": self.solver_stats,
                "iterations": self.iteration_log}

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, default=float) + "\n")


def nominal_input(params: CellParameters, i_line: float = 425e3, acd: float = 0.028) -> ControlInput:
    return ControlInput(i_line, acd)


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

@dataclass
class HorizonProblem:
    """A transcribed horizon plus everything needed to interpret solutions."""

    tnlp: TranscribedNLP
    mesh: Mesh
    basis: LobattoBasis
    layout: object
    params: CellParameters
    econ: EconomicParameters
    prices: PriceProfile
    target: PowerTarget | None
    conserved: Conserved
    initial_state: CellState
    spec: OptimizationSpec

    def initial_guess(self) -> np.ndarray:
        """Steady states everywhere; currents pre-shaped to the power target."""
        lay = self.layout
        x0 = reduced_state(self.initial_state)
        x = np.tile(x0, (lay.n_points, 1))
        u0 = np.array([425e3, 0.028])
        u = np.tile(u0, (lay.n_boundaries, 1))
        if self.target is not None:
            p0 = u0[0] * cell_voltage(None, ControlInput(*u0), self.params).v_cell
            tb = self.mesh.boundaries
            scale = np.clip(self.target.value(tb) / p0, 0.4, 1.6)
            u[:, 0] = np.clip(u0[0] * scale, *self.spec.current_bounds_a)
        return lay.join(x, u)


def _power_and_jac(params: CellParameters):
    """Vectorized cell power P(u) and dP/du for collocation-point inputs."""
    g_bath = 1.0 / (params.bath_conductivity * params.anode_area)
    b_total = params.b_surface_anode + params.b_conc_anode + params.b_conc_cathode

    def power(u_pts: np.ndarray) -> np.ndarray:
        i, a = u_pts[:, 0], u_pts[:, 1]
        ln = np.where(i > params.i_ref, np.log(np.maximum(i, params.i_ref) / params.i_ref), 0.0)
        v = params.v_reversible + b_total * ln \
            + i * ((a - params.bubble_thickness) * g_bath + params.r_fixed)
        return i * v

    def power_jac(u_pts: np.ndarray) -> np.ndarray:
        i, a = u_pts[:, 0], u_pts[:, 1]
        ln = np.where(i > params.i_ref, np.log(np.maximum(i, params.i_ref) / params.i_ref), 0.0)
        r_tot = (a - params.bubble_thickness) * g_bath + params.r_fixed
        v = params.v_reversible + b_total * ln + i * r_tot
        dv_di = np.where(i > params.i_ref, b_total / np.maximum(i, params.i_ref), 0.0) + r_tot
        out = np.empty((len(i), 2))
        out[:, 0] = v + i * dv_di
        out[:, 1] = i * i * g_bath
        return out

    return power, power_jac


def build_problem(spec: OptimizationSpec, params: CellParameters,
                  econ: EconomicParameters, initial_state: CellState,
                  prices: PriceProfile, power_target: PowerTarget | None = None,
                  mesh: Mesh | None = None, basis: LobattoBasis | None = None,
                  filter_tau_h: float = 0.2,
                  terminal_anchor_m: float | None = None) -> HorizonProblem:
    """Assemble the transcribed NLP for one horizon.

    The mesh defaults to uniform segments refined around the target's switch
    times (piecewise-linear inputs cannot follow a 0.2 h filtered step across
    a multi-hour segment otherwise).  Raw (unfiltered) targets are filtered
    here before the band is installed.
    """
    spec.validate()
    params.validate()
    econ.validate()
    initial_state.validate(params)
    t0, tf = spec.t0_h * HOUR, spec.tf_h * HOUR

    l0 = initial_state.l_ldg
    lo, hi = spec.ledge_bounds_m
    if not (lo - 1e-12 <= l0 <= hi + 1e-12):
        raise DomainError(f"initial ledge thickness {l0} m outside bounds {spec.ledge_bounds_m}")
    prices.require_coverage(spec.tf_h - spec.t0_h, spec.t0_h)

    if power_target is not None and not power_target.filtered:
        power_target = replace(power_target, tau_s=filter_tau_h * HOUR, filtered=True)

    if mesh is None:
        switches = power_target.switch_times_within(t0, tf) if power_target is not None else ()
        mesh = refined_mesh(t0, tf, spec.segments, switches)
    if basis is None:
        basis = build_basis(spec.nodes)

    conserved = Conserved.from_state(initial_state)
    layout = make_layout(mesh, basis, 4, 2)

    def dyn(x, u):
        return reduced_rhs(x, u, params, conserved)

    def dyn_jac(x, u):
        return reduced_jacobian(x, u, params, conserved)

    power, power_jac = _power_and_jac(params)
    c_f = faraday_production_rate(1.0, params)  # kg/h per A
    margin = econ.material_cost - econ.metal_price

    def integrand(t, x, u):
        pr = prices.value_at_seconds(t)
        return pr * power(u) / 3.6e9 + margin * c_f * u[:, 0] / HOUR

    def integrand_grad(t, x, u):
        pr = prices.value_at_seconds(t)
        gu = power_jac(u) * np.asarray(pr)[:, None] / 3.6e9
        gu[:, 0] += margin * c_f / HOUR
        return np.zeros((len(t), 4)), gu

    m_lo = ledge_mass_from_thickness(lo, params)
    m_hi = ledge_mass_from_thickness(hi, params)
    state_lb = np.array([spec.t_bath_box[0], spec.t_ldg_box[0], spec.t_sw_box[0], m_lo])
    state_ub = np.array([spec.t_bath_box[1], spec.t_ldg_box[1], spec.t_sw_box[1], m_hi])
    input_lb = np.array([spec.current_bounds_a[0], spec.acd_bounds_m[0]])
    input_ub = np.array([spec.current_bounds_a[1], spec.acd_bounds_m[1]])
    rate_lb = -np.array([spec.current_rate_a_per_h, spec.acd_rate_m_per_h]) / HOUR
    rate_ub = -rate_lb

    # terminal window around the scenario's original ledge thickness (the
    # shrinking-horizon loop keeps the anchor fixed as t0 advances)
    anchor = terminal_anchor_m if terminal_anchor_m is not None else l0
    m0 = initial_state.m_ldg
    eps = spec.terminal_window_m
    term_lo = ledge_mass_from_thickness(max(anchor - eps, 1e-6), params) - m0
    term_hi = ledge_mass_from_thickness(min(anchor + eps, hi), params) - m0

    x_init = reduced_state(initial_state)
    tnlp = transcribe(
        dyn, mesh, basis, layout,
        x_init=x_init,
        state_bounds=(state_lb, state_ub),
        input_bounds=(input_lb, input_ub),
        rate_limits=(rate_lb, rate_ub),
        terminal=(3, term_lo, term_hi),
        power_fn=power if power_target is not None else None,
        power_jac=power_jac if power_target is not None else None,
        power_target=(power_target.value if power_target is not None else None),
        power_band=spec.power_band_w,
        cost_integrand=integrand,
        cost_gradient=integrand_grad,
        dynamics_jac=dyn_jac,
        state_scale=np.array([100.0, 100.0, 100.0, 2000.0]),
        input_scale=np.array([4e5, 0.03]),
        cost_scale=1.0 / 5000.0,
    )
    return HorizonProblem(tnlp, mesh, basis, layout, params, econ, prices,
                          power_target, conserved, initial_state, spec)


# ---------------------------------------------------------------------------
# horizon solve
# ---------------------------------------------------------------------------

def _trajectory_from_points(problem: HorizonProblem, solution: np.ndarray,
                            objective: float, status: str, margins: dict,
                            stats: dict) -> OptimalTrajectory:
    lay, params = problem.layout, problem.params
    x, u_b = lay.split(solution)
    t = problem.tnlp.point_times
    # inputs at point times
    _, u = sample_trajectory(solution, lay, problem.mesh, problem.basis, t)
    power, _ = _power_and_jac(params)
    p = power(u)
    v = p / u[:, 0]
    m_ldg = x[:, 3]
    m_bath = np.asarray(problem.conserved.m_total - m_ldg)
    l = np.array([ledge_thickness_from_mass(m, params) for m in m_ldg])
    species = np.asarray(problem.conserved.species)
    from .bath import _liquidus_raw
    pct = [100.0 * species[j] / m_bath for j in range(6)]
    t_liq = _liquidus_raw(*pct)
    return OptimalTrajectory(
        times=t, t_bath=x[:, 0], t_ldg=x[:, 1], t_sw=x[:, 2], m_ldg=m_ldg,
        l_ldg=l, m_bath=m_bath, i_line=u[:, 0], acd=u[:, 1], v_cell=v, power=p,
        t_liq=t_liq, superheat=x[:, 0] - t_liq,
        production_kg_h=faraday_production_rate(1.0, params) * u[:, 0],
        objective=objective, status=status, margins=margins, solver_stats=stats)


def solve_horizon(problem: HorizonProblem, options: SolverOptions | None = None,
                  warm_start: WarmStart | None = None) -> tuple[OptimalTrajectory, SolverResult]:
    """Solve one horizon; the result keeps node-resolution trajectories."""
    nlp = NlpProblem.from_transcription(problem.tnlp)
    nlp.x0 = problem.initial_guess()
    result = solve(nlp, options, warm_start)
    margins = problem.tnlp.margins(result.x) if np.all(np.isfinite(result.x)) else {}
    stats = {"iterations": result.iterations, "nfev": result.nfev,
             "max_violation": result.max_violation,
             "kkt_stationarity": result.kkt_stationarity,
             "wall_time": result.wall_time}
    traj = _trajectory_from_points(problem, result.x, result.objective,
                                   result.status, margins, stats)
    return traj, result


# ---------------------------------------------------------------------------
# shrinking-horizon feedback loop
# ---------------------------------------------------------------------------

def _master_boundaries(spec: OptimizationSpec, target: PowerTarget | None) -> np.ndarray:
    t0, tf = spec.t0_h * HOUR, spec.tf_h * HOUR
    switches = target.switch_times_within(t0, tf) if target is not None else ()
    return refined_mesh(t0, tf, spec.segments, switches).boundaries


def _input_fn_from_solution(solution, layout, mesh, basis):
    def u_fn(t):
        _, u = eval_trajectory(solution, layout, mesh, basis, t)
        return (float(u[0]), float(u[1]))
    return u_fn


def feedback_update_run(spec: OptimizationSpec, feedback: FeedbackConfig, *,
                        params: CellParameters, econ: EconomicParameters,
                        initial_state: CellState, prices: PriceProfile,
                        power_target: PowerTarget | None = None,
                        options: SolverOptions | None = None,
                        sample_dt_s: float = 120.0) -> OptimalTrajectory:
    """Run the shrinking-horizon loop against the configured truth model.

    Each iteration solves the remaining horizon, retains the first ``theta``
    seconds of inputs, applies them to the truth model, and restarts from
    the mass-weighted averaged truth state.  The returned trajectory carries
    the realized (truth-model) states under the retained inputs; an
    infeasible iteration aborts with :class:`InfeasibleProblemError`.
    """
    spec.validate()
    t0, tf = spec.t0_h * HOUR, spec.tf_h * HOUR
    feedback.validate(tf - t0)
    theta = feedback.theta_s
    n_iter = int(round((tf - t0) / theta))
    master = _master_boundaries(spec, power_target)

    state = initial_state
    grid = None
    if feedback.truth == "grid":
        grid = init_grid(initial_state, feedback.grid, feedback.perturbation,
                         params, feedback.seed)

    times_acc: list[np.ndarray] = []
    states_acc: list[np.ndarray] = []
    inputs_acc: list[np.ndarray] = []
    log: list[dict] = []
    prev = None  # (solution, layout, mesh, basis)

    for j in range(n_iter):
        tj = t0 + j * theta
        bnds = np.concatenate([[tj], master[master > tj + 1e-9]])
        mesh = Mesh(bnds)
        sub = replace(spec, t0_h=tj / HOUR)
        problem = build_problem(sub, params, econ, state, prices, power_target,
                                mesh=mesh, terminal_anchor_m=initial_state.l_ldg)

        warm = None
        if prev is not None:
            ps, play, pmesh, pbasis = prev
            xw, uw = sample_trajectory(ps, play, pmesh, pbasis, problem.tnlp.point_times)
            xw[0] = reduced_state(state)  # truth-updated start
            ub_w = np.array([sample_trajectory(ps, play, pmesh, pbasis, [tb])[1][0]
                             for tb in mesh.boundaries])
            warm = WarmStart(problem.layout.join(xw, ub_w))

        traj, result = solve_horizon(problem, options, warm)
        log.append({"iteration": j, "t_start_h": tj / HOUR, "status": result.status,
                    "objective": result.objective, "violation": result.max_violation,
                    "outer_iterations": result.iterations, "wall_time": result.wall_time})
        if result.status != "optimal":
            raise InfeasibleProblemError(
                f"feedback iteration {j} (t = {tj / HOUR:.2f} h) ended {result.status}",
                iteration=j, result=result)
        prev = (result.x, problem.layout, problem.mesh, problem.basis)

        # retain [tj, tj+theta] and apply to the truth model
        u_fn = _input_fn_from_solution(result.x, problem.layout, problem.mesh, problem.basis)
        n_s = max(2, int(math.ceil(theta / sample_dt_s)) + 1)
        t_ret = np.linspace(tj, tj + theta, n_s)
        _, u_ret = sample_trajectory(result.x, problem.layout, problem.mesh,
                                     problem.basis, t_ret)

        if feedback.truth == "lumped":
            lt = integrate_lumped(state, lambda t: u_fn(t), params,
                                  (tj, tj + theta), t_eval=t_ret, rtol=1e-9)
            y_real = np.column_stack([lt.t_bath, lt.t_ldg, lt.t_sw, lt.m_ldg])
            state = lt.final_state(params)
        else:
            ys = []
            for k in range(n_s - 1):
                ta, tb = t_ret[k], t_ret[k + 1]
                um = u_fn(0.5 * (ta + tb))
                avg0 = mass_weighted_average(grid)
                ys.append([avg0.t_bath, avg0.t_ldg, avg0.t_sw, avg0.m_ldg])
                grid = step_grid(grid, ControlInput(*um), tb - ta)
            avg = mass_weighted_average(grid)
            ys.append([avg.t_bath, avg.t_ldg, avg.t_sw, avg.m_ldg])
            y_real = np.array(ys)
            state = avg

        keep = slice(0, n_s - 1) if j < n_iter - 1 else slice(0, n_s)
        times_acc.append(t_ret[keep])
        states_acc.append(y_real[keep])
        inputs_acc.append(u_ret[keep])

    times = np.concatenate(times_acc)
    ys = np.vstack(states_acc)
    us = np.vstack(inputs_acc)

    power, _ = _power_and_jac(params)
    p = power(us)
    v = p / us[:, 0]
    conserved = Conserved.from_state(initial_state)
    m_bath = np.asarray(conserved.m_total) - ys[:, 3]
    l = np.array([ledge_thickness_from_mass(m, params) for m in ys[:, 3]])
    from .bath import _liquidus_raw
    species = np.asarray(conserved.species)
    pct = [100.0 * species[jj] / m_bath for jj in range(6)]
    t_liq = _liquidus_raw(*pct)

    ledge_lo, ledge_hi = spec.ledge_bounds_m
    margins = {"ledge_lower_m": float(np.min(l - ledge_lo)),
               "ledge_upper_m": float(np.min(ledge_hi - l)),
               "terminal_m": spec.terminal_window_m - abs(float(l[-1]) - initial_state.l_ldg)}

    from .economics import economics
    report = economics(times, p, faraday_production_rate(1.0, params) * us[:, 0],
                       prices, econ)

    return OptimalTrajectory(
        times=times, t_bath=ys[:, 0], t_ldg=ys[:, 1], t_sw=ys[:, 2], m_ldg=ys[:, 3],
        l_ldg=l, m_bath=m_bath, i_line=us[:, 0], acd=us[:, 1], v_cell=v, power=p,
        t_liq=t_liq, superheat=ys[:, 0] - t_liq,
        production_kg_h=faraday_production_rate(1.0, params) * us[:, 0],
        objective=report.objective, status="optimal", margins=margins,
        solver_stats={"iterations": n_iter}, iteration_log=log)
