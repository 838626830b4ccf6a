"""Nonlinear programming solver for the transcribed horizon problems.

Augmented-Lagrangian outer loop with a bound-constrained L-BFGS-B inner
solver.  Two-sided constraints cl <= c(x) <= cu are handled with the
Powell-Hestenes-Rockafellar shift: the slack is eliminated in closed form
by clipping c + lambda/mu back into [cl, cu].  All iterations run in scaled
variables; problems at this scale (a few thousand variables, dense
Jacobians) fit comfortably.

Infeasibility is reported, not certified: when the penalty weight has hit
its cap and the measured violation stagnates above tolerance, the problem
is declared infeasible with the best point found.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError

__all__ = ["NlpProblem", "SolverOptions", "SolverResult", "WarmStart",
           "solve", "kkt_residuals", "finite_difference_check"]


@dataclass
class NlpProblem:
    """General NLP: min f(x) s.t. cl <= c(x) <= cu, lb <= x <= ub.

    Derivative callbacks are optional; missing ones fall back to internal
    finite differences.  Scaling vectors map variables and constraint rows
    to order one before iteration.
    """

    n: int
    cost: Callable[[np.ndarray], float]
    cons: Callable[[np.ndarray], np.ndarray] | None = None
    cost_grad: Callable[[np.ndarray], np.ndarray] | None = None
    cons_jac: Callable[[np.ndarray], np.ndarray] | None = None
    cons_jac_rmatvec: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    cons_lb: np.ndarray | None = None
    cons_ub: np.ndarray | None = None
    var_lb: np.ndarray | None = None
    var_ub: np.ndarray | None = None
    var_scale: np.ndarray | None = None
    con_scale: np.ndarray | None = None
    cost_scale: float = 1.0
    x0: np.ndarray | None = None

    def validate(self) -> None:
        for name in ("cons_lb", "cons_ub"):
            v = getattr(self, name)
            if self.cons is not None and v is None:
                raise DomainError(f"{name} required when constraints are present")
        if self.cons_lb is not None and self.cons_ub is not None:
            if len(self.cons_lb) != len(self.cons_ub):
                raise DomainError("constraint bound arrays disagree in length")
            if np.any(self.cons_lb > self.cons_ub + 1e-15):
                raise DomainError("cons_lb exceeds cons_ub")

    @classmethod
    def from_transcription(cls, t) -> "NlpProblem":
        """Wrap a :class:`~potopt.collocation.TranscribedNLP`."""
        return cls(n=t.n_dec, cost=t.cost, cost_grad=t.cost_grad, cons=t.cons,
                   cons_jac=t.cons_jac, cons_jac_rmatvec=t.cons_jac_rmatvec,
                   cons_lb=t.cons_lb, cons_ub=t.cons_ub,
                   var_lb=t.var_lb, var_ub=t.var_ub, var_scale=t.var_scale,
                   con_scale=t.con_scale, cost_scale=t.cost_scale)


@dataclass
class SolverOptions:
    max_outer: int = 40
    max_inner: int = 500
    feasibility_tol: float = 1e-6
    optimality_tol: float = 1e-6
    mu0: float = 100.0
    mu_factor: float = 10.0
    mu_max: float = 1e9
    stall_outers: int = 4
    log: Callable[[str], None] | None = None

    def validate(self) -> None:
        if self.feasibility_tol <= 0 or self.optimality_tol <= 0:
            raise DomainError("tolerances must be > 0")


@dataclass
class WarmStart:
    x: np.ndarray
    multipliers: np.ndarray | None = None


@dataclass
class SolverResult:
    status: str                    # optimal | infeasible | iteration-limit | numerical-failure
    x: np.ndarray
    objective: float
    max_violation: float           # scaled units
    kkt_stationarity: float
    kkt_complementarity: float
    iterations: int
    nfev: int
    multipliers: np.ndarray
    log_lines: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def success(self) -> bool:
        return self.status == "optimal"


def _projected_gradient_norm(z, g, lb, ub):
    step = np.clip(z - g, lb, ub) - z
    return float(np.max(np.abs(step))) if len(step) else 0.0


def _fd_grad(fun, x, eps=1e-7):
    g = np.empty_like(x)
    f0 = fun(x)
    for i in range(len(x)):
        h = eps * max(1.0, abs(x[i]))
        xp = x.copy(); xp[i] += h
        g[i] = (fun(xp) - f0) / h
    return g


def _fd_jac(fun, x, m, eps=1e-7):
    J = np.empty((m, len(x)))
    f0 = np.asarray(fun(x))
    for i in range(len(x)):
        h = eps * max(1.0, abs(x[i]))
        xp = x.copy(); xp[i] += h
        J[:, i] = (np.asarray(fun(xp)) - f0) / h
    return J


def solve(problem: NlpProblem, options: SolverOptions | None = None,
          warm_start: WarmStart | None = None) -> SolverResult:
    """Solve the NLP; deterministic for identical inputs and options."""
    opt = options or SolverOptions()
    opt.validate()
    problem.validate()
    t_start = time.perf_counter()
    n = problem.n

    sx = np.ones(n) if problem.var_scale is None else np.asarray(problem.var_scale, float)
    sf = problem.cost_scale
    lb = (np.full(n, -np.inf) if problem.var_lb is None else np.asarray(problem.var_lb, float)) / sx
    ub = (np.full(n, np.inf) if problem.var_ub is None else np.asarray(problem.var_ub, float)) / sx

    log_lines: list[str] = []

    def emit(line: str) -> None:
        log_lines.append(line)
        if opt.log is not None:
            opt.log(line)

    # inconsistent variable bounds: report infeasible rather than raising
    if np.any(lb > ub + 1e-12):
        gap = float(np.max(lb - ub))
        x_mid = np.where(np.isfinite(lb), lb, 0.0)
        emit("variable bounds inconsistent; infeasible by construction")
        return SolverResult("infeasible", x_mid * sx, np.nan, gap, np.nan, np.nan,
                            0, 0, np.zeros(0), log_lines,
                            time.perf_counter() - t_start)

    have_cons = problem.cons is not None and problem.cons_lb is not None \
        and len(problem.cons_lb) > 0
    m = len(problem.cons_lb) if have_cons else 0
    sc = np.ones(m) if problem.con_scale is None else np.asarray(problem.con_scale, float)
    cl = (np.asarray(problem.cons_lb, float) / sc) if have_cons else np.zeros(0)
    cu = (np.asarray(problem.cons_ub, float) / sc) if have_cons else np.zeros(0)

    nfev = 0

    cost_grad = problem.cost_grad
    if cost_grad is None:
        cost_grad = lambda x: _fd_grad(problem.cost, x)
    cons_jac = problem.cons_jac
    if have_cons and cons_jac is None:
        cons_jac = lambda x: _fd_jac(problem.cons, x, m)

    def eval_fg(z):
        nonlocal nfev
        nfev += 1
        x = z * sx
        return problem.cost(x) * sf, cost_grad(x) * sx * sf

    def eval_c(z):
        return problem.cons(z * sx) / sc

    if problem.cons_jac_rmatvec is not None:
        def jac_t_vec(z, v):
            return problem.cons_jac_rmatvec(z * sx, v / sc) * sx
    else:
        def jac_t_vec(z, v):
            J = cons_jac(z * sx) * (sx[None, :] / sc[:, None])
            return J.T @ v

    if warm_start is not None and warm_start.x is not None:
        z = np.clip(np.asarray(warm_start.x, float) / sx, lb, ub)
    elif problem.x0 is not None:
        z = np.clip(np.asarray(problem.x0, float) / sx, lb, ub)
    else:
        mid_lo = np.where(np.isfinite(lb), lb, -1.0)
        mid_hi = np.where(np.isfinite(ub), ub, 1.0)
        z = 0.5 * (mid_lo + mid_hi)

    lam = np.zeros(m)
    if warm_start is not None and warm_start.multipliers is not None \
            and len(warm_start.multipliers) == m:
        lam = np.asarray(warm_start.multipliers, float).copy()

    if not have_cons:
        # pure bound-constrained problem
        try:
            res = minimize(eval_fg, z, jac=True, method="L-BFGS-B",
                           bounds=list(zip(lb, ub)),
                           options={"maxiter": opt.max_inner * 4,
                                    "ftol": 1e-16, "gtol": opt.optimality_tol * 1e-2,
                                    "maxcor": 30})
        except FloatingPointError:
            return SolverResult("numerical-failure", z * sx, np.nan, np.nan, np.nan,
                                np.nan, 0, nfev, lam, log_lines,
                                time.perf_counter() - t_start)
        z = res.x
        fval, g = eval_fg(z)
        if not np.isfinite(fval):
            status = "numerical-failure"
        else:
            status = "optimal" if _projected_gradient_norm(z, g, lb, ub) <= opt.optimality_tol * 10 \
                else "iteration-limit"
        emit(f"unconstrained finish: f={fval:.6e} status={status}")
        return SolverResult(status, z * sx, fval / sf, 0.0,
                            _projected_gradient_norm(z, g, lb, ub), 0.0,
                            int(res.nit), nfev, lam, log_lines,
                            time.perf_counter() - t_start)

    mu = opt.mu0
    prev_viol = np.inf
    prev_fval = None
    stall = 0
    quiet = 0
    status = "iteration-limit"
    best = None

    for outer in range(1, opt.max_outer + 1):
        def al_fg(zz):
            f, g = eval_fg(zz)
            c = eval_c(zz)
            shifted = np.clip(c + lam / mu, cl, cu)
            r = c - shifted
            phi = f + lam @ r + 0.5 * mu * (r @ r)
            grad = g + jac_t_vec(zz, lam + mu * r)
            if not np.isfinite(phi):
                raise FloatingPointError("non-finite augmented Lagrangian")
            return phi, grad

        gtol = max(opt.optimality_tol * 0.1, 1e-3 * 0.2 ** outer)
        try:
            res = minimize(al_fg, z, jac=True, method="L-BFGS-B",
                           bounds=list(zip(lb, ub)),
                           options={"maxiter": opt.max_inner, "ftol": 1e-16,
                                    "gtol": gtol, "maxcor": 30})
        except FloatingPointError:
            status = "numerical-failure"
            z_best = best[0] if best is not None else z
            fval = problem.cost(z_best * sx)
            return SolverResult(status, z_best * sx, fval, np.nan, np.nan, np.nan,
                                outer, nfev, lam / (sc * sf), log_lines,
                                time.perf_counter() - t_start)
        step_norm = float(np.max(np.abs(res.x - z))) if len(z) else 0.0
        z = res.x

        c = eval_c(z)
        viol = float(np.max(np.maximum(c - cu, cl - c).clip(min=0.0), initial=0.0))
        shifted = np.clip(c + lam / mu, cl, cu)
        lam = lam + mu * (c - shifted)
        fval, g = eval_fg(z)
        glag = g + jac_t_vec(z, lam)
        pg = _projected_gradient_norm(z, glag, lb, ub)

        emit(f"iter {outer:3d}  obj {fval / sf: .8e}  viol {viol:.3e}  step {step_norm:.3e}  mu {mu:.1e}")

        if not np.isfinite(fval) or not np.isfinite(viol):
            status = "numerical-failure"
            break

        if best is None or viol < best[1] - 1e-16 or (viol <= best[1] and fval < best[2]):
            best = (z.copy(), viol, fval, lam.copy())

        if viol <= opt.feasibility_tol and pg <= opt.optimality_tol:
            status = "optimal"
            break

        # exhausted-progress exit: feasible and neither the point nor the
        # objective moves at optimality resolution over consecutive outers
        dobj = abs(fval - prev_fval) if prev_fval is not None else np.inf
        prev_fval = fval
        if viol <= opt.feasibility_tol and step_norm <= 100 * opt.optimality_tol \
                and dobj <= opt.optimality_tol * max(1.0, abs(fval)):
            quiet += 1
            if quiet >= 2:
                status = "optimal"
                break
        else:
            quiet = 0

        if viol > opt.feasibility_tol:
            if viol > 0.25 * prev_viol:
                mu = min(mu * opt.mu_factor, opt.mu_max)
            if mu >= opt.mu_max:
                if viol > 0.9 * prev_viol:
                    stall += 1
                else:
                    stall = 0
                if stall >= opt.stall_outers:
                    status = "infeasible"
                    break
        prev_viol = min(prev_viol, viol)

    if status != "optimal" and best is not None:
        z, viol, fval, lam = best
        c = eval_c(z)
        _, g = eval_fg(z)
        glag = g + jac_t_vec(z, lam)
        pg = _projected_gradient_norm(z, glag, lb, ub)

    comp = 0.0
    if m:
        slack = np.minimum(c - cl, cu - c)
        comp = float(np.max(np.abs(lam) * np.maximum(slack, 0.0), initial=0.0))

    return SolverResult(status, z * sx, fval / sf, viol, pg, comp,
                        outer, nfev, lam / (sc * sf), log_lines,
                        time.perf_counter() - t_start)


def kkt_residuals(problem: NlpProblem, point: np.ndarray,
                  multipliers: np.ndarray | None = None) -> dict:
    """Stationarity, primal feasibility and complementarity at a point.

    Stationarity is the projected-gradient norm of the Lagrangian onto the
    variable box; all norms are reported in the problem's scaled units.
    """
    n = problem.n
    x = np.asarray(point, float)
    if len(x) != n:
        raise DomainError(f"point has dimension {len(x)}, expected {n}")
    sx = np.ones(n) if problem.var_scale is None else np.asarray(problem.var_scale, float)
    sf = problem.cost_scale
    lb = (np.full(n, -np.inf) if problem.var_lb is None else np.asarray(problem.var_lb, float)) / sx
    ub = (np.full(n, np.inf) if problem.var_ub is None else np.asarray(problem.var_ub, float)) / sx
    z = x / sx

    cost_grad = problem.cost_grad or (lambda xx: _fd_grad(problem.cost, xx))
    g = cost_grad(x) * sx * sf

    if problem.cons is None or problem.cons_lb is None or len(problem.cons_lb) == 0:
        return {"stationarity": _projected_gradient_norm(z, g, lb, ub),
                "primal_feasibility": 0.0, "complementarity": 0.0}

    m = len(problem.cons_lb)
    sc = np.ones(m) if problem.con_scale is None else np.asarray(problem.con_scale, float)
    lam = np.zeros(m) if multipliers is None else np.asarray(multipliers, float) * sc * sf
    cons_jac = problem.cons_jac or (lambda xx: _fd_jac(problem.cons, xx, m))
    c = problem.cons(x) / sc
    cl = np.asarray(problem.cons_lb, float) / sc
    cu = np.asarray(problem.cons_ub, float) / sc
    J = cons_jac(x) * (sx[None, :] / sc[:, None])

    glag = g + J.T @ lam
    stat = _projected_gradient_norm(z, glag, lb, ub)
    feas = float(np.max(np.maximum(c - cu, cl - c).clip(min=0.0), initial=0.0))
    slack = np.maximum(np.minimum(c - cl, cu - c), 0.0)
    comp = float(np.max(np.abs(lam) * slack, initial=0.0))
    return {"stationarity": stat, "primal_feasibility": feas, "complementarity": comp}


def finite_difference_check(problem: NlpProblem, point: np.ndarray,
                            eps: float = 1e-6) -> float:
    """Largest relative error of supplied derivatives against central differences."""
    x = np.asarray(point, float)
    worst = 0.0
    if problem.cost_grad is not None:
        g = problem.cost_grad(x)
        for i in range(len(x)):
            h = eps * max(1.0, abs(x[i]))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            fd = (problem.cost(xp) - problem.cost(xm)) / (2 * h)
            worst = max(worst, abs(g[i] - fd) / max(1.0, abs(fd), abs(g[i])))
    if problem.cons is not None and problem.cons_jac is not None:
        J = problem.cons_jac(x)
        for i in range(len(x)):
            h = eps * max(1.0, abs(x[i]))
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            fd = (np.asarray(problem.cons(xp)) - np.asarray(problem.cons(xm))) / (2 * h)
            col_err = np.abs(J[:, i] - fd) / np.maximum(1.0, np.maximum(np.abs(fd), np.abs(J[:, i])))
            worst = max(worst, float(col_err.max(initial=0.0)))
    return worst
