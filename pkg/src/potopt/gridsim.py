"""Grid-refined variant of the cell model used as the feedback truth source.

Each node carries the lumped physics scaled by its share of the cell
(masses, areas and heat generation all scale with the share), plus lateral
heat conduction between neighbouring bath volumes.  A 1-by-1 grid therefore
reproduces the lumped model exactly, and a uniform grid under symmetric
inputs stays uniform.

Stepping is explicit (classic fourth-order Runge-Kutta) with automatic
substepping below the reported stability bound; total bath-plus-ledge mass
is conserved exactly because per-node bath mass is reconstructed from the
per-node conserved total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bath import SPECIES, SpeciesMasses
from .errors import DomainError, StabilityError
from .model import (
    CellState,
    Conserved,
    ControlInput,
    ledge_thickness_from_mass,
    reduced_rhs,
)
from .parameters import CellParameters

__all__ = ["GridSpec", "GridState", "init_grid", "step_grid",
           "stability_limit", "mass_weighted_average", "export_grid_csv"]


@dataclass(frozen=True)
class GridSpec:
    """Grid dimensions, per-node mass scaling, and lateral coupling."""

    nx: int = 3
    ny: int = 5
    mass_factors: np.ndarray | None = None   # (nx, ny), mean 1, > 0
    lateral_conductivity: float = 2000.0     # W/(m K) effective bath coupling

    def validate(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise DomainError(f"grid dimensions must be >= 1, got {self.nx}x{self.ny}")
        if self.lateral_conductivity < 0:
            raise DomainError("lateral_conductivity must be >= 0")
        f = self.factors()
        if f.shape != (self.nx, self.ny):
            raise DomainError(f"mass_factors shape {f.shape} != ({self.nx}, {self.ny})")
        if np.any(f <= 0):
            raise DomainError("mass_factors must be > 0")
        if abs(f.mean() - 1.0) > 1e-9:
            raise DomainError(f"mass_factors must average to 1, got {f.mean()}")

    def factors(self) -> np.ndarray:
        if self.mass_factors is None:
            return np.ones((self.nx, self.ny))
        return np.asarray(self.mass_factors, dtype=float)

    def shares(self) -> np.ndarray:
        """Per-node fraction of the whole cell; sums to 1."""
        f = self.factors()
        return (f / f.sum()).ravel()


@dataclass
class GridState:
    """Per-node thermal/mass state; arrays are flat over nx*ny nodes."""

    spec: GridSpec
    params: CellParameters
    t_bath: np.ndarray
    t_ldg: np.ndarray
    t_sw: np.ndarray
    m_ldg: np.ndarray
    m_total: np.ndarray          # per-node bath+ledge, conserved
    species: np.ndarray          # (n, 6) per-node additive masses, conserved
    time: float = 0.0

    @property
    def m_bath(self) -> np.ndarray:
        return self.m_total - self.m_ldg

    @property
    def l_ldg(self) -> np.ndarray:
        shares = self.spec.shares()
        return np.array([ledge_thickness_from_mass(m / s, self.params)
                         for m, s in zip(self.m_ldg, shares)])

    def total_mass(self) -> float:
        return float(self.m_total.sum())

    def copy(self) -> "GridState":
        return GridState(self.spec, self.params, self.t_bath.copy(), self.t_ldg.copy(),
                         self.t_sw.copy(), self.m_ldg.copy(), self.m_total.copy(),
                         self.species.copy(), self.time)


def init_grid(lumped: CellState, spec: GridSpec, perturbation: float,
              params: CellParameters, seed: int = 0) -> GridState:
    """Distribute a lumped state over the grid.

    Masses split by the spec's scaling factors; temperatures receive a
    deterministic (seeded) relative perturbation of at most ``perturbation``.
    At zero perturbation the mass-weighted average returns ``lumped`` exactly.
    """
    spec.validate()
    if not 0.0 <= perturbation <= 0.1:
        raise DomainError(f"perturbation must lie in [0, 0.1], got {perturbation}")
    shares = spec.shares()
    n = shares.size
    rng = np.random.default_rng(seed)

    def perturbed(value: float) -> np.ndarray:
        if perturbation == 0.0:
            return np.full(n, value)
        return value * (1.0 + rng.uniform(-perturbation, perturbation, size=n))

    return GridState(
        spec=spec, params=params,
        t_bath=perturbed(lumped.t_bath),
        t_ldg=perturbed(lumped.t_ldg),
        t_sw=perturbed(lumped.t_sw),
        m_ldg=lumped.m_ldg * shares,
        m_total=lumped.total_mass() * shares,
        species=np.outer(shares, lumped.species.as_array()),
    )


def _lateral_heat(grid: GridState, t_bath: np.ndarray) -> np.ndarray:
    """Net conduction into each node's bath from its four neighbours, W."""
    spec, p = grid.spec, grid.params
    if spec.lateral_conductivity == 0.0 or (spec.nx == 1 and spec.ny == 1):
        return np.zeros_like(t_bath)
    t = t_bath.reshape(spec.nx, spec.ny)
    dx = p.width / spec.nx
    dy = p.length / spec.ny
    g_x = spec.lateral_conductivity * dy * p.ledge_height / dx
    g_y = spec.lateral_conductivity * dx * p.ledge_height / dy
    q = np.zeros_like(t)
    q[:-1, :] += g_x * (t[1:, :] - t[:-1, :])
    q[1:, :] += g_x * (t[:-1, :] - t[1:, :])
    q[:, :-1] += g_y * (t[:, 1:] - t[:, :-1])
    q[:, 1:] += g_y * (t[:, :-1] - t[:, 1:])
    return q.ravel()


def _grid_rhs(grid: GridState, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Node derivatives for stacked state y = (n, 4); ledge-mass row is extensive."""
    shares = grid.spec.shares()
    y_eq = y.copy()
    y_eq[:, 3] = y[:, 3] / shares  # full-cell-equivalent ledge mass
    conserved = Conserved(grid.m_total / shares, grid.species / shares[:, None])
    q_lat = _lateral_heat(grid, y[:, 0]) / shares
    dy = reduced_rhs(y_eq, u, grid.params, conserved, q_extra=q_lat)
    dy[:, 3] *= shares
    return dy


def stability_limit(grid: GridState) -> float:
    """Largest single explicit step [s] the grid tolerates.

    Conservative linearized bound: the stiffest node time constant among
    bath, ledge and sidewall balances (including lateral coupling), scaled
    by the classic RK4 real-axis stability limit.
    """
    p = grid.params
    shares = grid.spec.shares()
    l = grid.l_ldg
    rim = p.perimeter - 8.0 * l
    s_b = rim * p.ledge_height * shares
    r_ls = (0.5 * l / p.k_ledge + 0.5 * p.sidewall_thickness / p.k_sidewall) \
        / (p.area_ledge_sidewall * shares)
    r_sa = (0.5 * p.sidewall_thickness / p.k_sidewall + p.shell_thickness / p.k_shell
            + 1.0 / p.h_shell_ambient) / (p.area_external * shares)
    g_lat = 0.0
    if grid.spec.nx * grid.spec.ny > 1:
        dx = p.width / grid.spec.nx
        dy = p.length / grid.spec.ny
        g_lat = 2 * grid.spec.lateral_conductivity * p.ledge_height * (dy / dx + dx / dy)

    tau_bath = p.cp_bath * grid.m_bath / (p.h_ledge_bath * s_b + g_lat)
    k5t = 2.0 * p.k_ledge * p.area_ledge_sidewall * shares / l
    tau_ldg = p.cp_ledge * grid.m_ldg / (k5t + 1.0 / r_ls)
    tau_sw = p.cp_sidewall * p.sidewall_mass * shares / (1.0 / r_ls + 1.0 / r_sa)
    tau_min = min(tau_bath.min(), tau_ldg.min(), tau_sw.min())
    return 2.5 * tau_min


def step_grid(grid: GridState, inp: ControlInput, dt: float,
              substep: float | None = None) -> GridState:
    """Advance the grid by ``dt`` seconds under a constant input.

    Integration uses RK4 with internal substeps.  An explicit ``substep``
    above the stability bound raises :class:`StabilityError`; by default the
    substep is a quarter of the stiffest node time constant.
    """
    if dt <= 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    inp.validate(grid.params)
    limit = stability_limit(grid)
    if substep is not None:
        if substep > limit:
            raise StabilityError(f"substep {substep} s exceeds stability bound {limit:.1f} s")
        h_target = substep
    else:
        h_target = 0.1 * limit  # 0.25 * tau_min
    n_steps = max(1, int(np.ceil(dt / h_target)))
    h = dt / n_steps

    out = grid.copy()
    u = np.array([inp.i_line, inp.acd])
    y = np.column_stack([out.t_bath, out.t_ldg, out.t_sw, out.m_ldg])
    for _ in range(n_steps):
        k1 = _grid_rhs(out, y, u)
        k2 = _grid_rhs(out, y + 0.5 * h * k1, u)
        k3 = _grid_rhs(out, y + 0.5 * h * k2, u)
        k4 = _grid_rhs(out, y + h * k3, u)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    out.t_bath, out.t_ldg, out.t_sw, out.m_ldg = (y[:, i].copy() for i in range(4))
    out.time = grid.time + dt
    return out


def mass_weighted_average(grid: GridState) -> CellState:
    """Collapse the grid to a lumped state with mass-based weighting."""
    shares = grid.spec.shares()
    m_bath = grid.m_bath
    m_ldg = grid.m_ldg
    t_bath = float(np.average(grid.t_bath, weights=m_bath))
    t_ldg = float(np.average(grid.t_ldg, weights=m_ldg))
    t_sw = float(np.average(grid.t_sw, weights=shares * grid.params.sidewall_mass))
    species = SpeciesMasses.from_array(grid.species.sum(axis=0))
    return CellState.build(t_bath, t_ldg, t_sw, float(m_ldg.sum()),
                           float(m_bath.sum()), species, grid.params)


def export_grid_csv(grid: GridState, path: str | Path) -> None:
    """Write one row per node: indices, coordinates, and every state field."""
    spec, p = grid.spec, grid.params
    l = grid.l_ldg
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x_m", "y_m", "t_bath", "t_ldg", "t_sw",
                    "m_ldg", "l_ldg", "m_bath", *[f"m_{s}" for s in SPECIES]])
        for idx in range(spec.nx * spec.ny):
            i, j = divmod(idx, spec.ny)
            x = (i + 0.5) * p.width / spec.nx
            yy = (j + 0.5) * p.length / spec.ny
            w.writerow([i, j, f"{x:.4f}", f"{yy:.4f}",
                        repr(grid.t_bath[idx]), repr(grid.t_ldg[idx]), repr(grid.t_sw[idx]),
                        repr(grid.m_ldg[idx]), repr(l[idx]), repr(grid.m_bath[idx]),
                        *[repr(v) for v in grid.species[idx]]])
