"""Reduced-order thermal/electrochemical model of a single reduction cell.

State variables are the spatially averaged bath, ledge and sidewall
temperatures plus the ledge inventory.  The frozen ledge exchanges pure
cryolite with the bath, so the tracked additive masses are conserved and
the total of bath and ledge mass is constant along any trajectory: the
independent thermal state is (t_bath, t_ldg, t_sw, m_ldg), and bath mass,
ledge thickness and composition follow algebraically.

All functions are pure; everything is SI with temperatures in degC and the
metal production rate in kg/h at the interface where its 6.6 kWh/kg
preheat/reaction energy is charged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .bath import (
    SPECIES,
    BathComposition,
    SpeciesMasses,
    _liquidus_grad_raw,
    _liquidus_raw,
    liquidus_temperature,
)
from .errors import DomainError, GeometryError
from .parameters import CellParameters

__all__ = [
    "CellState", "ControlInput", "VoltageBreakdown", "StateDerivative",
    "Conserved", "faraday_production_rate", "cell_voltage", "heat_generation",
    "power_output", "superheat", "ledge_interfacial_areas",
    "ledge_mass_from_thickness", "ledge_thickness_from_mass",
    "state_derivative", "reduced_state", "reduced_rhs", "reduced_jacobian",
    "integrate_lumped", "LumpedTrajectory", "load_state", "save_state",
]


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ControlInput:
    """Line current [A] and anode-cathode distance [m]."""

    i_line: float
    acd: float

    def validate(self, params: CellParameters) -> None:
        if not self.i_line > 0.0:
            raise DomainError(f"i_line must be > 0, got {self.i_line}")
        if not self.acd > params.bubble_thickness:
            raise GeometryError(
                f"acd {self.acd} m must exceed the bubble layer {params.bubble_thickness} m")


@dataclass(frozen=True)
class VoltageBreakdown:
    """Cell voltage split into its additive components [V]."""

    v_rev: float
    v_overvoltage: float
    v_bath: float
    v_fixed_ohmic: float
    v_cell: float

    def validate(self) -> None:
        total = self.v_rev + self.v_overvoltage + self.v_bath + self.v_fixed_ohmic
        if abs(total - self.v_cell) > 1e-12 * max(1.0, abs(self.v_cell)):
            raise DomainError("voltage breakdown does not sum to v_cell")


@dataclass(frozen=True)
class CellState:
    """Lumped thermal/mass state of the cell."""

    t_bath: float          # degC
    t_ldg: float           # degC
    t_sw: float            # degC
    m_ldg: float           # kg
    l_ldg: float           # m
    m_bath: float          # kg
    species: SpeciesMasses

    @classmethod
    def build(cls, t_bath: float, t_ldg: float, t_sw: float, m_ldg: float,
              m_bath: float, species: SpeciesMasses, params: CellParameters) -> "CellState":
        """Construct with the ledge thickness derived from its mass."""
        return cls(t_bath, t_ldg, t_sw, m_ldg,
                   ledge_thickness_from_mass(m_ldg, params), m_bath, species)

    def validate(self, params: CellParameters) -> None:
        for name in ("m_ldg", "m_bath"):
            if getattr(self, name) < 0.0:
                raise DomainError(f"state field '{name}' must be >= 0")
        if self.l_ldg < 0.0:
            raise DomainError("state field 'l_ldg' must be >= 0")
        self.species.validate()
        l_ref = ledge_thickness_from_mass(self.m_ldg, params)
        if abs(l_ref - self.l_ldg) > 1e-9 * max(1e-6, abs(l_ref)):
            raise GeometryError(
                f"l_ldg={self.l_ldg} inconsistent with m_ldg={self.m_ldg} (expected {l_ref})")

    def composition(self) -> BathComposition:
        return self.species.composition(self.m_bath)

    def total_mass(self) -> float:
        return self.m_bath + self.m_ldg

    def as_dict(self) -> dict:
        return {
            "t_bath": self.t_bath, "t_ldg": self.t_ldg, "t_sw": self.t_sw,
            "m_ldg": self.m_ldg, "l_ldg": self.l_ldg, "m_bath": self.m_bath,
            "species": self.species.as_dict(),
        }


@dataclass(frozen=True)
class StateDerivative:
    """Time derivatives of the lumped state; mass exchange is exactly antisymmetric."""

    d_t_bath: float   # degC/s
    d_t_ldg: float
    d_t_sw: float
    d_m_ldg: float    # kg/s
    d_l_ldg: float    # m/s
    d_m_bath: float   # kg/s


@dataclass(frozen=True)
class Conserved:
    """Quantities invariant along a trajectory of the reduced model.

    ``m_total`` and ``species`` may carry leading axes (one row per grid
    node); they broadcast against the reduced state vector.
    """

    m_total: float | np.ndarray
    species: np.ndarray  # (..., 6) kg

    @classmethod
    def from_state(cls, state: CellState) -> "Conserved":
        return cls(state.total_mass(), state.species.as_array())


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def ledge_interfacial_areas(l_ldg: float, params: CellParameters) -> tuple[float, float]:
    """Bath-side and metal-side ledge contact areas for thickness ``l_ldg``."""
    if 2.0 * l_ldg >= min(params.length, params.width):
        raise GeometryError(
            f"ledge thickness {l_ldg} m fills the cavity (min side {min(params.length, params.width)} m)")
    if l_ldg < 0.0:
        raise GeometryError("ledge thickness must be >= 0")
    rim = params.perimeter - 8.0 * l_ldg
    return rim * params.ledge_height, rim * params.metal_height


def ledge_mass_from_thickness(l_ldg: float, params: CellParameters) -> float:
    """Ledge mass consistent with a uniform layer of thickness ``l_ldg``."""
    rim = params.perimeter - 8.0 * l_ldg
    return params.ledge_density * l_ldg * rim * params.contact_height


def ledge_thickness_from_mass(m_ldg: float, params: CellParameters) -> float:
    """Invert the mass/thickness relation on its physical (thin) branch."""
    if m_ldg < 0.0:
        raise DomainError("ledge mass must be >= 0")
    p0 = params.perimeter
    q = m_ldg / (params.ledge_density * params.contact_height)
    disc = p0 * p0 - 32.0 * q
    if disc < 0.0:
        raise GeometryError(f"ledge mass {m_ldg} kg exceeds the cavity capacity")
    return (p0 - np.sqrt(disc)) / 16.0


# ---------------------------------------------------------------------------
# electrochemistry and heat
# ---------------------------------------------------------------------------

def faraday_production_rate(i_line: float, params: CellParameters) -> float:
    """Aluminium production rate in kg/h, linear in line current."""
    coeff = params.current_efficiency * params.molar_mass_al * 3600.0 \
        / (params.electrons * params.faraday_constant)
    return coeff * i_line


def _overvoltage(i_line, params: CellParameters):
    """Sum of surface and concentration overvoltages; clamped at zero below i_ref."""
    b_total = params.b_surface_anode + params.b_conc_anode + params.b_conc_cathode
    i = np.asarray(i_line, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ln = np.where(i > params.i_ref, np.log(np.maximum(i, params.i_ref) / params.i_ref), 0.0)
    return b_total * ln


def cell_voltage(state: CellState | None, inp: ControlInput, params: CellParameters) -> VoltageBreakdown:
    """Cell voltage breakdown for the given input.

    The electrolyte conductivity is a fixed parameter, so the state enters
    only through validation hooks; the bath drop is linear in both the
    effective gap (acd minus the bubble layer) and the current.
    """
    inp.validate(params)
    r_bath = (inp.acd - params.bubble_thickness) / (params.bath_conductivity * params.anode_area)
    v_bath = inp.i_line * r_bath
    v_fixed = inp.i_line * params.r_fixed
    v_ov = float(_overvoltage(inp.i_line, params))
    v_cell = params.v_reversible + v_ov + v_bath + v_fixed
    return VoltageBreakdown(params.v_reversible, v_ov, v_bath, v_fixed, v_cell)


def heat_generation(v_cell: float, i_line: float, params: CellParameters) -> float:
    """Ohmic heat release in W.

    External voltage drops and the energy bound up in reduction and feed
    preheating (charged per kg of metal) do not heat the cell and are
    subtracted from the electrical power.
    """
    mdot = faraday_production_rate(i_line, params)  # kg/h
    return (v_cell - params.v_external) * i_line - params.preheat_energy_wh_per_kg * mdot


def power_output(inp: ControlInput, v_cell: float) -> float:
    """Cell power draw P = I * V in W."""
    return inp.i_line * v_cell


def superheat(state: CellState) -> float:
    """Bath temperature above the liquidus of the current composition, degC."""
    return state.t_bath - liquidus_temperature(state.composition())


# ---------------------------------------------------------------------------
# reduced dynamics (vectorized core)
# ---------------------------------------------------------------------------
# reduced state vector y = [t_bath, t_ldg, t_sw, m_ldg]; input u = [i_line, acd]

def reduced_state(state: CellState) -> np.ndarray:
    return np.array([state.t_bath, state.t_ldg, state.t_sw, state.m_ldg], dtype=float)


def expand_state(y: np.ndarray, conserved: Conserved, params: CellParameters) -> CellState:
    """Reconstruct a full CellState from the reduced vector."""
    t_b, t_l, t_s, m = (float(v) for v in y)
    m_bath = conserved.m_total - m
    return CellState(t_b, t_l, t_s, m, ledge_thickness_from_mass(m, params),
                     m_bath, SpeciesMasses.from_array(conserved.species))


def _geometry_terms(m, params: CellParameters):
    p0 = params.perimeter
    hs = params.contact_height
    q = np.asarray(m, dtype=float) / (params.ledge_density * hs)
    disc = p0 * p0 - 32.0 * q
    if np.any(disc <= 0.0):
        raise GeometryError("ledge mass exceeds the cavity capacity")
    l = (p0 - np.sqrt(disc)) / 16.0
    if np.any(2.0 * l >= min(params.length, params.width)):
        raise GeometryError("ledge fills the cavity")
    if np.any(l <= 0.0):
        raise GeometryError("ledge has fully melted")
    dl_dm = 1.0 / (params.ledge_density * hs * (p0 - 16.0 * l))
    rim = p0 - 8.0 * l
    return l, dl_dm, rim


def _electrical_terms(i_line, acd, params: CellParameters):
    i = np.asarray(i_line, dtype=float)
    a = np.asarray(acd, dtype=float)
    if np.any(a <= params.bubble_thickness):
        raise GeometryError("acd at or below the bubble layer thickness")
    g_bath = 1.0 / (params.bath_conductivity * params.anode_area)
    r_bath = (a - params.bubble_thickness) * g_bath
    b_total = params.b_surface_anode + params.b_conc_anode + params.b_conc_cathode
    active = i > params.i_ref
    ln = np.where(active, np.log(np.maximum(i, params.i_ref) / params.i_ref), 0.0)
    v = params.v_reversible + b_total * ln + i * (r_bath + params.r_fixed)
    dv_di = np.where(active, b_total / np.maximum(i, params.i_ref), 0.0) + r_bath + params.r_fixed
    dv_da = i * g_bath
    c_f = params.current_efficiency * params.molar_mass_al * 3600.0 \
        / (params.electrons * params.faraday_constant)
    q_gen = (v - params.v_external) * i - params.preheat_energy_wh_per_kg * c_f * i
    dq_di = (v - params.v_external) + i * dv_di - params.preheat_energy_wh_per_kg * c_f
    dq_da = i * dv_da
    return v, q_gen, dq_di, dq_da


def _thermal_terms(y, conserved: Conserved, params: CellParameters):
    """Shared intermediate quantities for the rhs and its Jacobian."""
    t_b, t_l, t_s, m = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    m_bath = conserved.m_total - m
    species = np.asarray(conserved.species, dtype=float)
    if np.any(m_bath <= species.sum(axis=-1)):
        raise DomainError("bath mass has shrunk below its additive content")
    l, dl_dm, rim = _geometry_terms(m, params)

    pct = [100.0 * species[..., j] / m_bath for j in range(len(SPECIES))]
    t_liq = _liquidus_raw(*pct)
    grads = _liquidus_grad_raw(*pct)
    # d t_liq / d m_ldg through m_bath = m_total - m_ldg
    dtliq_dm = sum(g * p for g, p in zip(grads, pct)) / m_bath

    s_b = rim * params.ledge_height
    s_m = rim * params.metal_height
    s_tot = rim * params.contact_height

    g_out = params.h_ledge_bath * s_b
    g6 = g_out + params.h_ledge_metal * s_m
    dg_out_dm = params.h_ledge_bath * (-8.0 * params.ledge_height) * dl_dm
    dg6_dm = dg_out_dm + params.h_ledge_metal * (-8.0 * params.metal_height) * dl_dm

    k5 = 2.0 * params.k_ledge * s_tot / l
    dk5_dm = 2.0 * params.k_ledge * dl_dm * (-8.0 * params.contact_height * l - s_tot) / l**2
    k5t = 2.0 * params.k_ledge * params.area_ledge_sidewall / l
    dk5t_dm = -k5t / l * dl_dm

    r_ls = (0.5 * l / params.k_ledge
            + 0.5 * params.sidewall_thickness / params.k_sidewall) / params.area_ledge_sidewall
    dr_ls_dm = (0.5 / params.k_ledge) * dl_dm / params.area_ledge_sidewall
    r_sa = (0.5 * params.sidewall_thickness / params.k_sidewall
            + params.shell_thickness / params.k_shell
            + 1.0 / params.h_shell_ambient) / params.area_external

    sh = t_b - t_liq
    q_out = g_out * sh
    q6 = g6 * sh
    q5 = k5 * (t_liq - t_l)
    q5t = k5t * (t_liq - t_l)
    w = (t_l - t_s) / r_ls

    return dict(t_b=t_b, t_l=t_l, t_s=t_s, m=m, m_bath=m_bath, l=l, dl_dm=dl_dm,
                t_liq=t_liq, dtliq_dm=dtliq_dm, s_b=s_b, s_m=s_m, s_tot=s_tot,
                g_out=g_out, g6=g6, dg_out_dm=dg_out_dm, dg6_dm=dg6_dm,
                k5=k5, dk5_dm=dk5_dm, k5t=k5t, dk5t_dm=dk5t_dm,
                r_ls=r_ls, dr_ls_dm=dr_ls_dm, r_sa=r_sa,
                sh=sh, q_out=q_out, q6=q6, q5=q5, q5t=q5t, w=w)


def reduced_rhs(y: np.ndarray, u: np.ndarray, params: CellParameters,
                conserved: Conserved, q_extra=0.0) -> np.ndarray:
    """Time derivative of the reduced state; broadcasts over leading axes.

    ``q_extra`` is additional heat [W] injected into the bath balance
    (lateral conduction between grid nodes); zero for the lumped cell.
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    t = _thermal_terms(y, conserved, params)
    _, q_gen, _, _ = _electrical_terms(u[..., 0], u[..., 1], params)
    q_gen = q_gen + q_extra

    if params.ledge_mass_form == "full":
        dm = (t["q5"] - t["q6"]) / params.fusion_heat
    else:
        dm = -t["q6"] / params.fusion_heat

    d_tb = (q_gen - t["q_out"]) / (params.cp_bath * t["m_bath"]) + t["t_b"] * dm / t["m_bath"]
    d_tl = ((t["q5t"] - t["w"]) / params.cp_ledge - t["t_l"] * dm) / t["m"]
    d_ts = (t["w"] - (t["t_s"] - params.t_ambient) / t["r_sa"]) \
        / (params.sidewall_mass * params.cp_sidewall)
    out = np.stack([d_tb, d_tl, d_ts, dm], axis=-1)
    return out


def reduced_jacobian(y: np.ndarray, u: np.ndarray, params: CellParameters,
                     conserved: Conserved) -> tuple[np.ndarray, np.ndarray]:
    """Analytic partials (df/dy, df/du) of :func:`reduced_rhs`.

    Shapes broadcast over leading axes: (..., 4, 4) and (..., 4, 2).
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    t = _thermal_terms(y, conserved, params)
    _, q_gen, dq_di, dq_da = _electrical_terms(u[..., 0], u[..., 1], params)

    dH = params.fusion_heat
    cb, cl = params.cp_bath, params.cp_ledge
    msw_csw = params.sidewall_mass * params.cp_sidewall
    m_b, m = t["m_bath"], t["m"]

    dq_out = dict(
        tb=t["g_out"],
        m=t["dg_out_dm"] * t["sh"] - t["g_out"] * t["dtliq_dm"],
    )
    dq6 = dict(
        tb=t["g6"],
        m=t["dg6_dm"] * t["sh"] - t["g6"] * t["dtliq_dm"],
    )
    dq5 = dict(
        tl=-t["k5"],
        m=t["dk5_dm"] * (t["t_liq"] - t["t_l"]) + t["k5"] * t["dtliq_dm"],
    )
    dq5t = dict(
        tl=-t["k5t"],
        m=t["dk5t_dm"] * (t["t_liq"] - t["t_l"]) + t["k5t"] * t["dtliq_dm"],
    )
    dw = dict(
        tl=1.0 / t["r_ls"],
        ts=-1.0 / t["r_ls"],
        m=-t["w"] * t["dr_ls_dm"] / t["r_ls"],
    )

    if params.ledge_mass_form == "full":
        dm_dt = (t["q5"] - t["q6"]) / dH
        ddm = dict(
            tb=-dq6["tb"] / dH,
            tl=dq5["tl"] / dH,
            ts=np.zeros_like(m),
            m=(dq5["m"] - dq6["m"]) / dH,
        )
    else:
        dm_dt = -t["q6"] / dH
        ddm = dict(
            tb=-dq6["tb"] / dH,
            tl=np.zeros_like(m),
            ts=np.zeros_like(m),
            m=-dq6["m"] / dH,
        )

    f_tb = (q_gen - t["q_out"]) / (cb * m_b) + t["t_b"] * dm_dt / m_b
    f_tl = ((t["q5t"] - t["w"]) / cl - t["t_l"] * dm_dt) / m

    jy = np.zeros(y.shape[:-1] + (4, 4), dtype=float)
    ju = np.zeros(y.shape[:-1] + (4, 2), dtype=float)

    # f_tb row
    jy[..., 0, 0] = -dq_out["tb"] / (cb * m_b) + dm_dt / m_b + t["t_b"] * ddm["tb"] / m_b
    jy[..., 0, 1] = t["t_b"] * ddm["tl"] / m_b
    jy[..., 0, 3] = (-dq_out["m"] / (cb * m_b) + (q_gen - t["q_out"]) / (cb * m_b**2)
                     + t["t_b"] * (ddm["m"] / m_b + dm_dt / m_b**2))
    ju[..., 0, 0] = dq_di / (cb * m_b)
    ju[..., 0, 1] = dq_da / (cb * m_b)

    # f_tl row
    jy[..., 1, 0] = -t["t_l"] * ddm["tb"] / m
    jy[..., 1, 1] = ((dq5t["tl"] - dw["tl"]) / cl - dm_dt - t["t_l"] * ddm["tl"]) / m
    jy[..., 1, 2] = -dw["ts"] / cl / m
    jy[..., 1, 3] = ((dq5t["m"] - dw["m"]) / cl - t["t_l"] * ddm["m"]) / m - f_tl / m

    # f_ts row
    jy[..., 2, 1] = dw["tl"] / msw_csw
    jy[..., 2, 2] = (dw["ts"] - 1.0 / t["r_sa"]) / msw_csw
    jy[..., 2, 3] = dw["m"] / msw_csw

    # f_m row
    jy[..., 3, 0] = ddm["tb"]
    jy[..., 3, 1] = ddm["tl"]
    jy[..., 3, 2] = ddm["ts"]
    jy[..., 3, 3] = ddm["m"]

    return jy, ju


def state_derivative(state: CellState, inp: ControlInput, params: CellParameters) -> StateDerivative:
    """Full lumped-state derivative; propagates geometry and domain errors."""
    inp.validate(params)
    conserved = Conserved.from_state(state)
    y = reduced_state(state)
    dy = reduced_rhs(y, np.array([inp.i_line, inp.acd]), params, conserved)
    dm = float(dy[3])
    l, _, rim = _geometry_terms(state.m_ldg, params)
    d_l = dm / (params.ledge_density * rim * params.contact_height)
    return StateDerivative(float(dy[0]), float(dy[1]), float(dy[2]), dm, float(d_l), -dm)


# ---------------------------------------------------------------------------
# time integration of the lumped model
# ---------------------------------------------------------------------------

@dataclass
class LumpedTrajectory:
    """Dense time series of the lumped model plus derived outputs."""

    t: np.ndarray
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
    conserved: Conserved

    def state_at(self, idx: int, params: CellParameters) -> CellState:
        y = np.array([self.t_bath[idx], self.t_ldg[idx], self.t_sw[idx], self.m_ldg[idx]])
        return expand_state(y, self.conserved, params)

    def final_state(self, params: CellParameters) -> CellState:
        return self.state_at(-1, params)


def _as_input_fn(u) -> Callable[[float], tuple[float, float]]:
    if isinstance(u, ControlInput):
        return lambda t: (u.i_line, u.acd)
    return u


def integrate_lumped(state0: CellState, u, params: CellParameters,
                     t_span: tuple[float, float], t_eval=None,
                     rtol: float = 1e-10, method: str = "LSODA") -> LumpedTrajectory:
    """Integrate the lumped model over ``t_span`` seconds.

    ``u`` is a :class:`ControlInput` held constant or a callable
    ``t -> (i_line, acd)``.  Bath mass is reconstructed from conservation, so
    total mass and the thickness/mass coupling hold to machine precision.
    """
    params.validate()
    conserved = Conserved.from_state(state0)
    u_fn = _as_input_fn(u)

    def rhs(t, y):
        return reduced_rhs(y, np.asarray(u_fn(t), dtype=float), params, conserved)

    def jac(t, y):
        jy, _ = reduced_jacobian(y, np.asarray(u_fn(t), dtype=float), params, conserved)
        return jy

    y0 = reduced_state(state0)
    atol = np.array([1e-8, 1e-8, 1e-8, 1e-6]) * rtol / 1e-10
    sol = solve_ivp(rhs, t_span, y0, method=method, jac=jac, rtol=rtol, atol=atol,
                    t_eval=t_eval, dense_output=False)
    if not sol.success:
        raise DomainError(f"lumped integration failed: {sol.message}")

    t = sol.t
    tb, tl, ts, m = sol.y
    m_bath = conserved.m_total - m
    l = np.array([ledge_thickness_from_mass(mi, params) for mi in m])
    iu = np.array([u_fn(ti) for ti in t], dtype=float)
    v, _, _, _ = _electrical_terms(iu[:, 0], iu[:, 1], params)
    pct = [100.0 * s / m_bath for s in conserved.species]
    t_liq = _liquidus_raw(*pct)
    return LumpedTrajectory(
        t=t, t_bath=tb, t_ldg=tl, t_sw=ts, m_ldg=m, l_ldg=l, m_bath=m_bath,
        i_line=iu[:, 0], acd=iu[:, 1], v_cell=v, power=iu[:, 0] * v,
        t_liq=t_liq, superheat=tb - t_liq, conserved=conserved)


# ---------------------------------------------------------------------------
# state persistence
# ---------------------------------------------------------------------------

def save_state(state: CellState, path: str | Path) -> None:
    Path(path).write_text(json.dumps(state.as_dict(), indent=2, sort_keys=True) + "\n")


def load_state(path: str | Path) -> CellState:
    raw = json.loads(Path(path).read_text())
    species = SpeciesMasses(**raw.pop("species"))
    return CellState(species=species, **raw)


def nominal_state() -> CellState:
    """Calibrated nominal steady state shipped with the package."""
    from importlib import resources
    raw = json.loads(resources.files("potopt.data").joinpath("nominal_state.json").read_text())
    species = SpeciesMasses(**raw.pop("species"))
    return CellState(species=species, **raw)
