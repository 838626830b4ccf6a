"""Steady-state calibration of the default parameter set.

No complete set of cell constants suits a desk-scale build out of the box,
so free parameters are solved such that the nominal operating point
(425 kA, 2.8 cm ACD) is an exact steady state with the targeted bath
temperature, superheat, ledge thickness, ledge temperature and cell
voltage.

Procedure (each step closes one balance exactly, so no iteration is needed
beyond the scalar liquidus inversion):

1. composition: AlF3 percent solved so the liquidus equals
   ``t_bath - superheat``;
2. voltage split: ``r_fixed`` from a fixed-ohmic share target and
   ``v_reversible`` from the cell-voltage target (the two enter the nominal
   voltage only through their sum, so a share target is required to separate
   them);
3. ``h_ledge_bath`` from the bath energy balance (all generated heat leaves
   through the bath-ledge film at the target superheat);
4. ``k_ledge`` from the ledge mass balance at the target ledge temperature;
5. sidewall chain: the ledge-temperature balance fixes the sidewall
   temperature, and ``h_shell_ambient`` closes the sidewall balance.

``h_ledge_bath``, ``k_ledge`` and ``fusion_heat`` come out as effective
values because the reduced model routes the entire heat loss through the
side chain.
"""

from __future__ import annotations

from dataclasses import dataclass

from .bath import BathComposition, SpeciesMasses, liquidus_temperature, solve_alf3_for_liquidus
from .errors import ParameterError
from .model import (
    CellState,
    ControlInput,
    cell_voltage,
    faraday_production_rate,
    heat_generation,
    ledge_interfacial_areas,
    ledge_mass_from_thickness,
)
from .parameters import CellParameters


@dataclass(frozen=True)
class CalibrationTargets:
    """Nominal operating point and the steady state it must produce."""

    i_line: float = 425e3        # A
    acd: float = 0.028           # m
    t_bath: float = 965.0        # degC
    superheat: float = 9.0       # degC
    l_ldg: float = 0.07          # m
    t_ldg: float = 820.0         # degC
    v_cell: float = 4.2          # V
    v_fixed_share: float = 0.75  # V carried by the lumped fixed resistance
    m_bath: float = 12000.0      # kg
    pct_caf2: float = 5.0
    pct_al2o3: float = 4.0


def calibrate(base: CellParameters | None = None,
              targets: CalibrationTargets | None = None) -> tuple[CellParameters, CellState]:
    """Return (parameters, nominal steady state) hitting the targets exactly."""
    p = base or CellParameters()
    tg = targets or CalibrationTargets()

    t_liq = tg.t_bath - tg.superheat

    # 1. composition
    comp = solve_alf3_for_liquidus(
        t_liq, BathComposition(caf2=tg.pct_caf2, al2o3=tg.pct_al2o3))
    species = SpeciesMasses.from_composition(comp, tg.m_bath)

    # 2. voltage split
    u = ControlInput(tg.i_line, tg.acd)
    r_fixed = tg.v_fixed_share / tg.i_line
    p = p.replace(r_fixed=r_fixed)
    vb0 = cell_voltage(None, u, p)
    v_rev = tg.v_cell - vb0.v_bath - vb0.v_overvoltage - tg.v_fixed_share
    if v_rev <= 0:
        raise ParameterError("voltage targets leave no room for the reversible potential")
    p = p.replace(v_reversible=v_rev)

    # 3. bath balance -> h_ledge_bath
    q_gen = heat_generation(tg.v_cell, tg.i_line, p)
    if q_gen <= 0:
        raise ParameterError("nominal point generates no net heat; check voltage targets")
    a_lb, a_lm = ledge_interfacial_areas(tg.l_ldg, p)
    h_lb = q_gen / (a_lb * tg.superheat)
    p = p.replace(h_ledge_bath=h_lb)

    # 4. ledge mass balance -> k_ledge
    q6 = (h_lb * a_lb + p.h_ledge_metal * a_lm) * tg.superheat
    s_tot = a_lb + a_lm
    k_ldg = q6 * 0.5 * tg.l_ldg / (s_tot * (t_liq - tg.t_ldg))
    if k_ldg <= 0:
        raise ParameterError("ledge temperature target must lie below the liquidus")
    p = p.replace(k_ledge=k_ldg)

    # 5. sidewall chain -> t_sw and h_shell_ambient
    q5t = 2.0 * k_ldg * p.area_ledge_sidewall * (t_liq - tg.t_ldg) / tg.l_ldg
    r_ls = (0.5 * tg.l_ldg / k_ldg
            + 0.5 * p.sidewall_thickness / p.k_sidewall) / p.area_ledge_sidewall
    t_sw = tg.t_ldg - q5t * r_ls
    if t_sw <= p.t_ambient:
        raise ParameterError("sidewall temperature falls below ambient; retune targets")
    r_sa = (t_sw - p.t_ambient) / q5t
    inv_h = r_sa * p.area_external - (0.5 * p.sidewall_thickness / p.k_sidewall
                                      + p.shell_thickness / p.k_shell)
    if inv_h <= 0:
        raise ParameterError("shell film coefficient not realizable; enlarge area_external")
    p = p.replace(h_shell_ambient=1.0 / inv_h)
    p.validate()

    m_ldg = ledge_mass_from_thickness(tg.l_ldg, p)
    state = CellState.build(tg.t_bath, tg.t_ldg, t_sw, m_ldg, tg.m_bath, species, p)
    state.validate(p)
    return p, state


def calibrate_metal_price(params: CellParameters, electricity_price: float,
                          material_cost: float, i_line: float, acd: float) -> float:
    """Metal price making the nominal current a stationary point of steady profit.

    At fixed ACD the steady profit rate is
    ``(metal - material) * mdot(I) - price * I * V(I) / 1e6`` per hour;
    the returned metal price zeroes its derivative at ``i_line``.
    """
    u = ControlInput(i_line, acd)
    vb = cell_voltage(None, u, params)
    r_bath = (acd - params.bubble_thickness) / (params.bath_conductivity * params.anode_area)
    b_total = params.b_surface_anode + params.b_conc_anode + params.b_conc_cathode
    dv_di = b_total / i_line + r_bath + params.r_fixed
    dp_di = vb.v_cell + i_line * dv_di              # W per A
    mdot_coeff = faraday_production_rate(1.0, params)  # kg/h per A
    return material_cost + electricity_price * dp_di / (1e6 * mdot_coeff)
