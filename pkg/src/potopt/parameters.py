"""Cell parameter set, JSON persistence, and validation.

All quantities are SI (m, kg, s, W, degC) except where a field name says
otherwise.  Several transfer coefficients are *effective* lumped values: the
reduced model routes the entire cell heat loss through the ledge/sidewall
chain, so `h_ledge_bath`, `k_ledge` and `fusion_heat` absorb heat paths that
a spatially resolved model would carry separately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .errors import ParameterError

#: fields that must be strictly positive
_POSITIVE = (
    "length", "width", "ledge_height", "metal_height", "anode_area",
    "area_ledge_sidewall", "area_external", "sidewall_thickness",
    "shell_thickness", "cp_bath", "cp_ledge", "cp_sidewall", "k_ledge",
    "k_sidewall", "k_shell", "h_ledge_bath", "h_ledge_metal",
    "h_shell_ambient", "fusion_heat", "ledge_density", "sidewall_mass",
    "bath_conductivity", "bubble_thickness", "i_ref", "molar_mass_al",
    "electrons", "faraday_constant", "preheat_energy_wh_per_kg",
)


@dataclass(frozen=True)
class CellParameters:
    """Geometry, material, heat-transfer, electrical and electrochemical constants."""

    # cavity geometry [m]; heights are the ledge contact bands on the bath
    # and metal sides (the metal-side height is a modelling parameter)
    length: float = 13.5
    width: float = 4.2
    ledge_height: float = 0.55
    metal_height: float = 0.21
    anode_area: float = 32.0            # m^2, total anode bottom area
    area_ledge_sidewall: float = 28.0   # m^2, ledge-to-sidewall contact
    area_external: float = 75.0         # m^2, shell-to-ambient
    sidewall_thickness: float = 0.10    # m
    shell_thickness: float = 0.04       # m

    # thermal properties
    cp_bath: float = 1880.0             # J/(kg K)
    cp_ledge: float = 1300.0
    cp_sidewall: float = 750.0
    k_ledge: float = 8.2                # W/(m K), effective
    k_sidewall: float = 30.0
    k_shell: float = 45.0
    h_ledge_bath: float = 4549.0        # W/(m^2 K), effective
    h_ledge_metal: float = 900.0
    h_shell_ambient: float = 21.0
    fusion_heat: float = 2.0e6          # J/kg, effective (latent + sensible)
    ledge_density: float = 2900.0       # kg/m^3
    sidewall_mass: float = 20000.0      # kg
    t_ambient: float = 35.0             # degC

    # electrical
    bath_conductivity: float = 220.0    # S/m
    bubble_thickness: float = 0.005     # m
    v_external: float = 0.25            # V, drops outside the cell (no heat)
    v_reversible: float = 1.665         # V
    b_surface_anode: float = 0.058      # V per ln(I/i_ref)
    b_conc_anode: float = 0.020
    b_conc_cathode: float = 0.008
    i_ref: float = 4250.0               # A
    r_fixed: float = 1.7647e-6          # ohm, bubble+anode+cathode+external lump

    # electrochemical
    current_efficiency: float = 0.95
    molar_mass_al: float = 0.026982     # kg/mol
    electrons: float = 3.0
    faraday_constant: float = 96485.0   # C/mol
    preheat_energy_wh_per_kg: float = 6600.0  # Wh per kg Al, non-heating energy

    # ledge mass balance form: "full" keeps the wall-side conduction flux,
    # "simplified" drops it and drives the ledge by the bath-side flux alone
    ledge_mass_form: str = "full"

    def validate(self) -> None:
        for name in _POSITIVE:
            v = getattr(self, name)
            if not (v > 0.0):
                raise ParameterError(f"parameter '{name}' must be > 0, got {v}")
        if not (0.0 < self.current_efficiency <= 1.0):
            raise ParameterError(
                f"parameter 'current_efficiency' must lie in (0, 1], got {self.current_efficiency}")
        if self.ledge_mass_form not in ("full", "simplified"):
            raise ParameterError(
                f"parameter 'ledge_mass_form' must be 'full' or 'simplified', got {self.ledge_mass_form!r}")
        for name in ("r_fixed", "v_external", "v_reversible", "b_surface_anode",
                     "b_conc_anode", "b_conc_cathode"):
            if getattr(self, name) < 0.0:
                raise ParameterError(f"parameter '{name}' must be >= 0, got {getattr(self, name)}")

    # derived geometry -------------------------------------------------
    @property
    def perimeter(self) -> float:
        """Inner cavity perimeter 2(L+W) in m."""
        return 2.0 * (self.length + self.width)

    @property
    def contact_height(self) -> float:
        """Total ledge contact height (bath side + metal side) in m."""
        return self.ledge_height + self.metal_height

    def replace(self, **kw) -> "CellParameters":
        return replace(self, **kw)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def save_parameters(params: CellParameters, path: str | Path) -> None:
    Path(path).write_text(json.dumps(params.as_dict(), indent=2, sort_keys=True) + "\n")


def load_parameters(path: str | Path) -> CellParameters:
    """Load a parameter JSON file, validating invariants.

    Unknown keys and missing keys are reported by name.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"parameter file {path}: invalid JSON ({exc})") from exc
    return parameters_from_dict(raw)


def parameters_from_dict(raw: dict) -> CellParameters:
    known = {f.name for f in fields(CellParameters)}
    unknown = set(raw) - known
    if unknown:
        raise ParameterError(f"unknown parameter field(s): {sorted(unknown)}")
    params = CellParameters(**raw)
    params.validate()
    return params


def default_parameters() -> CellParameters:
    """Calibrated defaults shipped with the package."""
    ref = resources.files("potopt.data").joinpath("default_params.json")
    return parameters_from_dict(json.loads(ref.read_text()))
