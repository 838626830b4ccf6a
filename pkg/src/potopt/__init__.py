"""Economic trajectory optimization for aluminium reduction cells under power modulation."""

__version__ = "0.1.0"

from .bath import BathComposition, SpeciesMasses, liquidus_temperature
from .model import (
    CellState,
    ControlInput,
    StateDerivative,
    VoltageBreakdown,
    cell_voltage,
    faraday_production_rate,
    heat_generation,
    integrate_lumped,
    nominal_state,
    power_output,
    state_derivative,
    superheat,
)
from .parameters import CellParameters, default_parameters, load_parameters, save_parameters
