"""Electricity prices, power targets, and run accounting.

Prices are piecewise-constant in time (currency per MWh).  Power targets
are filtered square waves: plateau levels with a first-order lag so the
optimizer never chases a discontinuous setpoint.  The run report integrates
a realized trajectory against prices with trapezoids split exactly at the
price breakpoints.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CoverageError, DomainError, PriceFileError

__all__ = ["EconomicParameters", "PriceProfile", "load_price_profile",
           "PowerTarget", "diurnal_target", "RunReport", "economics",
           "bundled_price_path"]

HOUR = 3600.0
J_PER_MWH = 3.6e9


@dataclass(frozen=True)
class EconomicParameters:
    """Metal value and lumped raw-material cost per kg of aluminium."""

    metal_price: float = 3.0
    material_cost: float = 1.2
    currency: str = "AUD"

    def validate(self) -> None:
        if self.metal_price < 0 or self.material_cost < 0:
            raise DomainError("prices must be non-negative")


@dataclass(frozen=True)
class PriceProfile:
    """Piecewise-constant electricity price; sample k applies on [t_k, t_{k+1})."""

    times_h: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times_h, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if t.ndim != 1 or len(t) < 1 or len(t) != len(p):
            raise DomainError("price profile needs matching time/price arrays")
        if np.any(np.diff(t) <= 0):
            raise DomainError("price times must be strictly increasing")
        if not np.all(np.isfinite(p)):
            raise DomainError("prices must be finite")
        object.__setattr__(self, "times_h", t)
        object.__setattr__(self, "prices", p)

    @property
    def duration_h(self) -> float:
        return float(self.times_h[-1] - self.times_h[0])

    def require_coverage(self, horizon_h: float, t0_h: float = 0.0) -> None:
        if t0_h < self.times_h[0] - 1e-9 or t0_h + horizon_h > self.times_h[-1] + 1e-9:
            raise CoverageError(
                f"price data covers [{self.times_h[0]}, {self.times_h[-1]}] h, "
                f"requested [{t0_h}, {t0_h + horizon_h}] h")

    def value(self, t_h) -> np.ndarray | float:
        t = np.asarray(t_h, dtype=float)
        idx = np.clip(np.searchsorted(self.times_h, t, side="right") - 1, 0, len(self.prices) - 1)
        out = self.prices[idx]
        return float(out) if np.isscalar(t_h) else out

    def value_at_seconds(self, t_s) -> np.ndarray | float:
        return self.value(np.asarray(t_s) / HOUR)

    def scaled(self, factor: float) -> "PriceProfile":
        return PriceProfile(self.times_h.copy(), self.prices * factor)

    @classmethod
    def constant(cls, price: float, horizon_h: float = 48.0) -> "PriceProfile":
        return cls(np.array([0.0, horizon_h]), np.array([price, price]))


def load_price_profile(path: str | Path) -> PriceProfile:
    """Parse a price CSV with header ``time_h,price_per_mwh``.

    Parse failures carry the 1-based line number; monotonicity violations
    are reported as parse errors too.
    """
    path = Path(path)
    times, prices = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["time_h", "price_per_mwh"]:
            raise PriceFileError(f"{path}:1: expected header 'time_h,price_per_mwh'")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise PriceFileError(f"{path}:{lineno}: expected two columns")
            try:
                t = float(row[0])
                p = float(row[1])
            except ValueError as exc:
                raise PriceFileError(f"{path}:{lineno}: {exc}") from exc
            if times and t <= times[-1]:
                raise PriceFileError(f"{path}:{lineno}: time {t} not increasing")
            if not math.isfinite(p):
                raise PriceFileError(f"{path}:{lineno}: non-finite price")
            times.append(t)
            prices.append(p)
    if len(times) < 2:
        raise PriceFileError(f"{path}: need at least two rows")
    return PriceProfile(np.array(times), np.array(prices))


def bundled_price_path(name: str) -> Path:
    """Path of a price fixture shipped with the package ('tariff' or 'spot')."""
    files = {"tariff": "tariff_synthetic.csv", "spot": "spot_synthetic.csv"}
    if name not in files:
        raise DomainError(f"unknown bundled profile {name!r}; choose from {sorted(files)}")
    return Path(str(resources.files("potopt.data").joinpath(files[name])))


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# power targets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PowerTarget:
    """First-order-filtered piecewise-constant power setpoint.

    ``switch_times_s``/``levels_w`` define the raw plateaus; ``y0_w`` is the
    filter state at t0.  ``value`` evaluates the exact interval-by-interval
    exponential response, so no integration error enters the constraint.
    """

    switch_times_s: np.ndarray    # (K,) start of each plateau, first = t0
    levels_w: np.ndarray          # (K,)
    tau_s: float
    y0_w: float
    filtered: bool = True

    def __post_init__(self):
        t = np.asarray(self.switch_times_s, dtype=float)
        v = np.asarray(self.levels_w, dtype=float)
        if len(t) != len(v) or len(t) == 0:
            raise DomainError("switch times and levels must match")
        if np.any(np.diff(t) <= 0):
            raise DomainError("switch times must increase")
        if self.tau_s <= 0:
            raise DomainError("filter time constant must be > 0")
        object.__setattr__(self, "switch_times_s", t)
        object.__setattr__(self, "levels_w", v)
        # filter state at the start of each plateau
        y = np.empty(len(t))
        y[0] = self.y0_w
        for k in range(1, len(t)):
            dt = t[k] - t[k - 1]
            y[k] = v[k - 1] + (y[k - 1] - v[k - 1]) * math.exp(-dt / self.tau_s)
        object.__setattr__(self, "_y_at_switch", y)

    def value(self, t_s) -> np.ndarray | float:
        t = np.asarray(t_s, dtype=float)
        idx = np.clip(np.searchsorted(self.switch_times_s, t, side="right") - 1,
                      0, len(self.levels_w) - 1)
        dt = t - self.switch_times_s[idx]
        out = self.levels_w[idx] + (self._y_at_switch[idx] - self.levels_w[idx]) \
            * np.exp(-np.maximum(dt, 0.0) / self.tau_s)
        return float(out) if np.isscalar(t_s) else out

    def switch_times_within(self, t0_s: float, tf_s: float) -> np.ndarray:
        """Switch instants needing mesh refinement, including a transient at t0."""
        t = self.switch_times_s
        out = list(t[(t > t0_s) & (t < tf_s)])
        # the filter may still be relaxing at the horizon start
        if abs(self.value(t0_s) - self._plateau_at(t0_s)) > 1e-9 * max(1.0, abs(self.y0_w)):
            out.insert(0, t0_s)
        return np.array(sorted(set(out)))

    def _plateau_at(self, t_s: float) -> float:
        idx = int(np.clip(np.searchsorted(self.switch_times_s, t_s, side="right") - 1,
                          0, len(self.levels_w) - 1))
        return float(self.levels_w[idx])


def diurnal_target(nominal_power_w: float, fraction: float, tau_h: float = 0.2,
                   horizon_h: float = 48.0, period_h: float = 24.0,
                   start_high: bool = True) -> PowerTarget:
    """Alternating half-period plateaus at (1 +- fraction) nominal, filtered.

    The filter starts from nominal power, so the profile begins with a
    smooth run-up into the first plateau; after that initial transient it is
    periodic over ``period_h``.
    """
    if not 0.0 <= fraction <= 0.5:
        raise DomainError(f"fraction must lie in [0, 0.5], got {fraction}")
    if tau_h <= 0:
        raise DomainError("tau_h must be > 0")
    half = period_h / 2.0
    n_plateaus = max(1, int(round(horizon_h / half)))
    times = np.arange(n_plateaus) * half * HOUR
    sign = np.array([1.0 if (k % 2 == 0) == start_high else -1.0 for k in range(n_plateaus)])
    levels = nominal_power_w * (1.0 + fraction * sign)
    return PowerTarget(times, levels, tau_h * HOUR, nominal_power_w, filtered=True)


# ---------------------------------------------------------------------------
# run accounting
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    """Economic accounting of one trajectory against one price profile."""

    objective: float                 # net cost (expenses - revenue), currency
    profit: float
    revenue: float
    expense_electricity: float
    expense_material: float
    energy_mwh: float
    metal_kg: float
    currency: str
    hourly: list = field(default_factory=list)
    status: str = "optimal"
    margins: dict = field(default_factory=dict)
    profit_vs_nominal: float | None = None
    label: str = ""

    def as_dict(self) -> dict:
        return {
            "label": self.label, "status": self.status, "currency": self.currency,
            "objective": self.objective, "profit": self.profit, "revenue": self.revenue,
            "expense_electricity": self.expense_electricity,
            "expense_material": self.expense_material,
            "energy_mwh": self.energy_mwh, "metal_kg": self.metal_kg,
            "profit_vs_nominal": self.profit_vs_nominal,
            "margins": self.margins, "hourly": self.hourly,
        }


def _refine_times(t: np.ndarray, breakpoints_s: np.ndarray) -> np.ndarray:
    inside = breakpoints_s[(breakpoints_s > t[0]) & (breakpoints_s < t[-1])]
    return np.unique(np.concatenate([t, inside]))


def economics(times_s: np.ndarray, power_w: np.ndarray, production_kg_h: np.ndarray,
              prices: PriceProfile, econ: EconomicParameters,
              label: str = "", status: str = "optimal", margins: dict | None = None) -> RunReport:
    """Integrate a trajectory into a :class:`RunReport`.

    Trapezoidal integration on the trajectory grid, refined at the price
    breakpoints so the piecewise-constant price multiplies exact interval
    energies.  The spent horizon must be covered by the price data.
    """
    econ.validate()
    t = np.asarray(times_s, dtype=float)
    if len(t) < 2:
        raise DomainError("trajectory needs at least two samples")
    prices.require_coverage((t[-1] - t[0]) / HOUR, t[0] / HOUR)

    grid = _refine_times(t, prices.times_h * HOUR)
    p_w = np.interp(grid, t, np.asarray(power_w, dtype=float))
    mdot = np.interp(grid, t, np.asarray(production_kg_h, dtype=float))

    mid = 0.5 * (grid[:-1] + grid[1:])
    dt = np.diff(grid)
    price_mid = prices.value_at_seconds(mid)
    seg_energy_j = 0.5 * (p_w[:-1] + p_w[1:]) * dt
    seg_metal = 0.5 * (mdot[:-1] + mdot[1:]) * dt / HOUR

    elec = float(np.sum(price_mid * seg_energy_j) / J_PER_MWH)
    metal_kg = float(np.sum(seg_metal))
    material = econ.material_cost * metal_kg
    revenue = econ.metal_price * metal_kg
    objective = elec + material - revenue

    hourly = []
    hours = np.arange(math.floor(t[0] / HOUR), math.ceil(t[-1] / HOUR))
    seg_hour = np.floor(mid / HOUR).astype(int)
    for hr in hours:
        m = seg_hour == hr
        if not np.any(m):
            continue
        e_mwh = float(np.sum(seg_energy_j[m]) / J_PER_MWH)
        kg = float(np.sum(seg_metal[m]))
        cost_e = float(np.sum(price_mid[m] * seg_energy_j[m]) / J_PER_MWH)
        hourly.append({"hour": int(hr), "energy_mwh": e_mwh, "metal_kg": kg,
                       "electricity_cost": cost_e,
                       "material_cost": econ.material_cost * kg,
                       "revenue": econ.metal_price * kg})

    return RunReport(
        objective=objective, profit=revenue - (elec + material), revenue=revenue,
        expense_electricity=elec, expense_material=material,
        energy_mwh=float(np.sum(seg_energy_j) / J_PER_MWH), metal_kg=metal_kg,
        currency=econ.currency, hourly=hourly, status=status,
        margins=margins or {}, label=label)
