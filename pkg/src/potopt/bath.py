"""Electrolyte composition and the liquidus-temperature correlation.

The bath is molten cryolite carrying six tracked additives, each expressed
as a wt/wt percentage of the total electrolyte mass.  The liquidus
temperature is the composition-dependent temperature above which the
electrolyte is fully liquid; it anchors both the superheat and the
freeze/melt driving forces of the ledge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError

SPECIES = ("alf3", "caf2", "al2o3", "lif", "mgf2", "kf")


def _liquidus_raw(a, c, o, li, mg, k):
    """Liquidus correlation kernel; accepts scalars or numpy arrays (percents >= 0)."""
    t = 1011.0 + 0.5 * a - 0.13 * a**2.2
    t = t - 3.45 * c / (1.0 + 0.0173 * c)
    t = t + 0.124 * c * a - 0.00542 * (c * a) ** 1.5
    t = t - 7.93 * o / (1.0 + 0.0936 * o - 0.0017 * o**2 - 0.0023 * a * o)
    t = t - 8.90 * li / (1.0 + 0.0047 * li + 0.0010 * a**2)
    t = t - 3.95 * mg
    t = t - 3.95 * k
    return t


def _liquidus_grad_raw(a, c, o, li, mg, k):
    """Partials of the liquidus kernel w.r.t. each percent; scalar or array inputs."""
    d_a = 0.5 - 0.13 * 2.2 * a**1.2
    den_c = 1.0 + 0.0173 * c
    d_c = -3.45 / den_c**2
    cross = 0.00542 * 1.5 * (c * a) ** 0.5
    d_a = d_a + 0.124 * c - cross * c
    d_c = d_c + 0.124 * a - cross * a
    den_o = 1.0 + 0.0936 * o - 0.0017 * o**2 - 0.0023 * a * o
    num_o = 7.93 * o
    d_o = -(7.93 * den_o - num_o * (0.0936 - 2 * 0.0017 * o - 0.0023 * a)) / den_o**2
    d_a = d_a + num_o * (-0.0023 * o) / den_o**2
    den_li = 1.0 + 0.0047 * li + 0.0010 * a**2
    num_li = 8.90 * li
    d_li = -(8.90 * den_li - num_li * 0.0047) / den_li**2
    d_a = d_a + num_li * (2 * 0.0010 * a) / den_li**2
    zeros = np.zeros_like(np.asarray(a, dtype=float))
    return (d_a, d_c, d_o, d_li, zeros - 3.95, zeros - 3.95)


@dataclass(frozen=True)
class BathComposition:
    """Additive concentrations in wt/wt percent of total bath mass."""

    alf3: float = 0.0
    caf2: float = 0.0
    al2o3: float = 0.0
    lif: float = 0.0
    mgf2: float = 0.0
    kf: float = 0.0

    def validate(self) -> None:
        total = 0.0
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0.0:
                raise DomainError(f"composition percent '{f.name}' must be >= 0, got {v}")
            total += v
        if total > 100.0:
            raise DomainError(f"composition percents sum to {total:.3f} > 100")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, s) for s in SPECIES)

    def as_dict(self) -> dict:
        return {s: getattr(self, s) for s in SPECIES}


@dataclass(frozen=True)
class SpeciesMasses:
    """Additive masses in kg; the cryolite solvent is the remainder of the bath."""

    alf3: float = 0.0
    caf2: float = 0.0
    al2o3: float = 0.0
    lif: float = 0.0
    mgf2: float = 0.0
    kf: float = 0.0

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0.0:
                raise DomainError(f"species mass '{f.name}' must be >= 0")

    def total(self) -> float:
        return sum(getattr(self, s) for s in SPECIES)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, s) for s in SPECIES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "SpeciesMasses":
        return cls(**dict(zip(SPECIES, (float(x) for x in arr))))

    @classmethod
    def from_composition(cls, comp: BathComposition, m_bath: float) -> "SpeciesMasses":
        return cls(**{s: getattr(comp, s) * m_bath / 100.0 for s in SPECIES})

    def composition(self, m_bath: float) -> BathComposition:
        """Percent composition for a given total bath mass."""
        if m_bath <= 0.0:
            raise DomainError("bath mass must be > 0 to form a composition")
        return BathComposition(**{s: 100.0 * getattr(self, s) / m_bath for s in SPECIES})

    def as_dict(self) -> dict:
        return {s: getattr(self, s) for s in SPECIES}


def liquidus_temperature(comp: BathComposition) -> float:
    """Liquidus temperature in degrees C from the additive percentages.

    With all additives at zero only the 1011 degC constant survives.
    Raises :class:`DomainError` on negative percents.
    """
    comp.validate()
    return float(_liquidus_raw(*comp.as_tuple()))


def liquidus_gradient(comp: BathComposition) -> dict:
    """Partial derivatives of the liquidus w.r.t. each percent, degC per percent."""
    comp.validate()
    grads = _liquidus_grad_raw(*comp.as_tuple())
    return {s: float(g) for s, g in zip(SPECIES, grads)}


def solve_alf3_for_liquidus(target: float, base: BathComposition,
                            lo: float = 0.5, hi: float = 18.0) -> BathComposition:
    """Return a composition whose AlF3 percent hits the target liquidus.

    Other additives are held at the values in ``base``; the liquidus is
    strictly decreasing in AlF3 over the searched band, so bisection suffices.
    """
    def f(x: float) -> float:
        return liquidus_temperature(BathComposition(**{**base.as_dict(), "alf3": x})) - target

    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise DomainError(f"liquidus target {target} degC not bracketed by AlF3 in [{lo}, {hi}] %")
    mid = 0.5 * (lo + hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < 1e-12:
            break
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    if math.isnan(mid):
        raise DomainError("AlF3 bisection failed")
    return BathComposition(**{**base.as_dict(), "alf3": mid})
