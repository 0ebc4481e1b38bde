"""Power-cap trade-offs: normalized speed/energy curves, cap selection, carbon."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .metrics import RunMetrics, normalize_runs

DEFAULT_MAX_SLOWDOWN = 0.05
JOULES_PER_KWH = 3.6e6


@dataclass(frozen=True)
class TradeoffPoint:
    power_cap_w: float
    relative_speed: float
    relative_energy: float

    def __post_init__(self):
        if not (self.power_cap_w > 0 and self.relative_speed > 0 and self.relative_energy > 0):
            raise ValueError(f"trade-off point fields must be positive: {self}")

    @property
    def slowdown(self) -> float:
        """Fractional loss of speed; negative when the capped run is faster."""
        return 1.0 - self.relative_speed

    def to_dict(self):
        return {"power_cap_w": self.power_cap_w, "relative_speed": self.relative_speed,
                "relative_energy": self.relative_energy}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["power_cap_w"]), float(d["relative_speed"]), float(d["relative_energy"]))


@dataclass(frozen=True)
class CapRecommendation:
    chosen_cap_w: float
    energy_saving_fraction: float
    slowdown_fraction: float
    satisfied: bool

    def to_dict(self):
        return {"chosen_cap_w": self.chosen_cap_w, "energy_saving_fraction": self.energy_saving_fraction,
                "slowdown_fraction": self.slowdown_fraction, "satisfied": self.satisfied}


def build_tradeoff_curve(runs: Sequence[RunMetrics], baseline_cap: float) -> list[TradeoffPoint]:
    """Normalize a power-cap family (same model, GPU count, clock cap) to its baseline cap.

    One point per cap, highest cap first.
    """
    caps = [r.manifest.power_cap_w for r in runs]
    if len(set(caps)) != len(caps):
        raise ValueError(f"more than one run per power cap: {sorted(caps)}")
    points = normalize_runs(runs, axis="power_cap_w", baseline=baseline_cap)
    curve = [TradeoffPoint(p.label, p.relative_speed, p.relative_energy) for p in points]
    return sorted(curve, key=lambda p: -p.power_cap_w)


def _baseline(curve: Sequence[TradeoffPoint], baseline_cap: float | None) -> TradeoffPoint:
    if baseline_cap is not None:
        for p in curve:
            if p.power_cap_w == baseline_cap:
                return p
        raise ValueError(f"baseline cap {baseline_cap} W not on the curve")
    unit = [p for p in curve if p.relative_speed == 1.0 and p.relative_energy == 1.0]
    return unit[0] if unit else max(curve, key=lambda p: p.power_cap_w)


def select_optimal_cap(curve: Sequence[TradeoffPoint], max_slowdown: float = DEFAULT_MAX_SLOWDOWN,
                       baseline_cap: float | None = None) -> CapRecommendation:
    """Lowest-energy cap whose slowdown stays within ``max_slowdown``.

    Ties in energy go to the lower cap. Points that train faster than the
    baseline (negative slowdown) always qualify. If nothing qualifies the
    baseline is returned with ``satisfied=False``. The baseline is
    ``baseline_cap`` if given, else the point at (1, 1), else the highest cap.
    """
    if not curve:
        raise ValueError("empty trade-off curve")
    if max_slowdown < 0:
        raise ValueError(f"max_slowdown must be non-negative, got {max_slowdown}")
    base = _baseline(curve, baseline_cap)
    ok = [p for p in curve if p.slowdown <= max_slowdown]
    if not ok:
        best, satisfied = base, False
    else:
        best, satisfied = min(ok, key=lambda p: (p.relative_energy, p.power_cap_w)), True
    return CapRecommendation(
        chosen_cap_w=best.power_cap_w,
        energy_saving_fraction=1.0 - best.relative_energy / base.relative_energy,
        slowdown_fraction=1.0 - best.relative_speed / base.relative_speed,
        satisfied=satisfied,
    )


def estimate_carbon(energy_j: float, intensity_g_per_kwh: float) -> float:
    """Kilograms of CO2 for ``energy_j`` joules at a grid intensity in g/kWh."""
    if energy_j < 0 or intensity_g_per_kwh < 0:
        raise ValueError("energy and carbon intensity must be non-negative")
    return energy_j / JOULES_PER_KWH * intensity_g_per_kwh / 1000.0


def intensity_for_emissions(energy_j: float, co2_kg: float) -> float:
    """Grid intensity (g/kWh) at which ``energy_j`` joules emit ``co2_kg`` kilograms."""
    if not energy_j > 0 or co2_kg < 0 or not math.isfinite(co2_kg):
        raise ValueError("energy must be positive and emissions non-negative")
    return co2_kg * 1000.0 / (energy_j / JOULES_PER_KWH)
