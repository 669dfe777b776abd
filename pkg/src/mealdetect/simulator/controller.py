"""Simplified automated-insulin-delivery controller.

Stand-in for a zone controller: basal always runs, a proportional micro-bolus
acts above the glucose zone, and announced meals get a carb-ratio bolus.
"""
from __future__ import annotations

from typing import Iterable, NamedTuple

from .params import ControllerConfig, MealEvent, PatientParams

SLOT_MINUTES = 5.0


class Delivery(NamedTuple):
    basal: float
    correction: float
    meal_bolus: float

    @property
    def total(self) -> float:
        return self.basal + self.correction + self.meal_bolus


def correction_dose(g: float, iob: float, cfg: ControllerConfig) -> float:
    if g <= cfg.zone_high:
        return 0.0
    cap = cfg.correction_cap if g > cfg.correction_threshold else cfg.micro_cap
    dose = min(max(cfg.kp * (g - cfg.zone_high), 0.0), cap)
    return max(dose - cfg.iob_gain * iob, 0.0)


def controller_step(g: float, iob: float, meals_announced: Iterable[MealEvent],
                    params: PatientParams, cfg: ControllerConfig | None = None) -> Delivery:
    """Insulin (U) to deliver over the next 5-minute slot."""
    cfg = cfg or ControllerConfig()
    basal = params.basal_rate * SLOT_MINUTES
    bolus = sum(m.carbs_d for m in meals_announced) / params.carb_ratio
    return Delivery(basal, correction_dose(g, iob, cfg), bolus)
