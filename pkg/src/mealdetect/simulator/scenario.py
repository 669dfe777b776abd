"""Snack schedules and per-patient dataset generation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from ..exceptions import ScenarioError
from .episode import (MIN_TAIL, Episode, LabeledWindow, Scenario, extract_windows,
                      simulate_episode)
from .params import MealEvent, PatientConfig, perturb_params


@dataclass(frozen=True)
class ScheduleConfig:
    lead_in: float = 60.0
    snack_carbs: tuple = (15.0, 35.0)
    announced_meals: bool = True
    meal_carbs: tuple = (40.0, 70.0)
    meal_to_snack: tuple = (180.0, 240.0)
    gap_after_window: float = 60.0


def _on_grid(x: float) -> float:
    return 5.0 * round(x / 5.0)


def make_snack_scenario(n_snacks: int, seed: int, schedule: ScheduleConfig | None = None
                        ) -> Scenario:
    """Lay out ``n_snacks`` unannounced snacks, each optionally preceded by a bolused meal."""
    if n_snacks <= 0:
        raise ScenarioError("no deviation events to label")
    schedule = schedule or ScheduleConfig()
    rng = np.random.default_rng(seed)
    meals: List[MealEvent] = []
    t = schedule.lead_in
    last_snack = 0.0
    for _ in range(n_snacks):
        if schedule.announced_meals:
            meals.append(MealEvent(_on_grid(t), round(float(rng.uniform(*schedule.meal_carbs)), 1),
                                   announced=True))
            s = _on_grid(t + rng.uniform(*schedule.meal_to_snack))
        else:
            s = _on_grid(t + 60.0)
        meals.append(MealEvent(s, round(float(rng.uniform(*schedule.snack_carbs)), 1)))
        last_snack = s
        t = s + MIN_TAIL + schedule.gap_after_window
    duration = _on_grid(last_snack + MIN_TAIL + schedule.gap_after_window)
    return Scenario(meals=tuple(meals), duration=duration, seed=seed)


@dataclass
class PatientData:
    patient_id: str
    config: PatientConfig
    scenario: Scenario
    episodes: List[Episode] = field(default_factory=list)
    windows: List[LabeledWindow] = field(default_factory=list)


def simulate_patient(base: PatientConfig, patient_id: str, n_snacks: int, replicates: int,
                     seed: int, schedule: ScheduleConfig | None = None, jitter: float = 15.0,
                     perturb: bool = True, announced_negatives: bool = False) -> PatientData:
    """Draw one synthetic patient and simulate ``replicates`` closed-loop runs of one schedule.

    Replicates share the meal schedule and differ in sensor noise, which the
    controller reacts to, so deliveries differ as well.
    """
    if replicates < 1:
        raise ScenarioError("replicates must be >= 1")
    ss = np.random.SeedSequence(seed)
    param_seed, sched_seed, noise_root = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    if perturb:
        params = perturb_params(base.params, base.population, param_seed, patient_id)
    else:
        params = base.params.replace(patient_id=patient_id, seed=param_seed)
    cfg = PatientConfig(params=params, controller=base.controller, population=base.population)
    scenario = make_snack_scenario(n_snacks, sched_seed, schedule)
    data = PatientData(patient_id, cfg, scenario)
    noise_seeds = np.random.SeedSequence(noise_root).generate_state(replicates)
    for r in range(replicates):
        sc = Scenario(meals=scenario.meals, duration=scenario.duration, seed=int(noise_seeds[r]))
        ep = simulate_episode(params, sc, cfg.controller)
        data.episodes.append(ep)
        data.windows.extend(extract_windows(ep, jitter=jitter, replicate=r,
                                            announced_negatives=announced_negatives))
    return data
