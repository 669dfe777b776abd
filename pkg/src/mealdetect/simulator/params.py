"""Patient, controller and meal parameter containers."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

import numpy as np
import yaml

from ..exceptions import ParameterError

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PatientParams:
    """Minimal-model, insulin kinetics and meal absorption constants.

    Insulin concentrations are in uU/mL, glucose in mg/dL, time in minutes.
    ``k_e`` and ``v_i`` parameterise the plasma compartment that turns pump
    deliveries into plasma insulin.
    """

    p1: float
    p2: float
    p3: float
    v_g: float
    gezi: float
    g_b: float
    i_b: float
    bw: float
    tau_meal: float
    tau_ins: float
    carb_ratio: float
    k_e: float = 0.138
    v_i: float = 120.0
    cgm_noise_sigma: float = 0.0
    seed: int = 0
    patient_id: str = "P0"

    def __post_init__(self):
        for name in ("p1", "p2", "p3", "v_g", "gezi", "tau_meal", "tau_ins", "k_e", "v_i"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 70.0 <= self.g_b <= 180.0:
            raise ParameterError(f"g_b must lie in [70, 180] mg/dL, got {self.g_b!r}")
        if not self.i_b > 0:
            raise ParameterError(f"i_b must be > 0, got {self.i_b!r}")
        if not self.bw > 0:
            raise ParameterError(f"bw must be > 0, got {self.bw!r}")
        if not self.carb_ratio > 0:
            raise ParameterError(f"carb_ratio must be > 0, got {self.carb_ratio!r}")
        if self.cgm_noise_sigma < 0:
            raise ParameterError("cgm_noise_sigma must be >= 0")

    @property
    def si(self) -> float:
        """Insulin sensitivity, p3 / p2 * v_g."""
        return self.p3 / self.p2 * self.v_g

    @property
    def insulin_volume_ml(self) -> float:
        return self.v_i * self.bw

    @property
    def basal_rate(self) -> float:
        """Infusion (U/min) that holds plasma insulin at ``i_b``."""
        return self.i_b * self.insulin_volume_ml * self.k_e / 1e6

    def replace(self, **changes) -> "PatientParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PatientParams":
        data = dict(data)
        si = data.pop("si", None)
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ParameterError(f"unknown patient keys: {sorted(unknown)}")
        params = cls(**data)
        if si is not None and not math.isclose(si, params.si, rel_tol=1e-12):
            raise ParameterError(f"si={si!r} disagrees with p3/p2*v_g={params.si!r}")
        return params


@dataclass(frozen=True)
class ControllerConfig:
    zone_low: float = 90.0
    zone_high: float = 120.0
    kp: float = 0.004
    micro_cap: float = 0.3
    correction_cap: float = 2.0
    correction_threshold: float = 150.0
    iob_gain: float = 0.1

    def __post_init__(self):
        if self.kp < 0 or self.micro_cap < 0 or self.correction_cap < 0 or self.iob_gain < 0:
            raise ParameterError("controller gains and caps must be >= 0")
        if not self.zone_low <= self.zone_high:
            raise ParameterError("zone_low must not exceed zone_high")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ControllerConfig":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ParameterError(f"unknown controller keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class PopulationConfig:
    log_sigma: float = 0.15
    perturbed: tuple = ("p1", "p2", "p3", "v_g", "bw", "tau_meal", "tau_ins", "carb_ratio")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PopulationConfig":
        unknown = set(data) - {"log_sigma", "perturbed"}
        if unknown:
            raise ParameterError(f"unknown population keys: {sorted(unknown)}")
        data = dict(data)
        if "perturbed" in data:
            data["perturbed"] = tuple(data["perturbed"])
        return cls(**data)


@dataclass(frozen=True)
class MealEvent:
    time: float
    carbs_d: float
    announced: bool = False

    def __post_init__(self):
        if self.carbs_d < 0:
            raise ParameterError(f"carbs_d must be >= 0, got {self.carbs_d!r}")
        if self.time < 0:
            raise ParameterError(f"meal time must be >= 0, got {self.time!r}")


@dataclass(frozen=True)
class SimState:
    """Minimal-model state plus the subcutaneous/plasma insulin chain."""

    g: float
    x: float
    i_sc1: float
    i_sc2: float
    i_plasma: float
    t: float = 0.0

    @classmethod
    def equilibrium(cls, params: PatientParams, t: float = 0.0) -> "SimState":
        depot = params.basal_rate * params.tau_ins
        return cls(g=params.g_b, x=0.0, i_sc1=depot, i_sc2=depot, i_plasma=params.i_b, t=t)

    def as_tuple(self) -> tuple:
        return (self.g, self.x, self.i_sc1, self.i_sc2, self.i_plasma)


@dataclass(frozen=True)
class PatientConfig:
    """Everything a scenario needs about one patient."""

    params: PatientParams
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    population: PopulationConfig = field(default_factory=PopulationConfig)


def load_patient_config(path=None) -> PatientConfig:
    """Read a patient config file; with no path the packaged defaults are used."""
    if path is None:
        text = resources.files("mealdetect").joinpath("data/default_patient.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return patient_config_from_dict(yaml.safe_load(text))


def patient_config_from_dict(raw: Mapping[str, Any]) -> PatientConfig:
    raw = dict(raw or {})
    version = raw.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ParameterError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    unknown = set(raw) - {"patient", "controller", "population"}
    if unknown:
        raise ParameterError(f"unknown top-level keys: {sorted(unknown)}")
    return PatientConfig(
        params=PatientParams.from_dict(raw.get("patient", {})),
        controller=ControllerConfig.from_dict(raw.get("controller", {})),
        population=PopulationConfig.from_dict(raw.get("population", {})),
    )


def dump_patient_config(cfg: PatientConfig) -> str:
    data = {
        "schema_version": SCHEMA_VERSION,
        "patient": cfg.params.to_dict(),
        "controller": dataclasses.asdict(cfg.controller),
        "population": {"log_sigma": cfg.population.log_sigma,
                       "perturbed": list(cfg.population.perturbed)},
    }
    return yaml.safe_dump(data, sort_keys=False)


def perturb_params(base: PatientParams, population: PopulationConfig, seed: int,
                   patient_id: str) -> PatientParams:
    """Draw one synthetic patient by log-normal scaling of the base constants."""
    rng = np.random.default_rng(seed)
    changes = {}
    for name in population.perturbed:
        factor = float(np.exp(rng.normal(0.0, population.log_sigma)))
        changes[name] = getattr(base, name) * factor
    return base.replace(seed=seed, patient_id=patient_id, **changes)
