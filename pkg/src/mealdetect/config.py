"""Workflow configuration (YAML) shared by the command-line subcommands."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

from .cnn.train import TrainConfig
from .exceptions import ParameterError
from .pipeline.monitor import ThresholdRule
from .simulator.scenario import ScheduleConfig

SCHEMA_VERSION = 1
ENCODER_KEYS = {"normalization", "d_interval", "assumed_d_carbs", "degenerate_fill"}
_TOP_KEYS = {"schema_version", "seed", "patient_config", "paths", "patients", "simulation",
             "encoder", "train", "rule"}


def _reject_unknown(section: str, data: Mapping, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        where = f"{section}: " if section else ""
        raise ParameterError(f"{where}unknown keys {sorted(unknown)}")


@dataclass(frozen=True)
class Paths:
    data_dir: str = "data"
    image_dir: str = "images"
    model_dir: str = "models"
    report_dir: str = "reports"

    def resolve(self, root) -> "Paths":
        root = Path(root)
        return Paths(*(str(root / getattr(self, f.name)) for f in dataclasses.fields(self)))


@dataclass(frozen=True)
class PatientSpec:
    id: str
    n_snacks: int
    images_per_class: int = 200

    def __post_init__(self):
        if not self.id or any(c in self.id for c in "/\\ ="):
            raise ParameterError(f"bad patient id {self.id!r}")
        if self.images_per_class < 1:
            raise ParameterError("images_per_class must be >= 1")


@dataclass(frozen=True)
class SimulationSection:
    jitter: float = 15.0
    announced_meals: bool = True
    perturb: bool = True
    announced_negatives: bool = False

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(announced_meals=self.announced_meals)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    patient_config: Optional[str] = None
    paths: Paths = field(default_factory=Paths)
    patients: tuple = ()
    simulation: SimulationSection = field(default_factory=SimulationSection)
    encoder: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    rule: ThresholdRule = field(default_factory=ThresholdRule)

    def patient(self, patient_id: str) -> PatientSpec:
        for p in self.patients:
            if p.id == patient_id:
                return p
        raise ParameterError(f"patient {patient_id!r} is not in the config")

    def with_seed(self, seed: int) -> "RunConfig":
        """New run seed; the training seed follows it."""
        train = dataclasses.replace(self.train, seed=seed)
        return dataclasses.replace(self, seed=seed, train=train)

    def derive_seed(self, *keys: int) -> int:
        """Independent 32-bit stream seed for (run seed, *keys)."""
        return int(np.random.SeedSequence([self.seed, *keys]).generate_state(1)[0])


def _section(cls, data: Mapping | None, name: str):
    data = dict(data or {})
    _reject_unknown(name, data, {f.name for f in dataclasses.fields(cls)})
    return cls(**data)


def run_config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    raw = dict(raw or {})
    _reject_unknown("", raw, _TOP_KEYS)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ParameterError(f"unsupported schema_version {raw.get('schema_version')!r} "
                             f"(expected {SCHEMA_VERSION})")
    seed = int(raw.get("seed", 0))
    if not 0 <= seed < 2 ** 64:
        raise ParameterError("seed must be an unsigned 64-bit integer")
    patients = tuple(_section(PatientSpec, p, "patients[]") for p in raw.get("patients") or ())
    ids = [p.id for p in patients]
    if len(set(ids)) != len(ids):
        raise ParameterError("patient ids must be unique")
    encoder = dict(raw.get("encoder") or {})
    _reject_unknown("encoder", encoder, ENCODER_KEYS)
    train = dict(raw.get("train") or {})
    train.setdefault("seed", seed)
    return RunConfig(
        seed=seed,
        patient_config=raw.get("patient_config"),
        paths=_section(Paths, raw.get("paths"), "paths"),
        patients=patients,
        simulation=_section(SimulationSection, raw.get("simulation"), "simulation"),
        encoder=encoder,
        train=TrainConfig.from_dict(train),
        rule=_section(ThresholdRule, raw.get("rule"), "rule"),
    )


def load_run_config(path=None) -> RunConfig:
    """Read a run config; with no path the packaged default is used."""
    if path is None:
        text = resources.files("mealdetect").joinpath("data/default_run.yaml").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParameterError(f"config is not valid YAML: {exc}") from None
    return run_config_from_dict(raw)
