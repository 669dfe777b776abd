"""Per-patient model registry: a directory of model files plus a JSON index."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..cnn.io import model_from_bytes, model_to_bytes
from ..cnn.model import CnnModel
from ..exceptions import ChecksumError, RegistryError

INDEX_NAME = "registry.json"
INDEX_VERSION = 1


class ModelNotFound(RegistryError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "model not found"


@dataclass(frozen=True)
class Fingerprint:
    dataset_hash: str
    config_hash: str


def dataset_hash(images, labels) -> str:
    h = hashlib.sha256()
    x = np.ascontiguousarray(images, dtype="<f8")
    h.update(repr(x.shape).encode())
    h.update(x.tobytes())
    h.update(np.ascontiguousarray(labels, dtype="<i8").tobytes())
    return h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class ModelRegistry:
    """Maps patient ids to persisted models, their sha256 and training fingerprint.

    Each entry may also carry the encoder settings the model was trained
    with, so a monitor can rebuild matching images.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.index_path = self.root / INDEX_NAME

    def _read_index(self) -> dict:
        if not self.index_path.exists():
            return {}
        with open(self.index_path) as fh:
            data = json.load(fh)
        if data.get("version") != INDEX_VERSION:
            raise RegistryError(f"unsupported registry index version {data.get('version')!r}")
        return data["models"]

    def _write_index(self, models: dict) -> None:
        blob = json.dumps({"version": INDEX_VERSION, "models": models}, indent=2, sort_keys=True)
        _atomic_write(self.index_path, (blob + "\n").encode())

    def patients(self) -> list:
        return sorted(self._read_index())

    def __contains__(self, patient_id) -> bool:
        return patient_id in self._read_index()

    def entry(self, patient_id: str) -> dict:
        models = self._read_index()
        if patient_id not in models:
            raise ModelNotFound(f"no model registered for patient {patient_id!r}")
        return dict(models[patient_id])

    def register(self, patient_id: str, model: CnnModel, fingerprint: Fingerprint,
                 encoder: Optional[dict] = None, force: bool = False) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        models = self._read_index()
        if patient_id in models and not force:
            raise RegistryError(f"patient {patient_id!r} already has a model; pass force to overwrite")
        data = model_to_bytes(model)
        name = f"{patient_id}.gdcnn"
        _atomic_write(self.root / name, data)
        models[patient_id] = {
            "path": name,
            "sha256": hashlib.sha256(data).hexdigest(),
            "dataset_hash": fingerprint.dataset_hash,
            "config_hash": fingerprint.config_hash,
            "encoder": encoder,
        }
        self._write_index(models)
        return self.root / name

    def load(self, patient_id: str, expected_input: int | None = None) -> CnnModel:
        entry = self.entry(patient_id)
        path = self.root / entry["path"]
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise ModelNotFound(f"model file {path} for patient {patient_id!r} is missing") from None
        if hashlib.sha256(data).hexdigest() != entry["sha256"]:
            raise ChecksumError(f"checksum mismatch for {path}; retrain or re-register")
        return model_from_bytes(data, expected_input)

    def fingerprint(self, patient_id: str) -> Fingerprint:
        e = self.entry(patient_id)
        return Fingerprint(e["dataset_hash"], e["config_hash"])


def register_model(registry: ModelRegistry, patient_id: str, model: CnnModel,
                   fingerprint: Fingerprint, force: bool = False, encoder: dict | None = None):
    return registry.register(patient_id, model, fingerprint, encoder=encoder, force=force)
