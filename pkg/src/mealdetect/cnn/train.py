"""Mini-batch SGD training with seeded, stratified train/test splitting."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from sklearn.model_selection import train_test_split

from ..exceptions import DatasetError, ParameterError
from ..metrics import Confusion, ScoreSet, confusion_from_indices, scores
from .model import CnnModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 16
    epochs: int = 300
    seed: int = 0
    train_fraction: float = 0.7
    early_stop_patience: Optional[int] = 20

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError("train_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ParameterError("batch_size >= 1, epochs >= 0 and learning_rate >= 0 required")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise ParameterError("early_stop_patience must be >= 1 or None")

    @classmethod
    def from_dict(cls, data) -> "TrainConfig":
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ParameterError(f"unknown train keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: Optional[float] = None
    test_accuracy: Optional[float] = None


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    train_indices: Optional[np.ndarray] = None
    test_indices: Optional[np.ndarray] = None
    train_accuracy: Optional[float] = None
    test_confusion: Optional[Confusion] = None
    test_scores: Optional[ScoreSet] = None
    stopped_early: bool = False
    wall_clock: float = 0.0

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    def to_dict(self, include_wall_clock: bool = True) -> dict:
        out = {
            "epochs": [dataclasses.asdict(e) for e in self.epochs],
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "train_accuracy": self.train_accuracy,
            "train_indices": None if self.train_indices is None else self.train_indices.tolist(),
            "test_indices": None if self.test_indices is None else self.test_indices.tolist(),
            "test_confusion": None if self.test_confusion is None else self.test_confusion._asdict(),
            "test_scores": None if self.test_scores is None else self.test_scores.to_dict(),
        }
        if include_wall_clock:
            out["wall_clock"] = self.wall_clock
        return out


def evaluate(model: CnnModel, images, labels, batch_size: int = 64) -> tuple:
    """(mean loss, accuracy, predicted labels) over a labeled set."""
    labels = np.asarray(labels, dtype=int)
    probs = predict_proba_batched(model, images, batch_size)
    p = np.maximum(probs[np.arange(len(labels)), labels], 1e-12)
    preds = probs.argmax(axis=1)
    return float(np.mean(-np.log(p))), float(np.mean(preds == labels)), preds


def predict_proba_batched(model: CnnModel, images, batch_size: int = 64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = np.empty((len(images), model.arch.n_classes))
    for start in range(0, len(images), batch_size):
        out[start:start + batch_size] = model.forward_batch(images[start:start + batch_size])
    return out


def sgd_step(model: CnnModel, grads: dict, lr: float) -> None:
    if lr == 0:
        return
    for name, g in grads.items():
        g *= lr
        model.params[name] -= g


def fit_model(model: CnnModel, images, labels, cfg: TrainConfig, test_images=None,
              test_labels=None, callback: Callable | None = None) -> tuple:
    """Train ``model`` in place on all given images; returns (model, epoch records, stopped_early).

    Early stopping watches the loss on (test_images, test_labels) when given.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(cfg.seed)
    records = []
    best, since_best, stopped = np.inf, 0, False
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch_loss, grads, probs = model.backward_batch(images[idx], labels[idx],
                                                            with_probs=True)
            loss_sum += batch_loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == labels[idx]))
            sgd_step(model, grads, cfg.learning_rate)
        # running figures: each batch is scored just before its own update
        rec = EpochRecord(epoch=epoch + 1, train_loss=loss_sum / n, train_accuracy=correct / n)
        if test_images is not None and len(test_images):
            rec.test_loss, rec.test_accuracy, _ = evaluate(model, test_images, test_labels)
        records.append(rec)
        logger.info("epoch %d loss %.4f acc %.3f test_loss %s test_acc %s", rec.epoch,
                    rec.train_loss, rec.train_accuracy, rec.test_loss, rec.test_accuracy)
        if callback is not None:
            callback(rec)
        if not np.isfinite(rec.train_loss):
            raise FloatingPointError(f"training diverged at epoch {rec.epoch}")
        if cfg.early_stop_patience and rec.test_loss is not None:
            if rec.test_loss < best:
                best, since_best = rec.test_loss, 0
            else:
                since_best += 1
                if since_best >= cfg.early_stop_patience:
                    stopped = True
                    break
    return model, records, stopped


def stratified_split(labels, cfg: TrainConfig) -> tuple:
    labels = np.asarray(labels)
    idx = np.arange(len(labels))
    if len(np.unique(labels)) < 2:
        raise DatasetError("dataset must contain both classes")
    train_idx, test_idx = train_test_split(idx, train_size=cfg.train_fraction, stratify=labels,
                                           random_state=cfg.seed)
    return np.sort(train_idx), np.sort(test_idx)


def train(model: CnnModel, images, labels, cfg: TrainConfig | None = None) -> tuple:
    """Split, fit and score; returns (trained model, TrainReport).

    The split is stratified by class and seeded by ``cfg.seed``; the returned
    report carries the indices so the held-out set can be re-scored later.
    """
    cfg = cfg or TrainConfig()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    started = time.perf_counter()
    train_idx, test_idx = stratified_split(labels, cfg)
    model, records, stopped = fit_model(model, images[train_idx], labels[train_idx], cfg,
                                        images[test_idx], labels[test_idx])
    _, train_acc, _ = evaluate(model, images[train_idx], labels[train_idx])
    _, _, preds = evaluate(model, images[test_idx], labels[test_idx])
    conf = confusion_from_indices(preds, labels[test_idx])
    report = TrainReport(epochs=records, train_indices=train_idx, test_indices=test_idx,
                         train_accuracy=train_acc, test_confusion=conf, test_scores=scores(conf),
                         stopped_early=stopped, wall_clock=time.perf_counter() - started)
    return model, report
