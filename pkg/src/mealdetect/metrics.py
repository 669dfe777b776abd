"""Confusion-matrix scores and per-patient report emission.

RescueMeal is the positive class. Ratios whose denominator is zero are
reported as 0.0 and flagged rather than raising.
"""
from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .exceptions import ShapeError

POSITIVE = 1
CSV_HEADER = ["patient_id", "accuracy", "precision", "recall", "f1", "n_test", "flags"]


class Confusion(NamedTuple):
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


class ScoreSet(NamedTuple):
    accuracy: float
    precision: float
    recall: float
    f1: float
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "flags": list(self.flags)}


def _is_positive(label) -> bool:
    name = getattr(label, "name", label)
    if isinstance(name, str):
        if name not in ("RescueMeal", "NoMeal"):
            raise ValueError(f"unknown label {label!r}")
        return name == "RescueMeal"
    if int(label) not in (0, 1):
        raise ValueError(f"unknown label {label!r}")
    return int(label) == POSITIVE


def confusion(predictions: Sequence, truths: Sequence) -> Confusion:
    """Count outcomes; labels may be Label members, their names, or 0/1."""
    if len(predictions) != len(truths):
        raise ShapeError(f"{len(predictions)} predictions vs {len(truths)} truths")
    tp = fp = tn = fn = 0
    for p, t in zip(predictions, truths):
        pp, tt = _is_positive(p), _is_positive(t)
        if pp and tt:
            tp += 1
        elif pp:
            fp += 1
        elif tt:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, tn, fn)


def confusion_from_indices(predictions, truths) -> Confusion:
    p = np.asarray(predictions, dtype=int)
    t = np.asarray(truths, dtype=int)
    if p.shape != t.shape:
        raise ShapeError(f"{p.shape} predictions vs {t.shape} truths")
    return Confusion(tp=int(np.sum((p == 1) & (t == 1))), fp=int(np.sum((p == 1) & (t == 0))),
                     tn=int(np.sum((p == 0) & (t == 0))), fn=int(np.sum((p == 0) & (t == 1))))


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(f"{name}_undefined")
        return 0.0
    return num / den


def scores(c: Confusion) -> ScoreSet:
    flags: list = []
    accuracy = _ratio(c.tp + c.tn, c.total, "accuracy", flags)
    precision = _ratio(c.tp, c.tp + c.fp, "precision", flags)
    recall = _ratio(c.tp, c.tp + c.fn, "recall", flags)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1", flags)
    return ScoreSet(accuracy, precision, recall, f1, tuple(flags))


def round2(x: float) -> str:
    """Two decimals, halves rounded away from zero on the shortest decimal repr."""
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def emit_report(per_patient: Mapping[str, ScoreSet], n_test: Mapping[str, int] | None = None
                ) -> tuple:
    """Return (text table with two-decimal accuracy/F1, CSV with full precision)."""
    if not per_patient:
        raise ValueError("report needs at least one patient")
    n_test = n_test or {}
    rows = [("Patient", "Accuracy", "F1")]
    for pid, s in per_patient.items():
        rows.append((str(pid), round2(s.accuracy), round2(s.f1)))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [sep]
    for i, r in enumerate(rows):
        lines.append("| " + " | ".join(v.rjust(w) if i else v.ljust(w)
                                       for v, w in zip(r, widths)) + " |")
        if i == 0:
            lines.append(sep)
    lines.append(sep)
    text = "\n".join(lines) + "\n"

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for pid, s in per_patient.items():
        w.writerow([pid, repr(s.accuracy), repr(s.precision), repr(s.recall), repr(s.f1),
                    n_test.get(pid, ""), ";".join(s.flags)])
    return text, buf.getvalue()


def read_report_csv(text: str) -> dict:
    reader = csv.DictReader(io.StringIO(text))
    out = {}
    for row in reader:
        out[row["patient_id"]] = ScoreSet(float(row["accuracy"]), float(row["precision"]),
                                          float(row["recall"]), float(row["f1"]),
                                          tuple(f for f in row["flags"].split(";") if f))
    return out
