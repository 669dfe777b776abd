"""Streaming deviation monitor: sliding windows, classification, threshold rule, alerts."""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Iterator, List, Optional, Protocol, TextIO

from ..encoder import EncoderConfig, encode_pair
from ..exceptions import EmptyMatrix, ParameterError, ParseError, StreamError
from ..simulator.episode import WINDOW_SAMPLES, WINDOW_SPAN, Label, check_header, parse_episode_row

logger = logging.getLogger(__name__)

SAMPLE_STEP = 5.0


class Classifier(Protocol):
    def predict_image(self, image) -> tuple: ...


@dataclass(frozen=True)
class ThresholdRule:
    confidence_min: float = 0.5
    consecutive_k: int = 3
    cooldown: float = 120.0

    def __post_init__(self):
        if not 0.5 <= self.confidence_min <= 1.0:
            raise ParameterError("confidence_min must lie in [0.5, 1]")
        if self.consecutive_k < 1:
            raise ParameterError("consecutive_k must be >= 1")
        if self.cooldown < 0:
            raise ParameterError("cooldown must be >= 0")

    @classmethod
    def parse(cls, text: str, base: "ThresholdRule | None" = None) -> "ThresholdRule":
        """Parse ``k=<n>,conf=<f>,cooldown=<min>``; omitted keys keep ``base`` values."""
        rule = base or cls()
        keys = {"k": ("consecutive_k", int), "conf": ("confidence_min", float),
                "cooldown": ("cooldown", float)}
        changes = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key.strip() not in keys:
                raise ParameterError(f"bad rule component {part!r}; use k=, conf=, cooldown=")
            field, cast = keys[key.strip()]
            try:
                changes[field] = cast(value)
            except ValueError:
                raise ParameterError(f"bad value in rule component {part!r}") from None
        return replace(rule, **changes)


@dataclass(frozen=True)
class DetectionResult:
    t: float
    window_start: float
    label: Optional[Label]
    confidence: Optional[float]
    triggered: bool
    skipped: bool = False
    consecutive: int = 0


@dataclass(frozen=True)
class Alert:
    timestamp: float
    patient_id: str
    window_start: float
    confidence: float
    rule: ThresholdRule

    def format(self) -> str:
        return (f"ALERT {self.timestamp:g} patient={self.patient_id} "
                f"confidence={self.confidence!r} window_start={self.window_start:g}")


def is_triggered(label, confidence: float, rule: ThresholdRule) -> bool:
    """Positive window: RescueMeal at or above the confidence floor (inclusive)."""
    return Label(label) is Label.RescueMeal and confidence >= rule.confidence_min


def evaluate_window(window, classifier: Classifier, rule: ThresholdRule,
                    encoder: EncoderConfig, t: float | None = None) -> DetectionResult:
    """Encode one window and classify it; ``window`` needs ``cgm`` and ``insulin``."""
    image = encode_pair(window.cgm, window.insulin, encoder)
    label, confidence = classifier.predict_image(image)
    start = getattr(window, "source_offset", 0.0)
    end = start + WINDOW_SPAN if t is None else t
    return DetectionResult(t=end, window_start=start, label=Label(label),
                           confidence=float(confidence),
                           triggered=is_triggered(label, confidence, rule))


class _RuleTracker:
    """Consecutive counter plus cooldown; shared by live and offline rule application."""

    def __init__(self, rule: ThresholdRule):
        self.rule = rule
        self.consecutive = 0
        self.last_alert: Optional[float] = None

    def update(self, t: float, positive: bool) -> bool:
        self.consecutive = self.consecutive + 1 if positive else 0
        if self.consecutive < self.rule.consecutive_k:
            return False
        if self.last_alert is not None and t - self.last_alert < self.rule.cooldown:
            return False
        self.last_alert = t
        return True


class Monitor:
    """Single-writer monitor for one patient's stream.

    Every new sample after the buffer fills classifies the trailing
    31-sample window. Encoder failures skip the window and reset the
    consecutive counter.
    """

    def __init__(self, classifier: Classifier, encoder: EncoderConfig, rule: ThresholdRule,
                 patient_id: str, model_id: str = "", capacity: int = WINDOW_SAMPLES):
        if capacity < WINDOW_SAMPLES:
            raise ParameterError(f"buffer capacity must be >= {WINDOW_SAMPLES}")
        self.classifier = classifier
        self.encoder = encoder
        self.rule = rule
        self.patient_id = patient_id
        self.model_id = model_id
        self.buffer: deque = deque(maxlen=capacity)
        self.last_t: Optional[float] = None
        self.results: List[DetectionResult] = []
        self.alerts: List[Alert] = []
        self._tracker = _RuleTracker(rule)

    @property
    def consecutive(self) -> int:
        return self._tracker.consecutive

    @property
    def last_alert_time(self) -> Optional[float]:
        return self._tracker.last_alert

    def ingest(self, t: float, cgm: float, insulin: float) -> Optional[Alert]:
        if self.last_t is not None:
            if t <= self.last_t:
                raise StreamError(f"timestamp {t:g} does not advance past {self.last_t:g}")
            if abs(t - self.last_t - SAMPLE_STEP) > 1e-9:
                raise StreamError(f"gap {t - self.last_t:g} min between samples; expected 5")
        self.last_t = t
        self.buffer.append((cgm, insulin))
        if len(self.buffer) < WINDOW_SAMPLES:
            return None
        recent = list(self.buffer)[-WINDOW_SAMPLES:]
        window_start = t - WINDOW_SPAN
        try:
            image = encode_pair([s[0] for s in recent], [s[1] for s in recent], self.encoder)
        except EmptyMatrix:
            logger.info("%s: window at %g is degenerate; skipped", self.patient_id, window_start)
            self._tracker.update(t, False)
            self.results.append(DetectionResult(t, window_start, None, None, False, skipped=True))
            return None
        label, confidence = self.classifier.predict_image(image)
        positive = is_triggered(label, confidence, self.rule)
        fire = self._tracker.update(t, positive)
        self.results.append(DetectionResult(t, window_start, Label(label), float(confidence),
                                            positive, consecutive=self._tracker.consecutive))
        if not fire:
            return None
        alert = Alert(t, self.patient_id, window_start, float(confidence), self.rule)
        self.alerts.append(alert)
        return alert


def apply_rule(results: Iterable[DetectionResult], rule: ThresholdRule, patient_id: str
               ) -> List[Alert]:
    """Re-derive alerts from a fixed classification log under another rule."""
    tracker = _RuleTracker(rule)
    alerts = []
    for r in results:
        positive = not r.skipped and is_triggered(r.label, r.confidence, rule)
        if tracker.update(r.t, positive):
            alerts.append(Alert(r.t, patient_id, r.window_start, r.confidence, rule))
    return alerts


def stream_samples(fh: TextIO) -> Iterator[tuple]:
    """Yield (line number, t, cgm, insulin) from the episode text format, one line at a time."""
    reader = csv.reader(fh)
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1:
            check_header(row)
            continue
        if not row:
            continue
        t, g, u, _ = parse_episode_row(row, lineno)
        yield lineno, t, g, u


def run_stream(fh: TextIO, monitor: Monitor, on_alert=None) -> Monitor:
    for lineno, t, g, u in stream_samples(fh):
        try:
            alert = monitor.ingest(t, g, u)
        except StreamError as exc:
            raise ParseError(str(exc), lineno) from None
        if alert is not None and on_alert is not None:
            on_alert(alert)
    return monitor


def replay(episode_file, patient_id: str, rule: ThresholdRule, classifier: Classifier,
           encoder: EncoderConfig) -> tuple:
    """Offline run over an episode file; returns (alerts, per-window results)."""
    monitor = Monitor(classifier, encoder, rule, patient_id)
    if hasattr(episode_file, "read"):
        run_stream(episode_file, monitor)
    else:
        with open(episode_file, newline="") as fh:
            run_stream(fh, monitor)
    return monitor.alerts, monitor.results


def results_to_rows(results: Iterable[DetectionResult]) -> list:
    rows = []
    for r in results:
        d = asdict(r)
        d["label"] = r.label.name if r.label is not None else ""
        rows.append(d)
    return rows


class ConstantClassifier:
    """Returns the same (label, confidence) for every image; for tests and dry runs."""

    def __init__(self, label=Label.RescueMeal, confidence: float = 0.9):
        self.label = Label(label)
        self.confidence = confidence

    def predict_image(self, image) -> tuple:
        return int(self.label), self.confidence


@dataclass(frozen=True)
class AlertOutcome:
    n_snacks: int
    detected: int
    false_alarms: int
    latencies: tuple

    @property
    def sensitivity(self) -> float:
        return self.detected / self.n_snacks if self.n_snacks else 0.0


def score_alerts(alerts: Iterable[Alert], snack_times: Iterable[float]) -> AlertOutcome:
    """Match alerts to snacks: an alert is true when its window contains a snack.

    Each snack counts once (first matching alert gives the latency); every
    alert whose window holds no snack is a false alarm.
    """
    snacks = sorted(float(s) for s in snack_times)
    first = {}
    false_alarms = 0
    for a in alerts:
        hits = [s for s in snacks if a.window_start <= s <= a.timestamp]
        if not hits:
            false_alarms += 1
        for s in hits:
            first.setdefault(s, a.timestamp - s)
    return AlertOutcome(len(snacks), len(first), false_alarms,
                        tuple(first[s] for s in snacks if s in first))
