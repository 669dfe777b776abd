from .monitor import (Alert, AlertOutcome, ConstantClassifier, DetectionResult, Monitor,
                      ThresholdRule, apply_rule, evaluate_window, is_triggered, replay, run_stream,
                      score_alerts, stream_samples)
from .registry import (Fingerprint, ModelNotFound, ModelRegistry, config_hash, dataset_hash,
                       register_model)

__all__ = [
    "Alert", "AlertOutcome", "ConstantClassifier", "DetectionResult", "Fingerprint",
    "ModelNotFound", "ModelRegistry", "Monitor", "ThresholdRule", "apply_rule", "config_hash",
    "dataset_hash", "evaluate_window", "is_triggered", "register_model", "replay", "run_stream",
    "score_alerts", "stream_samples",
]
