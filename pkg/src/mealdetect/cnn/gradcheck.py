"""Central-difference gradient checking.

ReLU and max-pool are piecewise linear, so a probe of +-eps can straddle a
kink where the analytic gradient does not describe the finite difference.
:func:`pattern` exposes the active set so callers can tell the two apart.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CnnModel, backward, forward, loss


def pattern(model: CnnModel, image) -> tuple:
    """ReLU masks and pool argmax indices, the discrete state of the network."""
    _, c = model.forward_batch(image, keep_cache=True)
    return (c["z1"] > 0, c["arg1"], c["z2"] > 0, c["arg2"], c["z3"] > 0)


def _same(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int
    kink_crossings: int


def numerical_gradient(model: CnnModel, image, label: int, name: str, index: tuple,
                       eps: float = 1e-4) -> float:
    p = model.params[name]
    old = p[index]
    p[index] = old + eps
    lp = loss(forward(model, image), label)
    p[index] = old - eps
    lm = loss(forward(model, image), label)
    p[index] = old
    return (lp - lm) / (2 * eps)


def check_gradients(model: CnnModel, image, label: int, eps: float = 1e-4,
                    floor: float = 1e-8, detect_kinks: bool = True) -> GradCheckResult:
    """Compare analytic and central-difference gradients for every parameter.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``. Kink crossings are
    counted (not excluded) when ``detect_kinks`` is set.
    """
    grads = backward(model, image, label)
    base = pattern(model, image) if detect_kinks else None
    worst, worst_name, worst_idx, count, kinks = 0.0, "", (), 0, 0
    for name, p in model.params.items():
        for index in np.ndindex(p.shape):
            num = numerical_gradient(model, image, label, name, index, eps)
            ana = float(grads[name][index])
            rel = abs(ana - num) / max(abs(ana), abs(num), floor)
            count += 1
            if detect_kinks:
                old = p[index]
                p[index] = old + eps
                up = pattern(model, image)
                p[index] = old - eps
                down = pattern(model, image)
                p[index] = old
                if not (_same(base, up) and _same(base, down)):
                    kinks += 1
            if rel > worst:
                worst, worst_name, worst_idx = rel, name, index
    return GradCheckResult(worst, worst_name, worst_idx, count, kinks)


def smooth_check_point(make, max_attempts: int = 50):
    """Draw ``make(attempt)`` -> (model, image, label) until no probe straddles a kink.

    Returns (model, image, label, attempts_used).
    """
    for attempt in range(max_attempts):
        model, image, label = make(attempt)
        result = check_gradients(model, image, label)
        if result.kink_crossings == 0:
            return model, image, label, attempt + 1, result
    raise RuntimeError(f"no kink-free check point in {max_attempts} draws")
