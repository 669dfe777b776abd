"""Minimal-model glucose kinetics and the RK4 integrator."""
from __future__ import annotations

import math
from typing import Callable, NamedTuple, Sequence, Union

from ..exceptions import ParameterError
from .params import MealEvent, PatientParams, SimState

RateInput = Union[float, Callable[[float], float]]


def absorbed_fraction(t: float, tau_meal: float) -> float:
    """Fraction of ingested carbohydrate that has reached plasma after ``t`` minutes.

    Uses the gamma-2 profile ``1 - (1 + t/tau) exp(-t/tau)``; zero for t <= 0.
    """
    if not tau_meal > 0:
        raise ParameterError(f"tau_meal must be > 0, got {tau_meal!r}")
    if t <= 0:
        return 0.0
    u = t / tau_meal
    return 1.0 - (1.0 + u) * math.exp(-u)


def absorption_rate(t: float, tau_meal: float) -> float:
    """Time derivative of :func:`absorbed_fraction` (1/min)."""
    if t <= 0:
        return 0.0
    return t / (tau_meal * tau_meal) * math.exp(-t / tau_meal)


def meal_appearance(meals: Sequence[MealEvent], params: PatientParams) -> Callable[[float], float]:
    """Rate of appearance ra(t) in mg/kg/min from a list of meals (carbs in grams)."""
    doses = [(m.time, m.carbs_d * 1000.0 / params.bw) for m in meals if m.carbs_d > 0]
    tau = params.tau_meal

    def ra(t: float) -> float:
        total = 0.0
        for t0, mg_per_kg in doses:
            if t > t0:
                total += mg_per_kg * absorption_rate(t - t0, tau)
        return total

    return ra


class StateDerivative(NamedTuple):
    g: float
    x: float
    i_sc1: float
    i_sc2: float
    i_plasma: float


def _rhs(y, params: PatientParams, infusion: float, ra: float):
    g, x, s1, s2, ip = y
    tau = params.tau_ins
    absorbed = s2 / tau
    return (
        -(params.p1 + x) * g + params.p1 * params.g_b + ra / params.v_g,
        -params.p2 * x + params.p3 * (ip - params.i_b),
        infusion - s1 / tau,
        (s1 - s2) / tau,
        absorbed * 1e6 / params.insulin_volume_ml - params.k_e * ip,
    )


def derivatives(state: SimState, params: PatientParams, infusion: float, ra: float) -> StateDerivative:
    """Right-hand side of the glucose/insulin system.

    ``infusion`` is the pump rate in U/min, ``ra`` the glucose appearance in
    mg/kg/min.
    """
    return StateDerivative(*_rhs(state.as_tuple(), params, infusion, ra))


def _as_callable(ra: RateInput) -> Callable[[float], float]:
    if callable(ra):
        return ra
    value = float(ra)
    return lambda t: value


def integrate_step(state: SimState, params: PatientParams, infusion: float, ra: RateInput,
                   dt: float = 1.0) -> SimState:
    """Advance ``state`` by ``dt`` minutes with classical fourth-order Runge-Kutta.

    ``ra`` may be a constant or a function of absolute time; the latter is
    sampled at the stage times so smooth meal inputs keep fourth-order accuracy.
    Infusion is held constant across the step.
    """
    if not 0 < dt <= 5:
        raise ParameterError(f"dt must lie in (0, 5] minutes, got {dt!r}")
    y = state.as_tuple()
    t = state.t
    ra_fn = _as_callable(ra)
    half = 0.5 * dt
    ra_mid = ra_fn(t + half)
    k1 = _rhs(y, params, infusion, ra_fn(t))
    k2 = _rhs(tuple(a + half * b for a, b in zip(y, k1)), params, infusion, ra_mid)
    k3 = _rhs(tuple(a + half * b for a, b in zip(y, k2)), params, infusion, ra_mid)
    k4 = _rhs(tuple(a + dt * b for a, b in zip(y, k3)), params, infusion, ra_fn(t + dt))
    out = tuple(a + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))
    return SimState(*out, t=t + dt)


def integrate(state: SimState, params: PatientParams, infusion: float, ra: RateInput,
              duration: float, dt: float = 1.0) -> list:
    """Integrate over ``duration`` minutes at fixed infusion; returns every state."""
    n = int(round(duration / dt))
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ParameterError("duration must be a whole number of steps")
    t0 = state.t
    states = [state]
    for step in range(n):
        state = integrate_step(state, params, infusion, ra, dt)
        # re-anchor time to avoid accumulated drift for small dt
        state = SimState(*state.as_tuple(), t=t0 + (step + 1) * dt)
        states.append(state)
    return states
