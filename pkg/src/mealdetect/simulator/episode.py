"""Closed-loop episode simulation and labeled window extraction."""
from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence

import numpy as np

from ..exceptions import ParseError, ScenarioError
from .controller import SLOT_MINUTES, controller_step
from .dynamics import integrate_step, meal_appearance
from .params import ControllerConfig, MealEvent, PatientParams, SimState

logger = logging.getLogger(__name__)

WINDOW_SAMPLES = 31
WINDOW_SPAN = (WINDOW_SAMPLES - 1) * SLOT_MINUTES  # 150 min
RESCUE_LEAD = 30.0      # rescue window starts this long before the snack
NOMEAL_START = 120.0    # no-meal window starts this long after the snack
MIN_TAIL = NOMEAL_START + WINDOW_SPAN  # 270 min
CGM_RANGE = (40.0, 400.0)

EPISODE_HEADER = ["t_min", "cgm_mgdl", "insulin_units", "event_flag"]
FLAG_NONE, FLAG_ANNOUNCED, FLAG_SNACK = 0, 1, 2


class Label(enum.IntEnum):
    NoMeal = 0
    RescueMeal = 1


@dataclass(frozen=True)
class Scenario:
    meals: tuple
    duration: float
    seed: int = 0

    @property
    def snacks(self) -> list:
        return sorted((m for m in self.meals if not m.announced), key=lambda m: m.time)


@dataclass
class Episode:
    t: np.ndarray
    cgm: np.ndarray
    insulin_delivered: np.ndarray
    meals: list
    params_id: str
    glucose: np.ndarray | None = None  # noise-free plasma glucose, when simulated

    def __post_init__(self):
        if not (len(self.t) == len(self.cgm) == len(self.insulin_delivered)):
            raise ScenarioError("episode series must share one grid")

    @property
    def snacks(self) -> list:
        return sorted((m for m in self.meals if not m.announced), key=lambda m: m.time)

    def samples(self) -> Iterable[tuple]:
        return zip(self.t.tolist(), self.cgm.tolist(), self.insulin_delivered.tolist())


@dataclass
class LabeledWindow:
    cgm: np.ndarray
    insulin: np.ndarray
    label: Label
    patient_id: str
    source_offset: float
    snack_index: int = -1
    replicate: int = 0

    def __post_init__(self):
        self.cgm = np.asarray(self.cgm, dtype=float)
        self.insulin = np.asarray(self.insulin, dtype=float)
        if self.cgm.shape != (WINDOW_SAMPLES,) or self.insulin.shape != (WINDOW_SAMPLES,):
            raise ScenarioError(f"windows hold exactly {WINDOW_SAMPLES} samples per signal")
        self.label = Label(self.label)


def validate_scenario(scenario: Scenario) -> None:
    for m in scenario.meals:
        if m.time % SLOT_MINUTES:
            raise ScenarioError(f"meal at t={m.time} is off the 5-minute grid")
        if m.time > scenario.duration:
            raise ScenarioError(f"meal at t={m.time} lies beyond the episode end")
    if scenario.duration % SLOT_MINUTES:
        raise ScenarioError("duration must be a multiple of 5 minutes")
    snacks = scenario.snacks
    for a, b in zip(snacks, snacks[1:]):
        if b.time - a.time < RESCUE_LEAD + MIN_TAIL:
            raise ScenarioError(
                f"snacks at t={a.time} and t={b.time} have overlapping label windows")
    if snacks and scenario.duration < snacks[-1].time + MIN_TAIL:
        raise ScenarioError(
            f"duration must extend {MIN_TAIL:.0f} min beyond the last snack")


def insulin_on_board(state: SimState, params: PatientParams) -> float:
    """Subcutaneous insulin in excess of the basal steady state (U)."""
    return max(state.i_sc1 + state.i_sc2 - 2.0 * params.basal_rate * params.tau_ins, 0.0)


def simulate_episode(params: PatientParams, scenario: Scenario,
                     controller: ControllerConfig | None = None, dt: float = 1.0,
                     noise_sigma: float | None = None) -> Episode:
    """Run the closed loop, sampling CGM and pump deliveries every 5 minutes.

    The controller acts on the noisy CGM reading. Noise comes from
    ``scenario.seed`` so the same inputs always give the same episode.
    """
    validate_scenario(scenario)
    controller = controller or ControllerConfig()
    sigma = params.cgm_noise_sigma if noise_sigma is None else noise_sigma
    steps_per_slot = int(round(SLOT_MINUTES / dt))
    if abs(steps_per_slot * dt - SLOT_MINUTES) > 1e-12:
        raise ScenarioError("dt must divide the 5-minute slot")
    rng = np.random.default_rng(scenario.seed)
    ra = meal_appearance(scenario.meals, params)
    announced = {}
    for m in scenario.meals:
        if m.announced:
            announced.setdefault(m.time, []).append(m)

    n = int(scenario.duration // SLOT_MINUTES) + 1
    t_grid = np.arange(n) * SLOT_MINUTES
    cgm = np.empty(n)
    glucose = np.empty(n)
    delivered = np.empty(n)
    state = SimState.equilibrium(params)
    for k in range(n):
        t_slot = k * SLOT_MINUTES
        glucose[k] = state.g
        noise = rng.normal(0.0, sigma) if sigma > 0 else 0.0
        cgm[k] = min(max(state.g + noise, CGM_RANGE[0]), CGM_RANGE[1])
        dose = controller_step(cgm[k], insulin_on_board(state, params),
                               announced.get(t_slot, ()), params, controller)
        delivered[k] = dose.total
        if k == n - 1:
            break
        infusion = dose.total / SLOT_MINUTES
        for step in range(steps_per_slot):
            state = integrate_step(state, params, infusion, ra, dt)
        state = SimState(*state.as_tuple(), t=t_slot + SLOT_MINUTES)
        if state.g <= 0:
            raise ScenarioError(f"glucose left the physical range at t={state.t}")
    return Episode(t=t_grid, cgm=cgm, insulin_delivered=delivered,
                   meals=sorted(scenario.meals, key=lambda m: m.time),
                   params_id=params.patient_id, glucose=glucose)


def _offsets(base: float, lo: float, hi: float, stride: float) -> List[float]:
    count = int(round((hi - lo) / stride))
    return [base + lo + i * stride for i in range(count + 1)]


def extract_windows(episode: Episode, jitter: float = 15.0, stride: float = 5.0,
                    augment: bool = True, replicate: int = 0,
                    announced_negatives: bool = False) -> List[LabeledWindow]:
    """Cut rescue-meal and no-meal windows around every unannounced snack.

    Rescue windows start 30 min before the snack, no-meal windows 120 min
    after it. With ``augment`` the rescue start is jittered by +-``jitter``
    and the no-meal start is shifted by 0..2*``jitter`` minutes so it never
    reaches back into the rescue period. Windows falling off the episode or
    overlapping another snack's rescue period are skipped and counted.

    ``announced_negatives`` adds NoMeal windows placed like rescue windows
    around each bolused meal (``snack_index`` -1), so a classifier sees
    covered excursions as negatives.
    """
    snacks = episode.snacks
    if not snacks:
        raise ScenarioError("no deviation events to label")
    step = float(episode.t[1] - episode.t[0]) if len(episode.t) > 1 else SLOT_MINUTES
    t0 = float(episode.t[0])
    n = len(episode.t)
    windows: List[LabeledWindow] = []
    skipped = 0
    rescue_spans = [(s.time - RESCUE_LEAD, s.time + NOMEAL_START) for s in snacks]
    for idx, snack in enumerate(snacks):
        s = snack.time
        if augment:
            rescue = _offsets(s - RESCUE_LEAD, -jitter, jitter, stride)
            nomeal = _offsets(s + NOMEAL_START, 0.0, 2 * jitter, stride)
        else:
            rescue, nomeal = [s - RESCUE_LEAD], [s + NOMEAL_START]
        for label, offsets in ((Label.RescueMeal, rescue), (Label.NoMeal, nomeal)):
            for off in offsets:
                start = int(round((off - t0) / step))
                if start < 0 or start + WINDOW_SAMPLES > n:
                    skipped += 1
                    continue
                end = off + WINDOW_SPAN
                if label is Label.RescueMeal and not off <= s <= end:
                    skipped += 1
                    continue
                if label is Label.NoMeal and any(off < hi and end > lo for lo, hi in rescue_spans):
                    skipped += 1
                    continue
                sl = slice(start, start + WINDOW_SAMPLES)
                windows.append(LabeledWindow(
                    cgm=episode.cgm[sl].copy(), insulin=episode.insulin_delivered[sl].copy(),
                    label=label, patient_id=episode.params_id, source_offset=off,
                    snack_index=idx, replicate=replicate))
    if announced_negatives:
        for meal in episode.meals:
            if not meal.announced:
                continue
            base = meal.time - RESCUE_LEAD
            offsets = _offsets(base, -jitter, jitter, stride) if augment else [base]
            for off in offsets:
                start = int(round((off - t0) / step))
                end = off + WINDOW_SPAN
                if (start < 0 or start + WINDOW_SAMPLES > n
                        or any(off < hi and end > lo for lo, hi in rescue_spans)):
                    skipped += 1
                    continue
                sl = slice(start, start + WINDOW_SAMPLES)
                windows.append(LabeledWindow(
                    cgm=episode.cgm[sl].copy(), insulin=episode.insulin_delivered[sl].copy(),
                    label=Label.NoMeal, patient_id=episode.params_id, source_offset=off,
                    snack_index=-1, replicate=replicate))
    if skipped:
        logger.warning("%s: skipped %d windows outside the episode or overlapping a snack",
                       episode.params_id, skipped)
    return windows


# --- persistence ----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def episode_to_text(episode: Episode) -> str:
    flags = np.zeros(len(episode.t), dtype=int)
    for m in episode.meals:
        k = int(np.searchsorted(episode.t, m.time))
        if k < len(flags) and episode.t[k] == m.time:
            flags[k] = FLAG_ANNOUNCED if m.announced else FLAG_SNACK
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EPISODE_HEADER)
    for t, g, u, f in zip(episode.t, episode.cgm, episode.insulin_delivered, flags):
        w.writerow([f"{t:g}", _fmt(g), _fmt(u), int(f)])
    return buf.getvalue()


def write_episode(episode: Episode, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(episode_to_text(episode))


def parse_episode_row(row: Sequence[str], lineno: int) -> tuple:
    if len(row) != len(EPISODE_HEADER):
        raise ParseError(f"expected {len(EPISODE_HEADER)} columns, got {len(row)}", lineno)
    try:
        t, g, u, f = float(row[0]), float(row[1]), float(row[2]), int(row[3])
    except ValueError as exc:
        raise ParseError(str(exc), lineno) from None
    if f not in (FLAG_NONE, FLAG_ANNOUNCED, FLAG_SNACK):
        raise ParseError(f"unknown event_flag {f}", lineno)
    return t, g, u, f


def check_header(row: Sequence[str], lineno: int = 1) -> None:
    if [c.strip() for c in row] != EPISODE_HEADER:
        raise ParseError(f"header must be {','.join(EPISODE_HEADER)}", lineno)


def read_episode(source, params_id: str = "") -> Episode:
    """Parse the columnar episode format from a path or an open text stream.

    Carb amounts are not stored in the file; meals come back with
    ``carbs_d=0`` and only their timing and announcement flag.
    """
    if hasattr(source, "read"):
        return _read_episode(source, params_id)
    with open(source, newline="") as fh:
        return _read_episode(fh, params_id)


def _read_episode(fh, params_id: str) -> Episode:
    reader = csv.reader(fh)
    rows = []
    for lineno, row in enumerate(reader, start=1):
        if lineno == 1:
            check_header(row)
            continue
        if not row:
            continue
        rows.append(parse_episode_row(row, lineno))
    if not rows:
        raise ParseError("episode has no samples")
    arr = np.array([r[:3] for r in rows], dtype=float)
    meals = [MealEvent(time=r[0], carbs_d=0.0, announced=r[3] == FLAG_ANNOUNCED)
             for r in rows if r[3] != FLAG_NONE]
    return Episode(t=arr[:, 0], cgm=arr[:, 1], insulin_delivered=arr[:, 2],
                   meals=meals, params_id=params_id)


WINDOW_META = ["patient_id", "label", "source_offset", "snack_index", "replicate"]


def write_windows(windows: Sequence[LabeledWindow], path) -> None:
    header = WINDOW_META + [f"cgm_{i}" for i in range(WINDOW_SAMPLES)] + \
        [f"ins_{i}" for i in range(WINDOW_SAMPLES)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for win in windows:
            w.writerow([win.patient_id, win.label.name, f"{win.source_offset:g}",
                        win.snack_index, win.replicate]
                       + [_fmt(v) for v in win.cgm] + [_fmt(v) for v in win.insulin])


def read_windows(path) -> List[LabeledWindow]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:len(WINDOW_META)] != WINDOW_META:
            raise ParseError("window file header is missing or malformed", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(WINDOW_META) + 2 * WINDOW_SAMPLES:
                raise ParseError("wrong number of columns", lineno)
            try:
                values = np.array(row[len(WINDOW_META):], dtype=float)
                out.append(LabeledWindow(
                    cgm=values[:WINDOW_SAMPLES], insulin=values[WINDOW_SAMPLES:],
                    label=Label[row[1]], patient_id=row[0], source_offset=float(row[2]),
                    snack_index=int(row[3]), replicate=int(row[4])))
            except (KeyError, ValueError) as exc:
                raise ParseError(f"bad window row: {exc}", lineno) from None
    return out
