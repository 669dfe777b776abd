"""Glucose/insulin window to sensitivity-relation image encoding.

Each matrix entry (j, k) evaluates the area-under-the-curve relation of the
minimal model over the sample interval between nodes j and k, so the matrix
is symmetric with a masked diagonal, much like a recurrence plot.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_windows
from .exceptions import DegenerateInterval, EmptyMatrix, ParameterError, ShapeError
from .simulator.dynamics import absorbed_fraction
from .simulator.params import PatientParams

SAMPLE_MINUTES = 5.0
DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class EncoderConfig:
    """Constants the encoder needs, usually copied from a patient's parameters.

    ``normalization`` is ``"minmax"`` or ``("fixed", lo, hi)``.
    ``assumed_d_carbs`` (grams) is the meal size assumed at encode time, with
    the meal placed at the window start; 0 drops the absorption term.
    """

    si: float
    gezi: float
    v_g: float
    bw: float
    i_b: float
    g_b: float
    d_interval: int = 1
    assumed_d_carbs: float = 0.0
    tau_meal: float = 40.0
    normalization: object = "minmax"
    degenerate_fill: float = 0.5

    def __post_init__(self):
        if int(self.d_interval) != self.d_interval or self.d_interval < 1:
            raise ParameterError("d_interval must be an integer >= 1")
        if not self.si > 0:
            raise ParameterError("si must be > 0")
        if not 0.0 <= self.degenerate_fill <= 1.0:
            raise ParameterError("degenerate_fill must lie in [0, 1]")
        if self.bw <= 0 or self.v_g <= 0:
            raise ParameterError("bw and v_g must be > 0")
        norm = self.normalization
        if isinstance(norm, list):
            object.__setattr__(self, "normalization", tuple(norm))
            norm = self.normalization
        if norm != "minmax":
            if not (isinstance(norm, tuple) and len(norm) == 3 and norm[0] == "fixed"
                    and norm[1] < norm[2]):
                raise ParameterError(f"normalization must be 'minmax' or ('fixed', lo, hi), got {norm!r}")

    @classmethod
    def from_params(cls, params: PatientParams, **overrides) -> "EncoderConfig":
        base = dict(si=params.si, gezi=params.gezi, v_g=params.v_g, bw=params.bw,
                    i_b=params.i_b, g_b=params.g_b, tau_meal=params.tau_meal)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.normalization, tuple):
            d["normalization"] = list(self.normalization)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown encoder keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SensitivityRelationMatrix:
    values: np.ndarray
    mask: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class GrayImage:
    pixels: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _check_interval(series, j: int, k: int) -> None:
    if not 0 <= j < k < len(series):
        raise IndexError(f"need 0 <= j < k < {len(series)}, got j={j}, k={k}")


def _trapezoid_terms(series, dt: float) -> list:
    return [0.5 * (a + b) * dt for a, b in zip(series[:-1], series[1:])]


def auc(series, j: int, k: int, dt: float = SAMPLE_MINUTES) -> float:
    """Trapezoidal area of ``series`` between samples ``j`` and ``k``."""
    series = [float(v) for v in series]
    _check_interval(series, j, k)
    return math.fsum(_trapezoid_terms(series[j:k + 1], dt))


class _WindowTerms:
    """Per-window quantities reused by every entry of the matrix.

    Entries are computed in floating point. When the signed area or the
    numerator nearly cancels (ratio below ``CANCEL_RATIO``), the entry is
    recomputed in exact rational arithmetic from the same float inputs, so
    every entry stays accurate to a few ulps.
    """

    CANCEL_RATIO = 1e-2

    def __init__(self, g, cfg: EncoderConfig, dt: float):
        self.cfg = cfg
        self.dt = dt
        self.g = [float(v) for v in g]
        dg = [v - cfg.g_b for v in self.g]
        self.dg_terms = _trapezoid_terms(dg, dt)
        self.abs_terms = _trapezoid_terms([abs(v) for v in dg], dt)
        if cfg.assumed_d_carbs:
            self.frac = [absorbed_fraction(i * dt, cfg.tau_meal) for i in range(len(g))]
        else:
            self.frac = None

    def relation(self, lo: int, hi: int) -> float:
        cfg = self.cfg
        area = math.fsum(self.dg_terms[lo:hi])
        abs_area = math.fsum(self.abs_terms[lo:hi])
        if abs(area) <= DEGENERATE_TOL or abs_area <= DEGENERATE_TOL:
            raise DegenerateInterval(f"zero glucose-excursion area on [{lo}, {hi}]")
        span = (hi - lo) * self.dt
        absorbed = 0.0
        if self.frac is not None:
            # grams -> mg so the term matches ra in mg/kg/min
            absorbed = cfg.assumed_d_carbs * 1000.0 * (self.frac[hi] - self.frac[lo]) / (cfg.bw * area)
        slope = cfg.v_g * (self.g[hi] - self.g[lo]) / area
        numerator = absorbed - cfg.gezi - slope
        scale = abs(absorbed) + cfg.gezi + abs(slope)
        if (abs(numerator) < self.CANCEL_RATIO * scale
                or abs(area) < self.CANCEL_RATIO * abs_area):
            return self._exact(lo, hi)
        denominator = cfg.si * abs_area / span
        return numerator / denominator

    def _exact(self, lo: int, hi: int) -> float:
        cfg = self.cfg
        dt = Fraction(self.dt)
        # floats are dyadic: scale everything to integers over one power of two
        ratios = [v.as_integer_ratio() for v in (cfg.g_b, *self.g[lo:hi + 1])]
        shift = max(d.bit_length() - 1 for _, d in ratios)
        ints = [n << (shift - d.bit_length() + 1) for n, d in ratios]
        dg_int = [v - ints[0] for v in ints[1:]]
        unit = Fraction(1, 1 << shift)
        dg = [dg_int[0] * unit, dg_int[-1] * unit]
        area = (2 * sum(dg_int) - dg_int[0] - dg_int[-1]) * unit * dt / 2
        abs_dg = [abs(v) for v in dg_int]
        abs_area = (2 * sum(abs_dg) - abs_dg[0] - abs_dg[-1]) * unit * dt / 2
        numerator = -Fraction(cfg.gezi) - Fraction(cfg.v_g) * (dg[-1] - dg[0]) / area
        if self.frac is not None:
            numerator += (Fraction(cfg.assumed_d_carbs) * 1000
                          * (Fraction(self.frac[hi]) - Fraction(self.frac[lo]))
                          / (Fraction(cfg.bw) * area))
        denominator = Fraction(cfg.si) * abs_area / ((hi - lo) * dt)
        return float(numerator / denominator)


def auc_relation(g, ins, j: int, k: int, cfg: EncoderConfig, dt: float = SAMPLE_MINUTES) -> float:
    """Insulin/glucose area relation implied by the minimal model on [min(j,k), max(j,k)].

    ``ins`` is accepted for interface symmetry; the relation is solved from
    glucose and the model constants. Raises :class:`DegenerateInterval` when
    the signed or absolute glucose-excursion area vanishes.
    """
    if len(g) != len(ins):
        raise ShapeError("glucose and insulin windows differ in length")
    if j == k:
        raise DegenerateInterval("zero-length interval")
    lo, hi = min(j, k), max(j, k)
    _check_interval(g, lo, hi)
    return _WindowTerms(g, cfg, dt).relation(lo, hi)


def sensitivity_relation_matrix(g, ins, cfg: EncoderConfig, dt: float = SAMPLE_MINUTES
                                ) -> SensitivityRelationMatrix:
    """Full pairwise matrix; node ``j`` sits at sample ``j * cfg.d_interval``."""
    g = np.asarray(g, dtype=float)
    ins = np.asarray(ins, dtype=float)
    if g.ndim != 1 or g.shape != ins.shape:
        raise ShapeError(f"glucose {g.shape} and insulin {ins.shape} must be equal-length 1-D")
    if len(g) < 2:
        raise ShapeError("windows need at least 2 samples")
    d = int(cfg.d_interval)
    nodes = list(range(0, len(g), d))
    n = len(nodes)
    terms = _WindowTerms(g, cfg, dt)
    values = np.zeros((n, n))
    mask = np.ones((n, n), dtype=bool)
    for a in range(n):
        for b in range(a + 1, n):
            try:
                v = terms.relation(nodes[a], nodes[b])
            except DegenerateInterval:
                continue
            values[a, b] = values[b, a] = v
            mask[a, b] = mask[b, a] = False
    if mask.all():
        raise EmptyMatrix()
    return SensitivityRelationMatrix(values=values, mask=mask)


def to_gray_image(sr: SensitivityRelationMatrix, cfg: EncoderConfig) -> GrayImage:
    """Map unmasked entries into [0, 1]; masked entries get ``degenerate_fill``."""
    valid = ~sr.mask
    if not valid.any():
        raise EmptyMatrix()
    vals = sr.values[valid]
    if cfg.normalization == "minmax":
        lo, hi = float(vals.min()), float(vals.max())
    else:
        _, lo, hi = cfg.normalization
        vals = np.clip(vals, lo, hi)
    pixels = np.full(sr.values.shape, float(cfg.degenerate_fill))
    if hi > lo:
        pixels[valid] = (vals - lo) / (hi - lo)
    else:
        pixels[valid] = 0.5
    return GrayImage(pixels=pixels)


def encode_window(window, cfg: EncoderConfig) -> GrayImage:
    """Encode a labeled window (or anything with ``cgm`` and ``insulin``) as an image."""
    provenance = None
    if hasattr(window, "patient_id"):
        provenance = f"patient={window.patient_id} offset={window.source_offset:g}"
    try:
        sr = sensitivity_relation_matrix(window.cgm, window.insulin, cfg)
        img = to_gray_image(sr, cfg)
    except EmptyMatrix as exc:
        raise EmptyMatrix(provenance=provenance) from exc
    if provenance:
        img.meta = {"patient_id": window.patient_id, "label": window.label.name,
                    "source_offset": window.source_offset}
    return img


def encode_pair(cgm, insulin, cfg: EncoderConfig) -> np.ndarray:
    return to_gray_image(sensitivity_relation_matrix(cgm, insulin, cfg), cfg).pixels


class SensitivityRelationEncoder(TransformerMixin, BaseEstimator):
    """Transformer turning stacked (glucose, insulin) windows into images.

    ``X`` has shape ``(n_windows, 2, n_samples)``; ``transform`` returns
    ``(n_windows, n, n)`` pixel arrays. Degenerate windows (every entry
    masked) become a uniform ``degenerate_fill`` image unless
    ``on_empty="raise"``.
    """

    def __init__(self, si=1.105e-3, gezi=0.0235, v_g=1.7, bw=70.0, i_b=10.0, g_b=110.0,
                 d_interval=1, assumed_d_carbs=0.0, tau_meal=40.0, normalization="minmax",
                 degenerate_fill=0.5, on_empty="fill"):
        self.si = si
        self.gezi = gezi
        self.v_g = v_g
        self.bw = bw
        self.i_b = i_b
        self.g_b = g_b
        self.d_interval = d_interval
        self.assumed_d_carbs = assumed_d_carbs
        self.tau_meal = tau_meal
        self.normalization = normalization
        self.degenerate_fill = degenerate_fill
        self.on_empty = on_empty

    @classmethod
    def from_config(cls, cfg: EncoderConfig, **kwargs) -> "SensitivityRelationEncoder":
        return cls(si=cfg.si, gezi=cfg.gezi, v_g=cfg.v_g, bw=cfg.bw, i_b=cfg.i_b, g_b=cfg.g_b,
                   d_interval=cfg.d_interval, assumed_d_carbs=cfg.assumed_d_carbs,
                   tau_meal=cfg.tau_meal, normalization=cfg.normalization,
                   degenerate_fill=cfg.degenerate_fill, **kwargs)

    def _config(self) -> EncoderConfig:
        return EncoderConfig(si=self.si, gezi=self.gezi, v_g=self.v_g, bw=self.bw, i_b=self.i_b,
                             g_b=self.g_b, d_interval=self.d_interval,
                             assumed_d_carbs=self.assumed_d_carbs, tau_meal=self.tau_meal,
                             normalization=self.normalization,
                             degenerate_fill=self.degenerate_fill)

    def fit(self, X, y=None):
        X = check_windows(X)
        self.config_ = self._config()
        self.n_samples_ = X.shape[2]
        self.n_nodes_ = len(range(0, X.shape[2], self.d_interval))
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_windows(X, n_samples=self.n_samples_)
        out = np.empty((X.shape[0], self.n_nodes_, self.n_nodes_))
        for i, (g, ins) in enumerate(X):
            try:
                out[i] = encode_pair(g, ins, self.config_)
            except EmptyMatrix:
                if self.on_empty == "raise":
                    raise
                out[i] = self.config_.degenerate_fill
        return out


PGM_MAXVAL = 255


def _quantize(v: float) -> int:
    return int(math.floor(v * PGM_MAXVAL + 0.5))


def write_pgm(image: GrayImage, path) -> None:
    """Plain (P2) graymap plus ``<path>.meta`` holding one ``key=value`` line."""
    px = np.asarray(image.pixels, dtype=float)
    if px.ndim != 2 or np.any(px < 0) or np.any(px > 1):
        raise ShapeError("gray image pixels must be a 2-D array in [0, 1]")
    lines = ["P2", f"{px.shape[1]} {px.shape[0]}", str(PGM_MAXVAL)]
    lines += [" ".join(str(_quantize(v)) for v in row) for row in px]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    items = []
    for key in ("patient_id", "label", "source_offset"):
        if key in image.meta:
            value = image.meta[key]
            items.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
    meta = " ".join(items)
    with open(f"{path}.meta", "w", newline="\n") as fh:
        fh.write(meta + "\n")


def read_pgm(path) -> GrayImage:
    """Inverse of :func:`write_pgm`; pixel values come back as level / 255."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise ShapeError(f"{path}: not a plain PGM (P2) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        levels = [int(t) for t in tokens[4:]]
    except (IndexError, ValueError):
        raise ShapeError(f"{path}: malformed PGM header or data") from None
    if len(levels) != w * h or any(not 0 <= v <= maxval for v in levels):
        raise ShapeError(f"{path}: expected {w * h} levels in [0, {maxval}]")
    pixels = np.asarray(levels, dtype=float).reshape(h, w) / maxval
    meta = {}
    try:
        with open(f"{path}.meta") as fh:
            for item in fh.read().split():
                key, _, value = item.partition("=")
                meta[key] = value
    except FileNotFoundError:
        pass
    if "source_offset" in meta:
        meta["source_offset"] = float(meta["source_offset"])
    return GrayImage(pixels=pixels, meta=meta)
