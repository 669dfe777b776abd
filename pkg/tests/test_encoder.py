import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mealdetect.config import load_run_config
from mealdetect.encoder import (EncoderConfig, GrayImage, SensitivityRelationEncoder,
                                SensitivityRelationMatrix, auc, auc_relation, encode_window,
                                read_pgm, sensitivity_relation_matrix, to_gray_image, write_pgm)
from mealdetect.exceptions import DegenerateInterval, EmptyMatrix, ParameterError, ShapeError
from mealdetect.simulator import (Label, LabeledWindow, MealEvent, Scenario, absorbed_fraction,
                                  extract_windows, simulate_episode)

from oracles import exact_relation, random_window


@pytest.fixture(scope="module")
def cfg(params):
    return EncoderConfig.from_params(params)


def ramp(n=31, lo=100.0, hi=220.0):
    return np.linspace(lo, hi, n)


# --- config -------------------------------------------------------------------

@pytest.mark.parametrize("change", [{"d_interval": 0}, {"d_interval": 1.5}, {"si": 0.0},
                                    {"degenerate_fill": 1.5}, {"normalization": "zscore"},
                                    {"normalization": ("fixed", 2.0, 1.0)}])
def test_config_invariants(cfg, change):
    with pytest.raises(ParameterError):
        EncoderConfig(**{**cfg.to_dict(), **change})


def test_config_dict_round_trip(params):
    c = EncoderConfig.from_params(params, normalization=["fixed", -5.0, 5.0])
    assert c.normalization == ("fixed", -5.0, 5.0)
    assert EncoderConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ParameterError):
        EncoderConfig.from_dict({**c.to_dict(), "window": 31})


def test_config_copies_patient_constants(params, cfg):
    assert cfg.si == params.si and cfg.g_b == params.g_b and cfg.gezi == params.gezi


# --- auc ----------------------------------------------------------------------

def test_auc_hand_trapezoid():
    assert auc([0, 1, 2], 0, 2) == 10.0


@pytest.mark.parametrize("c, m", [(3.0, 1), (2.5, 7), (-4.0, 30)])
def test_auc_rectangle(c, m):
    assert auc([c] * (m + 1), 0, m) == pytest.approx(c * m * 5)


@pytest.mark.parametrize("j, k", [(2, 2), (3, 1), (0, 5)])
def test_auc_index_errors(j, k):
    with pytest.raises(IndexError):
        auc([1.0, 2.0, 3.0], j, k)


finite = st.floats(-500, 500, allow_nan=False)


@given(arrays(float, 12, elements=finite), st.integers(0, 9), st.integers(1, 2))
def test_auc_additivity(s, j, step):
    k = min(j + step + 1, 11)
    mid = j + 1
    assert auc(s, j, k) == pytest.approx(auc(s, j, mid) + auc(s, mid, k), abs=1e-9)


@given(arrays(float, 10, elements=finite), st.floats(-10, 10))
def test_auc_scale_covariance(s, c):
    assert auc(c * s, 0, 9) == pytest.approx(c * auc(s, 0, 9), rel=1e-12, abs=1e-9)


# --- relation -----------------------------------------------------------------

def test_flat_interval_is_degenerate(cfg):
    g = np.full(31, cfg.g_b)
    with pytest.raises(DegenerateInterval):
        auc_relation(g, np.zeros(31), 0, 10, cfg)


def test_zero_when_numerator_vanishes(params):
    c = EncoderConfig.from_params(params, gezi=0.0)
    g = np.array([150.0, 170.0, 160.0, 150.0] + [150.0] * 27)
    assert auc_relation(g, np.zeros(31), 0, 3, c) == 0.0


def test_relation_symmetric_in_indices(cfg):
    g = ramp()
    assert auc_relation(g, g, 3, 7, cfg) == auc_relation(g, g, 7, 3, cfg)


def test_relation_rejects_same_index_and_length_mismatch(cfg):
    with pytest.raises(DegenerateInterval):
        auc_relation(ramp(), ramp(), 4, 4, cfg)
    with pytest.raises(ShapeError):
        auc_relation(ramp(), ramp(30), 1, 4, cfg)


def test_ramp_matches_exact_oracle(cfg):
    g = ramp()
    sr = sensitivity_relation_matrix(g, np.zeros(31), cfg)
    checked = 0
    for j in range(31):
        for k in range(j + 1, 31):
            want, area, _ = exact_relation(g, j, k, cfg)
            if sr.mask[j, k]:
                assert abs(area) <= 1e-9
                continue
            assert sr.values[j, k] == pytest.approx(float(want), rel=1e-12)
            checked += 1
    assert checked > 400


def test_absorption_term_matches_oracle(params):
    c = EncoderConfig.from_params(params, assumed_d_carbs=20.0)
    g = ramp(lo=120.0)
    frac = [absorbed_fraction(5.0 * i, c.tau_meal) for i in range(31)]
    sr = sensitivity_relation_matrix(g, np.zeros(31), c)
    for j, k in [(0, 1), (0, 30), (4, 17), (12, 29)]:
        want, _, _ = exact_relation(g, j, k, c, frac)
        assert sr.values[j, k] == pytest.approx(float(want), rel=1e-12)


def test_cancellation_entries_stay_accurate(cfg):
    # random walks around basal produce near-cancelling areas and numerators
    rng = np.random.default_rng(272)
    for _ in range(20):
        g = random_window(rng, 1)
        sr = sensitivity_relation_matrix(g, np.zeros(31), cfg)
        for j, k in zip(*np.nonzero(np.triu(~sr.mask, 1))):
            want, _, _ = exact_relation(g, j, k, cfg)
            assert abs(sr.values[j, k] - float(want)) <= 1e-12 * abs(float(want))


# --- matrix -------------------------------------------------------------------

def test_matrix_shape_symmetry_and_diagonal(cfg):
    sr = sensitivity_relation_matrix(ramp(), np.zeros(31), cfg)
    assert sr.values.shape == sr.mask.shape == (31, 31) and sr.n == 31
    assert np.all(np.diag(sr.mask))
    assert np.array_equal(sr.values, sr.values.T) and np.array_equal(sr.mask, sr.mask.T)


@settings(max_examples=40)
@given(arrays(float, 31, elements=st.floats(40, 400)))
def test_matrix_invariants(cfg, g):
    try:
        sr = sensitivity_relation_matrix(g, np.zeros(31), cfg)
    except EmptyMatrix:
        return
    valid = ~sr.mask
    assert np.array_equal(sr.values, sr.values.T)
    assert np.all(np.isfinite(sr.values[valid]))
    assert int(sr.mask.sum()) + int(np.isfinite(sr.values[valid]).sum()) == 31 * 31


def test_mask_marks_exactly_the_degenerate_entries(cfg):
    # flat at basal for the first 11 samples, then a rise
    g = np.concatenate([np.full(11, cfg.g_b), np.linspace(cfg.g_b + 5, 200, 20)])
    sr = sensitivity_relation_matrix(g, np.zeros(31), cfg)
    for j in range(31):
        for k in range(j + 1, 31):
            degenerate = k <= 10
            assert sr.mask[j, k] == degenerate


def test_d_interval_strides_nodes(params):
    c = EncoderConfig.from_params(params, d_interval=3)
    g = ramp()
    sr = sensitivity_relation_matrix(g, np.zeros(31), c)
    full = sensitivity_relation_matrix(g, np.zeros(31), EncoderConfig.from_params(params))
    assert sr.n == 11
    assert np.array_equal(sr.values, full.values[::3, ::3])


def test_matrix_errors(cfg):
    with pytest.raises(ShapeError):
        sensitivity_relation_matrix(ramp(), ramp(30), cfg)
    with pytest.raises(ShapeError):
        sensitivity_relation_matrix([120.0], [0.0], cfg)
    with pytest.raises(EmptyMatrix):
        sensitivity_relation_matrix(np.full(31, cfg.g_b), np.zeros(31), cfg)


# --- image --------------------------------------------------------------------

def test_minmax_endpoints(cfg):
    vals = np.arange(16, dtype=float).reshape(4, 4) % 11
    sr = SensitivityRelationMatrix(vals, np.zeros((4, 4), dtype=bool))
    img = to_gray_image(sr, cfg)
    assert img.pixels[vals == 0].min() == 0.0 and img.pixels[vals == 10].max() == 1.0
    assert img.width == img.height == 4


def test_constant_matrix_is_mid_gray(cfg):
    sr = SensitivityRelationMatrix(np.full((3, 3), 7.0), np.eye(3, dtype=bool))
    assert np.all(to_gray_image(sr, cfg).pixels == 0.5)


def test_fixed_range_clips(params):
    c = EncoderConfig.from_params(params, normalization=("fixed", -1.0, 1.0))
    sr = SensitivityRelationMatrix(np.array([[0.0, -3.0], [5.0, 0.5]]), np.zeros((2, 2), bool))
    assert to_gray_image(sr, c).pixels.tolist() == [[0.5, 0.0], [1.0, 0.75]]


def test_masked_pixels_take_fill(params):
    c = EncoderConfig.from_params(params, degenerate_fill=0.2)
    img = to_gray_image(sensitivity_relation_matrix(ramp(), np.zeros(31), c), c)
    assert np.all(np.diag(img.pixels) == 0.2)
    assert np.all((img.pixels >= 0) & (img.pixels <= 1))


def test_all_masked_image_raises(cfg):
    sr = SensitivityRelationMatrix(np.zeros((2, 2)), np.ones((2, 2), dtype=bool))
    with pytest.raises(EmptyMatrix):
        to_gray_image(sr, cfg)


# --- windows ------------------------------------------------------------------

def _window(g, label=Label.RescueMeal):
    return LabeledWindow(cgm=g, insulin=np.zeros(31), label=label, patient_id="P1",
                         source_offset=270.0)


def test_encode_window_shape_and_determinism(cfg):
    a = encode_window(_window(ramp()), cfg)
    b = encode_window(_window(ramp()), cfg)
    assert a.pixels.shape == (31, 31)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    assert a.meta == {"patient_id": "P1", "label": "RescueMeal", "source_offset": 270.0}


def test_flat_window_carries_provenance(cfg):
    with pytest.raises(EmptyMatrix, match="patient=P1 offset=270"):
        encode_window(_window(np.full(31, cfg.g_b)), cfg)


def test_rescue_and_nomeal_images_differ(params):
    run = load_run_config()
    c = EncoderConfig.from_params(params, **run.encoder)
    ep = simulate_episode(params, Scenario(meals=(MealEvent(300.0, 25.0),), duration=600.0))
    wins = extract_windows(ep, augment=False)
    rescue = next(w for w in wins if w.label is Label.RescueMeal)
    nomeal = next(w for w in wins if w.label is Label.NoMeal)
    diff = np.abs(encode_window(rescue, c).pixels - encode_window(nomeal, c).pixels)
    assert np.mean(diff > 0.1) >= 0.10


# --- estimator ----------------------------------------------------------------

def test_transformer_api(cfg, rng):
    X = np.stack([np.stack([random_window(rng, 2), np.zeros(31)]) for _ in range(5)])
    enc = SensitivityRelationEncoder.from_config(cfg)
    assert enc.get_params()["si"] == cfg.si
    out = enc.fit(X).transform(X)
    assert out.shape == (5, 31, 31) and enc.n_nodes_ == 31
    assert np.array_equal(out[0], encode_window(_window(X[0, 0]), cfg).pixels)
    assert np.array_equal(enc.fit_transform(X), out)


def test_transformer_requires_fit_and_matching_length(cfg):
    from sklearn.exceptions import NotFittedError
    enc = SensitivityRelationEncoder.from_config(cfg)
    with pytest.raises(NotFittedError):
        enc.transform(np.zeros((1, 2, 31)))
    enc.fit(np.ones((1, 2, 31)) * 150)
    with pytest.raises(ShapeError):
        enc.transform(np.ones((1, 2, 20)))


def test_transformer_empty_window_policy(cfg):
    X = np.stack([np.full(31, cfg.g_b), np.zeros(31)])[None]
    enc = SensitivityRelationEncoder.from_config(cfg).fit(X)
    assert np.all(enc.transform(X) == cfg.degenerate_fill)
    with pytest.raises(EmptyMatrix):
        SensitivityRelationEncoder.from_config(cfg, on_empty="raise").fit(X).transform(X)


def test_transformer_clone(cfg):
    from sklearn.base import clone
    enc = SensitivityRelationEncoder.from_config(cfg, on_empty="raise")
    assert clone(enc).get_params() == enc.get_params()


# --- PGM ----------------------------------------------------------------------

def test_pgm_round_trip(tmp_path, cfg):
    img = encode_window(_window(ramp()), cfg)
    write_pgm(img, tmp_path / "x.pgm")
    text = (tmp_path / "x.pgm").read_text().split("\n")
    assert text[:3] == ["P2", "31 31", "255"]
    assert (tmp_path / "x.pgm.meta").read_text() == \
        "patient_id=P1 label=RescueMeal source_offset=270\n"
    back = read_pgm(tmp_path / "x.pgm")
    levels = np.floor(img.pixels * 255 + 0.5)
    assert np.array_equal(back.pixels * 255, levels)
    assert np.max(np.abs(back.pixels - img.pixels)) <= 0.5 / 255 + 1e-12
    assert back.meta == {"patient_id": "P1", "label": "RescueMeal", "source_offset": 270.0}


def test_pgm_rounds_half_up(tmp_path):
    write_pgm(GrayImage(np.array([[0.5 / 255, 1.0, 0.0, 127.5 / 255]])), tmp_path / "h.pgm")
    assert (tmp_path / "h.pgm").read_text().split("\n")[3] == "1 255 0 128"


def test_pgm_rejects_bad_files(tmp_path):
    (tmp_path / "a.pgm").write_text("P5\n1 1\n255\n0\n")
    (tmp_path / "b.pgm").write_text("P2\n2 2\n255\n0 1 2\n")
    for name in ("a.pgm", "b.pgm"):
        with pytest.raises(ShapeError):
            read_pgm(tmp_path / name)
    with pytest.raises(ShapeError):
        write_pgm(GrayImage(np.array([[1.5]])), tmp_path / "c.pgm")
