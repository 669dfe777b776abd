import io
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mealdetect.cnn import CnnModel, forward
from mealdetect.encoder import EncoderConfig, encode_pair
from mealdetect.exceptions import ChecksumError, ParameterError, ParseError, RegistryError, StreamError
from mealdetect.pipeline import (Alert, ConstantClassifier, DetectionResult, Fingerprint,
                                 ModelNotFound, ModelRegistry, Monitor, ThresholdRule, apply_rule,
                                 config_hash, dataset_hash, evaluate_window, register_model, replay,
                                 score_alerts)
from mealdetect.simulator import (Label, LabeledWindow, MealEvent, Scenario, make_snack_scenario,
                                  simulate_episode)
from mealdetect.simulator.episode import episode_to_text

from oracles import reduced_arch


@pytest.fixture(scope="module")
def enc(params):
    return EncoderConfig.from_params(params, normalization=("fixed", -5.0, 5.0))


@pytest.fixture(scope="module")
def episode(params):
    return simulate_episode(params, make_snack_scenario(3, seed=11))


class ScriptedClassifier:
    """Returns a per-call script of (label, confidence), then repeats the last entry."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = 0

    def predict_image(self, image):
        out = self.script[min(self.calls, len(self.script) - 1)]
        self.calls += 1
        return out


class PixelClassifier:
    """Deterministic image-dependent stub: positive when mean pixel exceeds a threshold."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def predict_image(self, image):
        m = float(np.mean(image))
        conf = 0.5 + min(abs(m - self.threshold) * 5, 0.5)
        return (int(m > self.threshold), conf)


def feed(monitor, samples):
    return [monitor.ingest(t, g, u) for t, g, u in samples]


def stream(n, start=0.0, g0=150.0):
    return [(start + 5.0 * i, g0 + 10 * np.sin(i / 4), 0.05) for i in range(n)]


# --- threshold rule -----------------------------------------------------------

def test_rule_invariants_and_parse():
    assert ThresholdRule() == ThresholdRule(0.5, 3, 120.0)
    with pytest.raises(ParameterError):
        ThresholdRule(consecutive_k=0)
    with pytest.raises(ParameterError):
        ThresholdRule(cooldown=-1)
    with pytest.raises(ParameterError):
        ThresholdRule(confidence_min=0.4)
    r = ThresholdRule.parse("k=4,conf=0.8,cooldown=60")
    assert r == ThresholdRule(0.8, 4, 60.0)
    assert ThresholdRule.parse("k=2", base=r) == ThresholdRule(0.8, 2, 60.0)
    for bad in ("k", "n=3", "k=x"):
        with pytest.raises(ParameterError):
            ThresholdRule.parse(bad)


# --- evaluate_window ----------------------------------------------------------

def _win(params):
    return LabeledWindow(cgm=np.linspace(100, 220, 31), insulin=np.zeros(31),
                         label=Label.RescueMeal, patient_id="P1", source_offset=10.0)


def test_low_confidence_nomeal_not_triggered(params, enc):
    r = evaluate_window(_win(params), ConstantClassifier(Label.NoMeal, 0.51), ThresholdRule(), enc)
    assert not r.triggered and r.label is Label.NoMeal


def test_confidence_bound_is_inclusive(params, enc):
    rule = ThresholdRule(confidence_min=0.8)
    assert evaluate_window(_win(params), ConstantClassifier(confidence=0.8), rule, enc).triggered
    assert not evaluate_window(_win(params), ConstantClassifier(confidence=0.79), rule, enc).triggered


def test_evaluate_window_deterministic(params, enc):
    model = CnnModel.create(seed=3)
    a = evaluate_window(_win(params), model, ThresholdRule(), enc)
    b = evaluate_window(_win(params), model, ThresholdRule(), enc)
    assert a == b and a.window_start == 10.0 and a.t == 160.0


# --- ingest -------------------------------------------------------------------

def test_no_alert_before_window_fills(enc):
    m = Monitor(ConstantClassifier(confidence=0.99), enc, ThresholdRule(consecutive_k=1), "P1")
    assert all(a is None for a in feed(m, stream(30)))
    assert m.results == []


def test_first_alert_on_sample_33(enc):
    m = Monitor(ConstantClassifier(confidence=0.9), enc, ThresholdRule(consecutive_k=3), "P1")
    out = feed(m, stream(40))
    first = next(i for i, a in enumerate(out) if a is not None)
    assert first + 1 == 33
    alert = out[first]
    assert alert.timestamp == 160.0 and alert.window_start == 10.0 and alert.confidence == 0.9
    assert alert.format() == "ALERT 160 patient=P1 confidence=0.9 window_start=10"


def test_cooldown_spacing(enc):
    rule = ThresholdRule(consecutive_k=1, cooldown=60)
    m = Monitor(ConstantClassifier(confidence=0.9), enc, rule, "P1")
    feed(m, stream(200))
    times = [a.timestamp for a in m.alerts]
    assert len(times) > 3 and all(b - a >= 60 for a, b in zip(times, times[1:]))
    assert all(a.confidence >= rule.confidence_min for a in m.alerts)


def test_counter_resets_on_negative(enc):
    P, N = (1, 0.9), (0, 0.9)
    m = Monitor(ScriptedClassifier([P, P, N, P, P, P]), enc, ThresholdRule(consecutive_k=3), "P1")
    out = feed(m, stream(36))
    fired = [i - 30 for i, a in enumerate(out) if a is not None]
    assert fired == [5]
    assert [r.consecutive for r in m.results] == [1, 2, 0, 1, 2, 3]


def test_buffer_capacity(enc):
    m = Monitor(ConstantClassifier(), enc, ThresholdRule(), "P1", capacity=40)
    feed(m, stream(100))
    assert len(m.buffer) == 40
    with pytest.raises(ParameterError):
        Monitor(ConstantClassifier(), enc, ThresholdRule(), "P1", capacity=30)


@pytest.mark.parametrize("bad_t", [120.0, 125.0, 140.0])
def test_out_of_order_or_gapped_stream(enc, bad_t):
    m = Monitor(ConstantClassifier(), enc, ThresholdRule(), "P1")
    feed(m, stream(26))  # last t = 125
    with pytest.raises(StreamError):
        m.ingest(bad_t, 120.0, 0.05)


def test_degenerate_window_skipped_and_resets(enc, caplog):
    caplog.set_level(logging.INFO, logger="mealdetect")
    flat = [(5.0 * i, enc.g_b, 0.05) for i in range(31)]
    m = Monitor(ConstantClassifier(confidence=0.9), enc, ThresholdRule(consecutive_k=2), "P1")
    feed(m, stream(32))
    assert m.consecutive == 2 and len(m.alerts) == 1
    m2 = Monitor(ConstantClassifier(confidence=0.9), enc, ThresholdRule(consecutive_k=2), "P1")
    feed(m2, flat)
    assert m2.results[-1].skipped and m2.consecutive == 0 and "degenerate" in caplog.text


# --- replay -------------------------------------------------------------------

def test_replay_equals_ingest(episode, enc):
    model = PixelClassifier(0.45)
    text = episode_to_text(episode)
    alerts, log = replay(io.StringIO(text), "P1", ThresholdRule(), model, enc)
    m = Monitor(model, enc, ThresholdRule(), "P1")
    feed(m, episode.samples())
    assert alerts == m.alerts and log == m.results
    again, log2 = replay(io.StringIO(text), "P1", ThresholdRule(), model, enc)
    assert again == alerts and log2 == log


def test_replay_from_path(tmp_path, episode, enc):
    p = tmp_path / "e.csv"
    p.write_text(episode_to_text(episode))
    alerts, log = replay(p, "P1", ThresholdRule(), PixelClassifier(), enc)
    assert len(log) == len(episode.t) - 30


def test_replay_reports_line_numbers(enc):
    text = "t_min,cgm_mgdl,insulin_units,event_flag\n0,110,0.1,0\n10,112,0.1,0\n"
    with pytest.raises(ParseError, match="line 3"):
        replay(io.StringIO(text), "P1", ThresholdRule(), ConstantClassifier(), enc)
    with pytest.raises(ParseError, match="line 2"):
        replay(io.StringIO(text.replace("0,110,0.1,0", "0,110")), "P1", ThresholdRule(),
               ConstantClassifier(), enc)


def _log(draws):
    out = []
    for i, (lab, conf, skip) in enumerate(draws):
        t = 150.0 + 5 * i
        out.append(DetectionResult(t, t - 150, None if skip else Label(lab), None if skip else conf,
                                   False, skipped=skip))
    return out


draw = st.tuples(st.sampled_from([0, 1]), st.floats(0.5, 1.0), st.booleans())


@settings(max_examples=200)
@given(st.lists(draw, max_size=120), st.floats(0.5, 1.0), st.floats(0.5, 1.0),
       st.integers(1, 6), st.integers(1, 6), st.sampled_from([0.0, 30.0, 120.0]))
def test_alert_monotonicity(draws, c1, c2, k1, k2, cooldown):
    log = _log(draws)
    loose = ThresholdRule(min(c1, c2), min(k1, k2), cooldown)
    tight = ThresholdRule(max(c1, c2), max(k1, k2), cooldown)
    assert len(apply_rule(log, tight, "P")) <= len(apply_rule(log, loose, "P"))


def test_apply_rule_matches_live_alerts(episode, enc):
    m = Monitor(PixelClassifier(0.45), enc, ThresholdRule(), "P1")
    feed(m, episode.samples())
    assert apply_rule(m.results, ThresholdRule(), "P1") == m.alerts


def test_score_alerts():
    rule = ThresholdRule()
    alerts = [Alert(400.0, "P", 250.0, 0.9, rule), Alert(900.0, "P", 750.0, 0.9, rule),
              Alert(420.0, "P", 270.0, 0.9, rule)]
    o = score_alerts(alerts, [300.0, 2000.0])
    assert (o.n_snacks, o.detected, o.false_alarms, o.latencies) == (2, 1, 1, (100.0,))
    assert o.sensitivity == 0.5


# --- registry -----------------------------------------------------------------

@pytest.fixture
def fp():
    return Fingerprint(dataset_hash(np.zeros((2, 9, 9)), [0, 1]), config_hash({"lr": 0.01}))


def test_register_then_load(tmp_path, fp, rng):
    reg = ModelRegistry(tmp_path / "models")
    model = CnnModel.create(reduced_arch(), seed=4)
    register_model(reg, "P1", model, fp, encoder={"si": 1.0})
    back = reg.load("P1")
    assert all(np.array_equal(back.params[k], model.params[k]) for k in model.params)
    images = rng.uniform(size=(100, 9, 9))
    assert np.array_equal(back.forward_batch(images), model.forward_batch(images))
    assert reg.fingerprint("P1") == fp and reg.patients() == ["P1"] and "P1" in reg
    assert reg.entry("P1")["encoder"] == {"si": 1.0}


def test_overwrite_requires_force(tmp_path, fp):
    reg = ModelRegistry(tmp_path)
    reg.register("P1", CnnModel.create(reduced_arch(), seed=1), fp)
    with pytest.raises(RegistryError):
        reg.register("P1", CnnModel.create(reduced_arch(), seed=2), fp)
    reg.register("P1", CnnModel.create(reduced_arch(), seed=2), fp, force=True)
    assert reg.load("P1").init_seed == 2


def test_corrupted_file_fails_checksum(tmp_path, fp):
    reg = ModelRegistry(tmp_path)
    reg.register("P1", CnnModel.create(reduced_arch(), seed=1), fp)
    index_before = reg.index_path.read_bytes()
    path = tmp_path / reg.entry("P1")["path"]
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ChecksumError):
        reg.load("P1")
    assert reg.index_path.read_bytes() == index_before


def test_unknown_patient(tmp_path):
    reg = ModelRegistry(tmp_path)
    with pytest.raises(ModelNotFound):
        reg.load("P404")
    with pytest.raises(KeyError):
        reg.entry("P404")


def test_hashes_are_content_based():
    x = np.arange(18.0).reshape(2, 3, 3)
    assert dataset_hash(x, [0, 1]) == dataset_hash(x.copy(), np.array([0, 1]))
    assert dataset_hash(x, [0, 1]) != dataset_hash(x, [1, 0])
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
