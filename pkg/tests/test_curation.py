import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sketchkg.curation import (
    KEEP_LABELS, CoarseRules, LogisticModel, RetentionClassifier, RuleOutcome, VisualFeatures,
    _otsu_threshold, apply_coarse_rules, clip_margin, extract_visual_features, features_csv,
    fit_logistic, fuse_decision, load_image, parse_filter_verdict, predict_retention,
    read_features_csv, semantic_similarities, stratify_decision,
)
from sketchkg.exceptions import (
    DegenerateLabels, DimMismatch, EmptyImage, InvalidThresholds, IoFailure, MalformedJson,
    SchemaViolation, ZeroVector,
)


def _solid(rgb, h=20, w=30):
    return np.tile(np.array(rgb, dtype=np.uint8), (h, w, 1))


def _checker(n, cell):
    y, x = np.indices((n, n))
    board = ((y // cell + x // cell) % 2).astype(np.uint8) * 255
    return np.repeat(board[:, :, None], 3, axis=2)


# ------------------------------------------------------------------ features

def test_uniform_gray():
    f = extract_visual_features(_solid([128, 128, 128]))
    assert (f.colorfulness, f.edge_density, f.image_entropy, f.grayscale_ratio) == (0.0, 0.0, 0.0, 1.0)
    assert (f.foreground_ratio, f.connected_components) == (0.0, 0)
    assert (f.width_px, f.height_px, f.aspect_ratio) == (30, 20, 1.5)


def test_pure_red():
    f = extract_visual_features(_solid([255, 0, 0]))
    assert f.mean_saturation == 1.0 and f.grayscale_ratio == 0.0
    # rg = 255, yb = 127.5, both constant
    assert f.colorfulness == pytest.approx(0.3 * math.hypot(255.0, 127.5))


def test_two_pixel_checkerboard_is_edge_dense():
    assert extract_visual_features(_checker(32, 2)).edge_density > 0.5


@pytest.mark.parametrize("n", [16, 17, 40])
def test_one_pixel_checkerboard_only_corners_respond(n):
    # the [1, 2, 1] smoothing of the 3x3 Sobel kernel cancels a period-2 pattern,
    # so with reflected borders only the four corner pixels have a gradient
    assert extract_visual_features(_checker(n, 1)).edge_density == 4 / (n * n)


def test_foreground_and_components():
    img = _solid([255, 255, 255], 40, 40)
    img[5:10, 5:10] = 0
    img[20:30, 20:25] = 0
    f = extract_visual_features(img)
    assert f.foreground_ratio == (25 + 50) / 1600
    assert f.connected_components == 2
    assert f.image_entropy == pytest.approx(
        -(0.046875 * math.log2(0.046875) + 0.953125 * math.log2(0.953125)))


def test_components_are_four_connected():
    img = _solid([255, 255, 255], 10, 10)
    img[2, 2] = img[3, 3] = 0  # diagonal neighbours
    assert extract_visual_features(img).connected_components == 2


def test_spatial_frequency_by_hand():
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    img[:, 1] = 255
    # row differences are 1 everywhere, column differences 0
    assert extract_visual_features(img).spatial_frequency == pytest.approx(1.0)


def test_otsu_reference():
    hist = np.zeros(256)
    hist[[10, 20, 200, 220]] = [5, 5, 5, 5]
    assert 20 <= _otsu_threshold(hist) < 200
    assert _otsu_threshold(np.eye(256)[7]) is None


def test_float_and_gray_inputs_and_errors():
    a = extract_visual_features(np.full((8, 8), 0.5))
    b = extract_visual_features(_solid([128, 128, 128], 8, 8))
    assert a == b
    with pytest.raises(EmptyImage):
        extract_visual_features(np.zeros((0, 4, 3), dtype=np.uint8))


@given(st.integers(0, 2**32 - 1))
def test_feature_ranges_and_determinism(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 24, size=2)
    img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    f = extract_visual_features(img)
    assert f == extract_visual_features(img.copy())
    assert 0 <= f.mean_saturation <= 1 and 0 <= f.grayscale_ratio <= 1
    assert 0 <= f.edge_density <= 1 and 0 <= f.image_entropy <= 8
    assert 0 <= f.foreground_ratio <= 1 and f.connected_components >= 0
    assert all(math.isfinite(x) for x in f.vector())


def test_load_image(tmp_path):
    from PIL import Image
    p = tmp_path / "x.png"
    Image.fromarray(_solid([10, 20, 30], 5, 6)).save(p)
    assert load_image(p).shape == (5, 6, 3)
    with pytest.raises(IoFailure):
        load_image(tmp_path / "nope.png")


# ------------------------------------------------------------------ rules

def _features(**kw):
    base = dict(width_px=512, height_px=400, aspect_ratio=1.28, colorfulness=10.0,
                mean_saturation=0.1, color_entropy=2.0, grayscale_ratio=0.8, edge_density=0.1,
                spatial_frequency=0.2, image_entropy=3.0, foreground_ratio=0.2,
                connected_components=12)
    base.update(kw)
    return VisualFeatures(**base)


def test_rules():
    assert apply_coarse_rules(_features()) == RuleOutcome(True, [])
    out = apply_coarse_rules(_features(edge_density=0.0), CoarseRules(min_edge_density=0.01))
    assert not out.keep and len(out.reasons) == 1 and "edge_density" in out.reasons[0]
    out = apply_coarse_rules(_features(foreground_ratio=0.999),
                             CoarseRules(foreground_min=0.005, foreground_max=0.98))
    assert not out.keep and "foreground_ratio" in out.reasons[0]
    out = apply_coarse_rules(_features(width_px=64, image_entropy=0.1))
    assert len(out.reasons) == 2


# ------------------------------------------------------------------ semantic margin

def test_margin_examples():
    t = [[1.0, 0.0], [0.3, 0.7]]
    assert clip_margin([0.2, 0.9], t, t) == 0.0
    assert clip_margin([1.0, 0.0], [[1.0, 0.0]], [[0.0, 1.0]]) == 1.0
    s = 1 / math.sqrt(2)
    assert clip_margin([s, s], [[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(DimMismatch):
        clip_margin([1.0, 0.0], [[1.0, 0.0, 0.0]], [[0.0, 1.0]])
    with pytest.raises(ZeroVector):
        clip_margin([0.0, 0.0], [[1.0, 0.0]], [[0.0, 1.0]])


@given(st.integers(0, 2**32 - 1))
def test_margin_antisymmetric(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=6)
    pos = list(rng.normal(size=(3, 6)))
    neg = list(rng.normal(size=(2, 6)))
    m = clip_margin(v, pos, neg)
    assert clip_margin(v, neg, pos) == -m
    assert -2 <= m <= 2
    p, n, mm = semantic_similarities(v, pos, neg)
    assert mm == p - n == m


# ------------------------------------------------------------------ classifier

def test_zero_weights_give_half():
    model = LogisticModel(np.zeros(3), np.ones(3), np.zeros(3), 0.0)
    assert predict_retention(model, [4.0, -2.0, 9.0]) == 0.5


def test_separable_fixture_fits_perfectly():
    X = [[0.0, 0.0], [1.0, 0.2], [0.3, 1.0], [3.0, 3.0], [4.0, 2.5], [2.8, 4.0]]
    y = [0, 0, 0, 1, 1, 1]
    model = fit_logistic(X, y, seed=3)
    p = predict_retention(model, np.array(X))
    assert ((p >= 0.5).astype(int) == y).all()
    again = fit_logistic(X, y, seed=3)
    assert np.array_equal(model.weights, again.weights) and model.bias == again.bias
    assert LogisticModel.from_dict(json.loads(json.dumps(model.to_dict()))).to_dict() == model.to_dict()


def test_logistic_errors():
    with pytest.raises(DegenerateLabels):
        fit_logistic([[1.0], [2.0]], [1, 1])
    with pytest.raises(DegenerateLabels):
        fit_logistic([[1.0]], [1])
    model = fit_logistic([[0.0], [1.0]], [0, 1])
    with pytest.raises(DimMismatch):
        predict_retention(model, [1.0, 2.0])


@given(st.integers(0, 2**32 - 1))
def test_predictions_monotone_along_weights(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 4))
    y = (X[:, 0] + 0.5 * rng.normal(size=30) > 0).astype(int)
    if len(set(y)) < 2:
        y[0] = 1 - y[0]
    model = fit_logistic(X, y, iterations=50, seed=seed)
    base = rng.normal(size=4)
    for j in range(4):
        xs = np.repeat(base[None, :], 9, axis=0)
        xs[:, j] = np.linspace(-3, 3, 9)
        p = predict_retention(model, xs)
        diffs = np.diff(p) * np.sign(model.weights[j])
        assert (diffs >= 0).all()


def test_classifier_wrapper():
    X = np.array([[0.0], [0.1], [0.9], [1.0]])
    clf = RetentionClassifier(seed=1).fit(X, [0, 0, 1, 1])
    assert clf.predict(X).tolist() == [0, 0, 1, 1]
    assert clf.predict_proba(X).shape == (4, 2)


# ------------------------------------------------------------------ stratification and fusion

@pytest.mark.parametrize("p, group", [(0.9, "accepted"), (0.8, "accepted"), (0.5, "uncertain"),
                                      (0.2, "rejected"), (0.0, "rejected")])
def test_stratify(p, group):
    assert stratify_decision(p, 0.8, 0.2) == group


@pytest.mark.parametrize("acc, rej", [(0.2, 0.8), (0.5, 0.5), (1.2, 0.1), (0.8, -0.1)])
def test_stratify_bad_thresholds(acc, rej):
    with pytest.raises(InvalidThresholds):
        stratify_decision(0.5, acc, rej)


VALID = '{"decision":"keep","label":"pipeline","confidence":0.91,"reason":"method flow"}'


def test_verdict_valid():
    v = parse_filter_verdict(VALID)
    assert (v.decision, v.label, v.confidence) == ("keep", "pipeline", 0.91)


@pytest.mark.parametrize("obj, path", [
    ({"decision": "drop", "label": "pipeline", "confidence": 0.5, "reason": ""}, "$.label"),
    ({"decision": "keep", "label": "other", "confidence": 0.5, "reason": ""}, "$.label"),
    ({"decision": "maybe", "label": "other", "confidence": 0.5, "reason": ""}, "$.decision"),
    ({"decision": "keep", "label": "pipeline", "confidence": 1.5, "reason": ""}, "$.confidence"),
    ({"decision": "keep", "label": "pipeline", "confidence": True, "reason": ""}, "$.confidence"),
    ({"decision": "keep", "label": "pipeline", "confidence": 0.5}, "$.reason"),
    ([1, 2], "$"),
])
def test_verdict_schema(obj, path):
    with pytest.raises(SchemaViolation) as err:
        parse_filter_verdict(json.dumps(obj))
    assert err.value.path == path


def test_verdict_malformed():
    for text in ["not json", VALID + VALID, b"\x80\x81", "", '{"a": NaN}']:
        with pytest.raises(MalformedJson):
            parse_filter_verdict(text)


def test_all_keep_labels_accepted():
    for label in KEEP_LABELS:
        assert parse_filter_verdict(VALID.replace("pipeline", label)).label == label


def test_verdict_fuzz():
    rng = random.Random(1234)
    for _ in range(1000):
        data = bytes(rng.randrange(256) for _ in range(rng.randrange(64)))
        with pytest.raises((MalformedJson, SchemaViolation)):
            parse_filter_verdict(data)


def test_fusion():
    assert fuse_decision("a", 0.9).final == "keep"
    assert fuse_decision("a", 0.1).final == "drop"
    assert fuse_decision("a", 0.5).final == "drop"
    assert fuse_decision("a", 0.5, verdict_text=VALID).final == "keep"
    d = fuse_decision("a", 0.5, verdict_text="\x00garbage")
    assert d.final == "drop" and d.group == "uncertain" and "verification failed" in d.reasons[0]
    gate = RuleOutcome(False, ["edge_density 0 < 0.005"])
    d = fuse_decision("a", 0.99, rule_outcome=gate)
    assert d.final == "drop" and d.group == "accepted"
    assert json.loads(d.to_json())["final"] == "drop"


def test_features_csv_round_trip():
    f = _features()
    text = features_csv([("a", f, (0.3, 0.1, 0.2)), ("b", f, (0.1, 0.4, -0.3))])
    ids, X = read_features_csv(text)
    assert ids == ["a", "b"] and X.shape == (2, 15)
    assert X[0].tolist() == f.vector() + [0.3, 0.1, 0.2]
    ids, X = read_features_csv(features_csv([("c", f, None)]))
    assert X.shape == (1, 12)
