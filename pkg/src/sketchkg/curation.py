"""Diagram curation: raster features, rule gates, semantic margin, retention scoring and fusion."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._jsonio import loads_strict
from .exceptions import (
    DegenerateLabels, DimMismatch, EmptyImage, InputError, InvalidThresholds, IoFailure,
    MalformedJson, SchemaViolation, ZeroVector,
)
from .hashing import SplitMix64

KEEP_LABELS = ("architecture", "pipeline", "workflow", "flowchart", "overview")
GRAY_TOLERANCE = 8 / 255


@dataclass(frozen=True)
class VisualFeatures:
    width_px: int
    height_px: int
    aspect_ratio: float
    colorfulness: float
    mean_saturation: float
    color_entropy: float
    grayscale_ratio: float
    edge_density: float
    spatial_frequency: float
    image_entropy: float
    foreground_ratio: float
    connected_components: int

    def vector(self):
        return [float(getattr(self, f.name)) for f in fields(self)]

    def as_dict(self):
        return asdict(self)


VISUAL_COLUMNS = tuple(f.name for f in fields(VisualFeatures))
SEMANTIC_COLUMNS = ("mean_positive_sim", "mean_negative_sim", "clip_margin")


def _as_rgb(image):
    """uint8 (H, W, 3) view of an array, PIL image or float [0, 1] array."""
    if hasattr(image, "convert") and hasattr(image, "size"):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise InputError(f"expected an RGB raster, got shape {arr.shape}")
    arr = arr[:, :, :3]
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise EmptyImage("image has no pixels")
    if arr.dtype != np.uint8:
        f = arr.astype(np.float64)
        if not np.all(np.isfinite(f)):
            raise InputError("image has non-finite values")
        arr = np.clip(np.round(f * 255.0), 0, 255).astype(np.uint8)
    return arr


def _entropy(counts):
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(max(0.0, -math.fsum(p * np.log2(p))))


def _otsu_threshold(hist):
    """Level t maximizing between-class variance of {<= t} vs {> t}; None if one level only."""
    if np.count_nonzero(hist) < 2:
        return None
    levels = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist).astype(np.float64)
    total = w0[-1]
    w1 = total - w0
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mt * w0 / total - m0) ** 2 / (w0 * w1)
    between[(w0 == 0) | (w1 == 0)] = -1.0
    return int(np.argmax(between))


def extract_visual_features(image):
    rgb = _as_rgb(image)
    h, w = rgb.shape[:2]
    c = rgb.astype(np.float64)
    r, g, b = c[:, :, 0], c[:, :, 1], c[:, :, 2]

    rg = r - g
    yb = 0.5 * (r + g) - b
    colorfulness = math.sqrt(rg.var() + yb.var()) + 0.3 * math.sqrt(rg.mean() ** 2 + yb.mean() ** 2)

    cmax = c.max(axis=2)
    cmin = c.min(axis=2)
    sat = np.divide(cmax - cmin, cmax, out=np.zeros_like(cmax), where=cmax > 0)
    mean_saturation = float(sat.mean())

    q = rgb >> 5
    bins = (q[:, :, 0].astype(np.int64) << 6) | (q[:, :, 1].astype(np.int64) << 3) | q[:, :, 2]
    color_entropy = _entropy(np.bincount(bins.ravel(), minlength=512))

    grayscale_ratio = float(np.mean((cmax - cmin) <= 8.0))

    gray = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
    mag = np.hypot(ndimage.sobel(gray, axis=0), ndimage.sobel(gray, axis=1))
    peak = mag.max()
    edge_density = float(np.mean(mag > 0.1 * peak)) if peak > 0 else 0.0

    rf = math.sqrt(np.mean(np.diff(gray, axis=1) ** 2)) if w > 1 else 0.0
    cf = math.sqrt(np.mean(np.diff(gray, axis=0) ** 2)) if h > 1 else 0.0
    spatial_frequency = math.sqrt(rf * rf + cf * cf)

    gray8 = np.clip(np.round(gray * 255.0), 0, 255).astype(np.int64)
    hist = np.bincount(gray8.ravel(), minlength=256)
    image_entropy = min(8.0, _entropy(hist))

    t = _otsu_threshold(hist)
    if t is None:
        foreground_ratio, components = 0.0, 0
    else:
        mask = gray8 <= t
        foreground_ratio = float(mask.mean())
        components = int(ndimage.label(mask)[1])

    return VisualFeatures(
        width_px=int(w), height_px=int(h), aspect_ratio=w / h,
        colorfulness=float(colorfulness), mean_saturation=mean_saturation,
        color_entropy=color_entropy, grayscale_ratio=grayscale_ratio,
        edge_density=edge_density, spatial_frequency=float(spatial_frequency),
        image_entropy=image_entropy, foreground_ratio=foreground_ratio,
        connected_components=components,
    )


def load_image(path):
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


@dataclass
class CoarseRules:
    min_edge_density: float = 0.005
    min_image_entropy: float = 0.5
    foreground_min: float = 0.002
    foreground_max: float = 0.98
    min_side_px: int = 128


@dataclass
class RuleOutcome:
    keep: bool
    reasons: list = field(default_factory=list)


def apply_coarse_rules(f, rules=None):
    rules = rules or CoarseRules()
    reasons = []
    if f.edge_density < rules.min_edge_density:
        reasons.append(f"edge_density {f.edge_density:.6g} < {rules.min_edge_density:g}")
    if f.image_entropy < rules.min_image_entropy:
        reasons.append(f"image_entropy {f.image_entropy:.6g} < {rules.min_image_entropy:g}")
    if not rules.foreground_min <= f.foreground_ratio <= rules.foreground_max:
        reasons.append(f"foreground_ratio {f.foreground_ratio:.6g} outside "
                       f"[{rules.foreground_min:g}, {rules.foreground_max:g}]")
    if min(f.width_px, f.height_px) < rules.min_side_px:
        reasons.append(f"min side {min(f.width_px, f.height_px)} px < {rules.min_side_px}")
    return RuleOutcome(not reasons, reasons)


def _unit(v, what):
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ZeroVector(what)
    return v / n


def semantic_similarities(image_vec, positives, negatives):
    """(mean cosine to positives, mean cosine to negatives, their difference)."""
    if len(positives) == 0 or len(negatives) == 0:
        raise InputError("prototype lists must be non-empty")
    v = _unit(image_vec, "image")
    for t in [*positives, *negatives]:
        if np.asarray(t).reshape(-1).shape != v.shape:
            raise DimMismatch("prototype dim differs from image embedding dim")
    pos = math.fsum(float(v @ _unit(t, "positive prototype")) for t in positives) / len(positives)
    neg = math.fsum(float(v @ _unit(t, "negative prototype")) for t in negatives) / len(negatives)
    return pos, neg, pos - neg


def clip_margin(image_vec, positives, negatives):
    return semantic_similarities(image_vec, positives, negatives)[2]


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class LogisticModel:
    mean: np.ndarray
    scale: np.ndarray
    weights: np.ndarray
    bias: float = 0.0

    @property
    def dim(self):
        return self.weights.shape[0]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist(),
                "weights": self.weights.tolist(), "bias": self.bias}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float),
                   np.asarray(d["weights"], float), float(d["bias"]))


def fit_logistic(X, y, iterations=500, learning_rate=0.5, l2=0.0, seed=0):
    """Standardized full-batch gradient descent on mean log-loss."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimMismatch("X must be (n, d) with one label per row")
    if X.shape[0] < 2 or not np.all(np.isin(y, (0.0, 1.0))) or len(set(y.tolist())) < 2:
        raise DegenerateLabels("need at least two examples with both labels 0 and 1")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    rng = SplitMix64(seed)
    w = np.array([(rng.random() - 0.5) * 0.02 for _ in range(X.shape[1])])
    b = 0.0
    n = X.shape[0]
    for _ in range(iterations):
        err = _sigmoid(Z @ w + b) - y
        w -= learning_rate * (Z.T @ err / n + l2 * w)
        b -= learning_rate * float(err.mean())
    return LogisticModel(mean, scale, w, b)


def predict_retention(model, x):
    """p_keep for one feature vector or each row of a matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise DimMismatch(f"feature dim {x.shape[-1]} != model dim {model.dim}")
    p = _sigmoid(((x - model.mean) / model.scale) @ model.weights + model.bias)
    return float(p) if p.ndim == 0 else p


class RetentionClassifier(BaseEstimator, ClassifierMixin):
    def __init__(self, iterations=500, learning_rate=0.5, l2=0.0, seed=0):
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.l2 = l2
        self.seed = seed

    def fit(self, X, y):
        self.model_ = fit_logistic(X, y, self.iterations, self.learning_rate, self.l2, self.seed)
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = np.atleast_1d(predict_retention(self.model_, np.atleast_2d(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)


def stratify_decision(p_keep, accept_threshold=0.8, reject_threshold=0.2):
    if not 0.0 <= reject_threshold < accept_threshold <= 1.0:
        raise InvalidThresholds(
            f"need 0 <= reject ({reject_threshold}) < accept ({accept_threshold}) <= 1")
    if p_keep >= accept_threshold:
        return "accepted"
    if p_keep <= reject_threshold:
        return "rejected"
    return "uncertain"


@dataclass(frozen=True)
class FilterVerdict:
    decision: str
    label: str
    confidence: float
    reason: str


def parse_filter_verdict(text):
    obj = loads_strict(text)
    if not isinstance(obj, dict):
        raise SchemaViolation("$", "expected a JSON object")
    for key in ("decision", "label", "confidence", "reason"):
        if key not in obj:
            raise SchemaViolation(f"$.{key}", "missing")
    decision, label, conf, reason = obj["decision"], obj["label"], obj["confidence"], obj["reason"]
    if decision not in ("keep", "drop"):
        raise SchemaViolation("$.decision", "must be 'keep' or 'drop'")
    if not isinstance(label, str):
        raise SchemaViolation("$.label", "must be a string")
    if decision == "drop" and label != "other":
        raise SchemaViolation("$.label", "must be 'other' when decision is 'drop'")
    if decision == "keep" and label not in KEEP_LABELS:
        raise SchemaViolation("$.label", f"must be one of {', '.join(KEEP_LABELS)} when keeping")
    if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0.0 <= conf <= 1.0:
        raise SchemaViolation("$.confidence", "must be a number in [0, 1]")
    if not isinstance(reason, str):
        raise SchemaViolation("$.reason", "must be a string")
    return FilterVerdict(decision, label, float(conf), reason)


@dataclass
class RetentionDecision:
    id: str
    p_keep: float
    group: str
    final: str
    reasons: list = field(default_factory=list)

    def to_dict(self):
        return {"id": self.id, "p_keep": self.p_keep, "group": self.group,
                "final": self.final, "reasons": list(self.reasons)}

    def to_json(self):
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))


def fuse_decision(item_id, p_keep, accept_threshold=0.8, reject_threshold=0.2,
                  verdict_text=None, rule_outcome=None):
    """Combine rule gate, stratified p_keep and (for uncertain items) a model verdict.

    A failed rule gate drops outright.  Uncertain items keep only on a
    well-formed ``keep`` verdict; a missing or unparseable verdict drops.
    """
    group = stratify_decision(p_keep, accept_threshold, reject_threshold)
    if rule_outcome is not None and not rule_outcome.keep:
        return RetentionDecision(item_id, p_keep, group, "drop",
                                 ["coarse rules: " + r for r in rule_outcome.reasons])
    if group == "accepted":
        return RetentionDecision(item_id, p_keep, group, "keep", ["p_keep above accept threshold"])
    if group == "rejected":
        return RetentionDecision(item_id, p_keep, group, "drop", ["p_keep below reject threshold"])
    if verdict_text is None:
        return RetentionDecision(item_id, p_keep, group, "drop", ["no verification verdict"])
    try:
        v = parse_filter_verdict(verdict_text)
    except (MalformedJson, SchemaViolation) as exc:
        return RetentionDecision(item_id, p_keep, group, "drop", [f"verification failed: {exc}"])
    return RetentionDecision(item_id, p_keep, group, v.decision,
                             [f"verifier {v.decision} ({v.label}, {v.confidence:g}): {v.reason}"])


def features_csv(rows):
    """rows: iterable of (id, VisualFeatures, (pos, neg, margin) or None)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", *VISUAL_COLUMNS, *SEMANTIC_COLUMNS])
    for item_id, feats, sem in rows:
        sem = sem if sem is not None else ("", "", "")
        writer.writerow([item_id, *[repr(x) if isinstance(x, float) else x
                                    for x in (getattr(feats, c) for c in VISUAL_COLUMNS)],
                         *[repr(s) if isinstance(s, float) else s for s in sem]])
    return buf.getvalue()


def read_features_csv(text):
    """Inverse of :func:`features_csv`: ids and (n, 11 or 14) float matrix."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[0] != "id":
        raise InputError("feature CSV must start with an id column")
    ids, rows = [], []
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"line {lineno}: expected {len(header)} columns")
        ids.append(row[0])
        vals = row[1:]
        if all(v != "" for v in vals[len(VISUAL_COLUMNS):]):
            rows.append([float(v) for v in vals])
        else:
            rows.append([float(v) for v in vals[:len(VISUAL_COLUMNS)]])
    if len({len(r) for r in rows}) > 1:
        raise InputError("semantic columns must be all present or all absent")
    return ids, np.asarray(rows, dtype=np.float64)
