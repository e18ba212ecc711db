"""Anomaly baseline, logistic classifier, threshold calibration and verdict fusion."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple
import logging
import math

import numpy as np

from .documents import (
    document_to_text,
    fmt_float,
    fmt_floats,
    get_float,
    get_int,
    new_document,
    parse_document,
    parse_floats,
)
from .features import (
    DEFAULT_ENTROPY_THRESHOLD,
    FEATURE_COUNT,
    LAYOUT_VERSION,
    FeatureVector,
    Normalizer,
    TransitionModel,
    check_layout,
    column_stats,
    feature_vector,
)
from .graph import GraphParams, NodeKey, TemporalCorrelationGraph, Window, build_graph
from .signatures import DEFAULT_MATCH_LIMIT, SignaturePattern, signature_hits
from .types import (
    LABEL_BENIGN,
    LABEL_RANSOMWARE,
    DegenerateLabels,
    DetectorError,
    DimensionMismatch,
    EventRecord,
    IncompatibleModel,
    InsufficientData,
    UnreadableInput,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
SEVERITY_LOW = 'low'
SEVERITY_HIGH = 'high'
MIN_BASELINE_VECTORS = 10
MIN_CALIBRATION_VECTORS = 20


def _as_vector(x: Sequence[float], dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (dim,):
        raise DimensionMismatch(f"expected a {dim}-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class BaselineModel:
    """Per-feature mean and population sigma of normalized benign windows."""
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.mean)


def fit_baseline(vectors: Sequence[Sequence[float]]) -> BaselineModel:
    if len(vectors) < MIN_BASELINE_VECTORS:
        raise InsufficientData(f"baseline needs >= {MIN_BASELINE_VECTORS} benign vectors, got {len(vectors)}")
    mean, std = column_stats(np.asarray(vectors, dtype=float))
    return BaselineModel(mean, std)


def anomaly_score(model: BaselineModel, x: Sequence[float]) -> float:
    """RMS z-distance from the benign baseline."""
    arr = _as_vector(x, model.dimension)
    z = (arr - np.asarray(model.mean)) / np.asarray(model.std)
    return float(np.sqrt(np.mean(z * z)))


def calibrate_threshold(model: BaselineModel, vectors: Sequence[Sequence[float]],
                        target_fpr: float = 0.05) -> float:
    """Smallest benign score whose upper tail holds at most target_fpr of the set."""
    if len(vectors) < MIN_CALIBRATION_VECTORS:
        raise InsufficientData(f"calibration needs >= {MIN_CALIBRATION_VECTORS} vectors, got {len(vectors)}")
    if not 0.0 <= target_fpr <= 1.0:
        raise DetectorError(f"target_fpr must be in [0, 1], got {target_fpr}")
    scores = np.sort([anomaly_score(model, v) for v in vectors])
    n = len(scores)
    allowed = math.floor(target_fpr * n + 1e-9)
    for value in np.unique(scores):
        at_or_above = n - int(np.searchsorted(scores, value, side='left'))
        if at_or_above <= allowed:
            return float(value)
    return float(np.nextafter(scores[-1], math.inf))


def sigmoid(z):
    """Stable logistic, clamped to the open unit interval."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    p = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(p, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def logistic_loss_and_grad(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                           l2: float) -> Tuple[float, np.ndarray, float]:
    """Mean logistic loss plus (l2/2)|w|^2, with its gradient in (w, b)."""
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * float(w @ w))
    residual = sigmoid(z) - y
    grad_w = X.T @ residual / len(y) + l2 * w
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


@dataclass(frozen=True)
class LinearClassifier:
    weights: Tuple[float, ...]
    bias: float
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    loss_history: Tuple[float, ...] = field(default=(), compare=False, repr=False)

    @property
    def dimension(self) -> int:
        return len(self.weights)


def train_classifier(X: Sequence[Sequence[float]], y: Sequence[int], learning_rate: float = 0.1,
                     epochs: int = 500, l2: float = 1e-4) -> LinearClassifier:
    """Full-batch gradient descent from zero weights."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X has shape {X.shape} but y has {len(y)} labels")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise DegenerateLabels("training needs both classes present")

    w = np.zeros(X.shape[1])
    b = 0.0
    history = []
    for _ in range(epochs):
        loss, grad_w, grad_b = logistic_loss_and_grad(w, b, X, y, l2)
        history.append(loss)
        w = w - learning_rate * grad_w
        b = b - learning_rate * grad_b
    history.append(logistic_loss_and_grad(w, b, X, y, l2)[0])
    logger.debug(f"Classifier trained: epochs={epochs} loss {history[0]:.4f} -> {history[-1]:.4f}")
    return LinearClassifier(tuple(float(v) for v in w), float(b), learning_rate, epochs, l2, tuple(history))


def predict(model: LinearClassifier, x: Sequence[float]) -> float:
    arr = _as_vector(x, model.dimension)
    return float(sigmoid(float(arr @ np.asarray(model.weights)) + model.bias))


@dataclass(frozen=True)
class Verdict:
    window_start: float
    window_end: float
    anomaly_score: float
    prob: float
    signature_hits: Tuple[str, ...] = ()
    label: str = LABEL_BENIGN
    severity: str = SEVERITY_LOW

    @property
    def is_ransomware(self) -> bool:
        return self.label == LABEL_RANSOMWARE

    def to_dict(self) -> Dict[str, Any]:
        return {
            'window_start': self.window_start,
            'window_end': self.window_end,
            'anomaly_score': self.anomaly_score,
            'prob': self.prob,
            'signature_hits': list(self.signature_hits),
            'label': self.label,
            'severity': self.severity,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Verdict':
        return cls(float(data['window_start']), float(data['window_end']), float(data['anomaly_score']),
                   float(data['prob']), tuple(data.get('signature_hits', ())), data['label'],
                   data.get('severity', SEVERITY_LOW))


def decide(x: Sequence[float], baseline: BaselineModel, threshold: float, classifier: LinearClassifier,
           p_thresh: float = 0.5, hits: Sequence[str] = (), window_start: float = 0.0,
           window_end: float = 0.0) -> Verdict:
    """OR-fusion of classifier and anomaly threshold; signature hits only raise severity."""
    score = anomaly_score(baseline, x)
    prob = predict(classifier, x)
    ransomware = prob >= p_thresh or score >= threshold
    hits = tuple(hits)
    return Verdict(
        window_start=window_start,
        window_end=window_end,
        anomaly_score=score,
        prob=prob,
        signature_hits=hits,
        label=LABEL_RANSOMWARE if ransomware else LABEL_BENIGN,
        severity=SEVERITY_HIGH if ransomware and hits else SEVERITY_LOW,
    )


@dataclass(frozen=True)
class DetectionModel:
    """Everything a detector needs, persisted as one INI document."""
    params: GraphParams
    normalizer: Normalizer
    baseline: BaselineModel
    threshold: float
    classifier: LinearClassifier
    transitions: TransitionModel
    p_thresh: float = 0.5
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD


def model_to_document(model: DetectionModel) -> str:
    doc = new_document()
    doc['model'] = {
        'format_version': str(MODEL_FORMAT_VERSION),
        'layout_version': str(LAYOUT_VERSION),
        'threshold': fmt_float(model.threshold),
        'p_thresh': fmt_float(model.p_thresh),
        'entropy_threshold': fmt_float(model.entropy_threshold),
    }
    p = model.params
    doc['graph'] = {'delta': fmt_float(p.delta), 'tau': fmt_float(p.tau),
                    'window': fmt_float(p.window), 'stride': fmt_float(p.stride)}
    doc['normalizer'] = {'mean': fmt_floats(model.normalizer.mean), 'std': fmt_floats(model.normalizer.std)}
    doc['baseline'] = {'mean': fmt_floats(model.baseline.mean), 'std': fmt_floats(model.baseline.std)}
    c = model.classifier
    doc['classifier'] = {
        'weights': fmt_floats(c.weights),
        'bias': fmt_float(c.bias),
        'learning_rate': fmt_float(c.learning_rate),
        'epochs': str(c.epochs),
        'l2': fmt_float(c.l2),
    }
    t = model.transitions
    doc['transitions'] = {'alpha': fmt_float(t.alpha), 'vocab_size': str(t.vocab_size)}
    doc['transition_counts'] = {
        f"{u.label()} -> {v.label()}": str(count)
        for u in sorted(t.counts) for v, count in sorted(t.counts[u].items())
    }
    return document_to_text(doc)


def _vector_field(doc, section: str, key: str) -> Tuple[float, ...]:
    try:
        values = parse_floats(doc[section][key], IncompatibleModel)
    except KeyError:
        raise IncompatibleModel(f"missing [{section}] {key}")
    if len(values) != FEATURE_COUNT:
        raise IncompatibleModel(f"[{section}] {key} has {len(values)} values, expected {FEATURE_COUNT}")
    return values


def model_from_document(text: str, source: str = '<model>') -> DetectionModel:
    doc = parse_document(text, source, IncompatibleModel)
    version = get_int(doc, 'model', 'format_version', IncompatibleModel)
    if version != MODEL_FORMAT_VERSION:
        raise IncompatibleModel(f"{source}: model format {version}, expected {MODEL_FORMAT_VERSION}")
    check_layout(get_int(doc, 'model', 'layout_version', IncompatibleModel), source)

    params = GraphParams(*(get_float(doc, 'graph', k, IncompatibleModel)
                           for k in ('delta', 'tau', 'window', 'stride')))
    counts: Dict[NodeKey, Dict[NodeKey, int]] = {}
    if doc.has_section('transition_counts'):
        for pair, count in doc['transition_counts'].items():
            try:
                u_text, v_text = pair.split('->')
                u, v = NodeKey.from_label(u_text), NodeKey.from_label(v_text)
                counts.setdefault(u, {})[v] = int(count)
            except (ValueError, DetectorError) as e:
                raise IncompatibleModel(f"{source}: bad transition count {pair!r}: {e}")
    transitions = TransitionModel(counts, get_float(doc, 'transitions', 'alpha', IncompatibleModel),
                                  get_int(doc, 'transitions', 'vocab_size', IncompatibleModel))
    weights = parse_floats(doc.get('classifier', 'weights', fallback=''), IncompatibleModel)
    if len(weights) != FEATURE_COUNT:
        raise IncompatibleModel(f"{source}: classifier has {len(weights)} weights, expected {FEATURE_COUNT}")
    classifier = LinearClassifier(weights, get_float(doc, 'classifier', 'bias', IncompatibleModel),
                                  get_float(doc, 'classifier', 'learning_rate', IncompatibleModel),
                                  get_int(doc, 'classifier', 'epochs', IncompatibleModel),
                                  get_float(doc, 'classifier', 'l2', IncompatibleModel))
    return DetectionModel(
        params=params,
        normalizer=Normalizer(_vector_field(doc, 'normalizer', 'mean'), _vector_field(doc, 'normalizer', 'std')),
        baseline=BaselineModel(_vector_field(doc, 'baseline', 'mean'), _vector_field(doc, 'baseline', 'std')),
        threshold=get_float(doc, 'model', 'threshold', IncompatibleModel),
        classifier=classifier,
        transitions=transitions,
        p_thresh=get_float(doc, 'model', 'p_thresh', IncompatibleModel),
        entropy_threshold=get_float(doc, 'model', 'entropy_threshold', IncompatibleModel),
    )


def save_model(path, model: DetectionModel) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(model_to_document(model))


def load_model(path) -> DetectionModel:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise UnreadableInput(f"Could not read model {path}: {e}") from e
    return model_from_document(text, str(path))


@dataclass(frozen=True)
class WindowResult:
    window: Window
    graph: TemporalCorrelationGraph
    features: FeatureVector
    verdict: Verdict


class WindowAnalyzer:
    """Features, signatures and fusion for one window at a time."""

    def __init__(self, model: DetectionModel, signatures: Sequence[SignaturePattern] = (),
                 signature_limit: int = DEFAULT_MATCH_LIMIT):
        self.model = model
        self.signatures = list(signatures)
        self.signature_limit = signature_limit

    def features(self, graph: TemporalCorrelationGraph, events: Sequence[EventRecord]) -> FeatureVector:
        return feature_vector(graph, events, self.model.transitions, self.model.entropy_threshold)

    def verdict(self, graph: TemporalCorrelationGraph, features: FeatureVector) -> Verdict:
        m = self.model
        hits = signature_hits(graph, self.signatures, self.signature_limit)
        return decide(m.normalizer.apply(features), m.baseline, m.threshold, m.classifier, m.p_thresh,
                      hits, graph.window_start, graph.window_end)

    def analyze_graph(self, graph: TemporalCorrelationGraph,
                      events: Sequence[EventRecord]) -> Tuple[FeatureVector, Verdict]:
        features = self.features(graph, events)
        return features, self.verdict(graph, features)

    def analyze(self, window: Window) -> WindowResult:
        graph = build_graph(window.events, window.start, window.end, self.model.params)
        features, verdict = self.analyze_graph(graph, window.events)
        return WindowResult(window, graph, features, verdict)

    def analyze_all(self, windows: Sequence[Window]) -> List[WindowResult]:
        return [self.analyze(w) for w in windows]
