"""Window labeling, seeded splits and the full model fit sequence."""
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np

from .config import PipelineConfig
from .detection import (
    DetectionModel,
    WindowAnalyzer,
    WindowResult,
    calibrate_threshold,
    fit_baseline,
    train_classifier,
)
from .features import FEATURE_NAMES, FeatureVector, feature_vector, fit_normalizer, fit_transition_model
from .graph import GraphParams, TemporalCorrelationGraph, Window, build_graph, windows
from .signatures import SignaturePattern
from .simgen import BenignProfile, CorpusSettings, RandomStream, RansomwareProfile, simulate_corpus
from .stages import stage
from .types import EventRecord, InsufficientData, LabelInterval

logger = logging.getLogger(__name__)

SPLIT_STREAM = 5


def simulate_from_config(config: PipelineConfig, seed: Optional[int] = None,
                         profiles: Optional[Sequence[RansomwareProfile]] = None,
                         benign: Optional[BenignProfile] = None,
                         corpus: Optional[CorpusSettings] = None
                         ) -> Tuple[List[EventRecord], List[LabelInterval]]:
    """Labeled corpus from the config's profiles, with optional substitutions."""
    return simulate_corpus(benign or config.benign,
                           config.ransomware if profiles is None else profiles,
                           corpus or config.corpus,
                           config.seed if seed is None else seed)


def corpus_duration(truth: Sequence[LabelInterval]) -> float:
    return max((iv.end for iv in truth), default=0.0)


def complete_windows(events: Sequence[EventRecord], params: GraphParams,
                     duration: Optional[float] = None) -> List[Window]:
    """Windows that end inside the labeled span; trailing partial windows are dropped."""
    result = windows(events, params)
    if duration is None:
        return result
    return [w for w in result if w.end <= duration + 1e-9]


def label_window(start: float, end: float, truth: Sequence[LabelInterval],
                 events: Optional[Sequence[EventRecord]] = None) -> Optional[int]:
    """1 if the window holds ransomware activity, 0 if labeled benign, None if unlabeled.

    With events and a pid on the interval, at least one event of that pid inside the
    interval is required; otherwise plain overlap decides.
    """
    covered = False
    for iv in truth:
        if iv.end < start or iv.start >= end:
            continue
        covered = True
        if not iv.is_ransomware:
            continue
        if events is None or iv.pid is None:
            return 1
        if any(e.pid == iv.pid and iv.start <= e.ts <= iv.end for e in events):
            return 1
    return 0 if covered else None


def label_windows(ws: Sequence[Window], truth: Sequence[LabelInterval]) -> List[Optional[int]]:
    return [label_window(w.start, w.end, truth, w.events) for w in ws]


class Split(NamedTuple):
    train: Tuple[int, ...]
    validation: Tuple[int, ...]
    test: Tuple[int, ...]


def split_indices(n: int, train_fraction: float = 0.6, validation_fraction: float = 0.2,
                  seed: int = 1) -> Split:
    """Seeded Fisher-Yates shuffle cut into train/validation/test."""
    order = list(range(n))
    rs = RandomStream(seed, SPLIT_STREAM)
    for i in range(n - 1, 0, -1):
        j = rs.index(i + 1)
        order[i], order[j] = order[j], order[i]
    n_train = int(round(n * train_fraction))
    n_val = int(round(n * validation_fraction))
    return Split(tuple(sorted(order[:n_train])), tuple(sorted(order[n_train:n_train + n_val])),
                 tuple(sorted(order[n_train + n_val:])))


def fisher_scores(X: np.ndarray, y: np.ndarray) -> List[Tuple[str, float]]:
    """Per-feature Fisher score, highest first."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    pos, neg = X[y == 1], X[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        return [(name, 0.0) for name in FEATURE_NAMES]
    spread = pos.var(axis=0) + neg.var(axis=0)
    gap = (pos.mean(axis=0) - neg.mean(axis=0)) ** 2
    scores = np.divide(gap, spread, out=np.zeros_like(gap), where=spread > 0)
    ranked = sorted(zip(FEATURE_NAMES, (float(s) for s in scores)), key=lambda item: (-item[1], item[0]))
    return ranked


@dataclass
class TrainingResult:
    model: DetectionModel
    split: Split
    labels: List[int]
    windows: List[Window]
    test_results: List[WindowResult]
    feature_ranking: List[Tuple[str, float]]
    unlabeled: int = 0

    @property
    def test_labels(self) -> List[int]:
        return [self.labels[i] for i in self.split.test]

    @property
    def loss_history(self) -> Tuple[float, ...]:
        return self.model.classifier.loss_history


def train_model(events: Sequence[EventRecord], truth: Sequence[LabelInterval], config: PipelineConfig,
                signatures: Sequence[SignaturePattern] = ()) -> TrainingResult:
    """Transition model, normalizer, baseline, threshold and classifier from one labeled corpus."""
    params = config.graph
    with stage('build') as st:
        labeled = []
        unlabeled = 0
        candidates = complete_windows(events, params, corpus_duration(truth))
        for w, label in zip(candidates, label_windows(candidates, truth)):
            if label is None:
                unlabeled += 1
                continue
            labeled.append((w, label))
        if unlabeled:
            logger.warning(f"Skipping {unlabeled} window(s) with no ground-truth coverage")
        ws = [w for w, _ in labeled]
        labels = [label for _, label in labeled]
        graphs: List[TemporalCorrelationGraph] = [build_graph(w.events, w.start, w.end, params) for w in ws]
        st.count = len(graphs)

    split = split_indices(len(ws), config.train_fraction, config.validation_fraction, config.seed)
    train_benign = [i for i in split.train if labels[i] == 0]
    if not train_benign:
        raise InsufficientData("training split holds no benign windows")

    with stage('features') as st:
        transitions = fit_transition_model((graphs[i] for i in train_benign), config.alpha)
        vectors: List[FeatureVector] = [
            feature_vector(g, w.events, transitions, config.entropy_threshold) for g, w in zip(graphs, ws)
        ]
        st.count = len(vectors)

    raw = np.asarray(vectors, dtype=float)
    y = np.asarray(labels)
    train = np.asarray(split.train, dtype=int)
    normalizer = fit_normalizer(raw[train])
    Z = normalizer.transform(raw)
    baseline = fit_baseline(Z[train_benign])
    val_benign = [i for i in split.validation if labels[i] == 0]
    threshold = calibrate_threshold(baseline, Z[val_benign], config.target_fpr)
    classifier = train_classifier(Z[train], y[train], config.learning_rate, config.epochs, config.l2)

    model = DetectionModel(params, normalizer, baseline, threshold, classifier, transitions,
                           config.p_thresh, config.entropy_threshold)
    logger.info(f"Trained model: windows={len(ws)} train={len(split.train)} "
                f"validation={len(split.validation)} test={len(split.test)} threshold={threshold:.4f}")

    analyzer = WindowAnalyzer(model, signatures, config.signature_limit)
    with stage('decide') as st:
        test_results = []
        for i in split.test:
            features, verdict = analyzer.analyze_graph(graphs[i], ws[i].events)
            test_results.append(WindowResult(ws[i], graphs[i], features, verdict))
        st.count = len(test_results)

    return TrainingResult(model, split, labels, ws, test_results,
                          fisher_scores(raw[train], y[train]), unlabeled)
