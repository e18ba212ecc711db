"""Topological metrics and the fixed 15-feature window embedding."""
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union
import csv
import logging
import math
import warnings

import networkx as nx
import numpy as np

from .graph import NodeKey, TemporalCorrelationGraph, TransitionRow, smoothed_row
from .types import (
    EventRecord,
    InsufficientData,
    InvalidSmoothing,
    LayoutMismatch,
    NonConvergence,
    OperationKind,
    UnfittedModel,
)

logger = logging.getLogger(__name__)

LAYOUT_VERSION = 1
SIGMA_FLOOR = 1e-9
PROBABILITY_FLOOR = 2.0 ** -64
DEFAULT_ENTROPY_THRESHOLD = 6.0


class FeatureVector(NamedTuple):
    node_count: float = 0.0
    edge_count: float = 0.0
    edge_density: float = 0.0
    global_clustering: float = 0.0
    mean_local_clustering: float = 0.0
    diameter: float = 0.0
    max_out_strength: float = 0.0
    top3_pagerank_mass: float = 0.0
    mean_edge_weight: float = 0.0
    write_read_ratio: float = 0.0
    high_entropy_write_fraction: float = 0.0
    rename_rate: float = 0.0
    burstiness: float = 0.0
    rare_transition_score: float = 0.0
    unique_targets_per_second: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.asarray(self, dtype=float)


FEATURE_NAMES: Tuple[str, ...] = FeatureVector._fields
FEATURE_COUNT = len(FEATURE_NAMES)


def check_layout(version: int, source: str = 'document') -> None:
    if version != LAYOUT_VERSION:
        raise LayoutMismatch(f"{source} uses feature layout {version}, this build uses {LAYOUT_VERSION}")


def undirected_projection(graph: TemporalCorrelationGraph) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(graph.sorted_nodes())
    g.add_edges_from(graph.edges)
    return g


def edge_density(graph: TemporalCorrelationGraph) -> float:
    n = len(graph.nodes)
    if n < 2:
        return 0.0
    return len(graph.edges) / (n * (n - 1))


def clustering(graph: TemporalCorrelationGraph) -> Tuple[float, float]:
    """(global transitivity, mean local coefficient) of the undirected projection."""
    if not graph.nodes:
        return 0.0, 0.0
    g = undirected_projection(graph)
    return float(nx.transitivity(g)), float(nx.average_clustering(g))


def diameter(graph: TemporalCorrelationGraph) -> int:
    """Hop diameter of the largest weak component; ties go to the smallest key."""
    if len(graph.nodes) <= 1:
        return 0
    g = undirected_projection(graph)
    largest = min(nx.connected_components(g), key=lambda c: (-len(c), min(c)))
    if len(largest) == 1:
        return 0
    return int(nx.diameter(g.subgraph(largest)))


def pagerank(graph: TemporalCorrelationGraph, damping: float = 0.85, tol: float = 1e-9,
             max_iter: int = 200) -> Dict[NodeKey, float]:
    """Weighted power iteration; dangling mass is spread uniformly."""
    keys = graph.sorted_nodes()
    n = len(keys)
    if n == 0:
        return {}
    index = {key: i for i, key in enumerate(keys)}
    weights = np.zeros((n, n))
    for (u, v), attr in graph.edges.items():
        weights[index[u], index[v]] = attr.weight
    strength = weights.sum(axis=1)
    dangling = strength == 0
    transition = np.divide(weights, strength[:, None], out=np.zeros_like(weights),
                           where=~dangling[:, None])

    rank = np.full(n, 1.0 / n)
    change = math.inf
    for _ in range(max_iter):
        spread = rank[dangling].sum() / n
        new_rank = (1.0 - damping) / n + damping * (rank @ transition + spread)
        change = float(np.abs(new_rank - rank).sum())
        rank = new_rank
        if change < tol:
            break
    else:
        if change >= 1e-6:
            warnings.warn(NonConvergence(f"pagerank stopped after {max_iter} iterations, L1 change {change:.3g}"))
    rank = rank / rank.sum()
    return {key: float(rank[i]) for i, key in enumerate(keys)}


def max_out_strength(graph: TemporalCorrelationGraph) -> float:
    total = graph.total_weight()
    if total <= 0:
        return 0.0
    return max(graph.out_strength().values()) / total


@dataclass(frozen=True)
class TransitionModel:
    """Smoothed successor model over node keys seen in benign training windows."""
    counts: Mapping[NodeKey, Mapping[NodeKey, int]] = field(default_factory=dict)
    alpha: float = 1.0
    vocab_size: int = 0

    def __post_init__(self) -> None:
        frozen = {u: MappingProxyType(dict(row)) for u, row in self.counts.items()}
        object.__setattr__(self, 'counts', MappingProxyType(frozen))

    @property
    def fitted(self) -> bool:
        return self.vocab_size >= 1

    def row(self, u: NodeKey) -> TransitionRow:
        return smoothed_row(self.counts.get(u, {}), self.alpha, self.vocab_size)

    def probability(self, u: NodeKey, v: NodeKey) -> float:
        row = self.counts.get(u, {})
        denom = sum(row.values()) + self.alpha * self.vocab_size
        if denom <= 0:
            return PROBABILITY_FLOOR
        # unseen successors take one slot of the OOV bucket
        return max((row.get(v, 0) + self.alpha) / denom, PROBABILITY_FLOOR)


def fit_transition_model(graphs: Iterable[TemporalCorrelationGraph], alpha: float = 1.0) -> TransitionModel:
    """Aggregate successor counts; the vocabulary reserves one key for unseen nodes."""
    if alpha < 0:
        raise InvalidSmoothing(f"alpha must be >= 0, got {alpha}")
    counts: Dict[NodeKey, Dict[NodeKey, int]] = {}
    keys = set()
    seen = 0
    for graph in graphs:
        seen += 1
        keys.update(graph.nodes)
        for (u, v), attr in graph.edges.items():
            row = counts.setdefault(u, {})
            row[v] = row.get(v, 0) + attr.count
    if seen == 0:
        raise InsufficientData("transition model needs at least one benign window")
    ordered = {u: dict(sorted(counts[u].items())) for u in sorted(counts)}
    logger.debug(f"Transition model: keys={len(keys)} rows={len(ordered)} windows={seen}")
    return TransitionModel(ordered, alpha, len(keys) + 1)


def rare_transition_score(graph: TemporalCorrelationGraph, model: Optional[TransitionModel]) -> float:
    """Mean surprisal in bits of the window's edges under the model."""
    if model is None or not model.fitted:
        raise UnfittedModel("transition model has not been fitted")
    if not graph.edges:
        return 0.0
    total = sum(-math.log2(model.probability(u, v)) for (u, v) in sorted(graph.edges))
    return total / len(graph.edges)


def _burstiness(events: Sequence[EventRecord]) -> float:
    if len(events) < 3:
        return 0.0
    gaps = np.diff([e.ts for e in events])
    mean = gaps.mean()
    if mean <= 0:
        return 0.0
    return float(gaps.std() / mean)


def feature_vector(graph: TemporalCorrelationGraph, events: Sequence[EventRecord],
                   model: Optional[TransitionModel] = None,
                   entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD) -> FeatureVector:
    """Embed one window; without a transition model the rare-transition slot is 0."""
    if len(events) <= 1:
        return FeatureVector(node_count=float(len(graph.nodes)))

    n_edges = len(graph.edges)
    global_cc, local_cc = clustering(graph)
    ranks = sorted(pagerank(graph).values(), reverse=True)
    top3 = min(1.0, sum(ranks[:3]))
    total_weight = graph.total_weight()

    reads = writes = renames = high = 0
    for e in events:
        if e.op is OperationKind.FILE_READ:
            reads += 1
        elif e.op is OperationKind.FILE_WRITE:
            writes += 1
            if e.entropy >= entropy_threshold:
                high += 1
        elif e.op is OperationKind.FILE_RENAME:
            renames += 1
    length = graph.duration

    return FeatureVector(
        node_count=float(len(graph.nodes)),
        edge_count=float(n_edges),
        edge_density=edge_density(graph),
        global_clustering=global_cc,
        mean_local_clustering=local_cc,
        diameter=float(diameter(graph)),
        max_out_strength=max_out_strength(graph),
        top3_pagerank_mass=top3,
        mean_edge_weight=total_weight / n_edges if n_edges else 0.0,
        write_read_ratio=writes / max(reads, 1),
        high_entropy_write_fraction=high / writes if writes else 0.0,
        rename_rate=renames / length,
        burstiness=_burstiness(events),
        rare_transition_score=rare_transition_score(graph, model) if model is not None else 0.0,
        unique_targets_per_second=len({e.target for e in events}) / length,
    )


@dataclass(frozen=True)
class Normalizer:
    mean: Tuple[float, ...]
    std: Tuple[float, ...]

    def apply(self, vector: Union[Sequence[float], np.ndarray]) -> np.ndarray:
        return (np.asarray(vector, dtype=float) - np.asarray(self.mean)) / np.asarray(self.std)

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        return (np.asarray(matrix, dtype=float) - np.asarray(self.mean)) / np.asarray(self.std)


def column_stats(matrix: np.ndarray) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    """Column means and population sigma, floored."""
    mean = matrix.mean(axis=0)
    std = np.maximum(matrix.std(axis=0), SIGMA_FLOOR)
    return tuple(float(x) for x in mean), tuple(float(x) for x in std)


def fit_normalizer(vectors: Sequence[Sequence[float]]) -> Normalizer:
    if len(vectors) < 2:
        raise InsufficientData(f"normalizer needs >= 2 vectors, got {len(vectors)}")
    mean, std = column_stats(np.asarray(vectors, dtype=float))
    return Normalizer(mean, std)


def apply_normalizer(norm: Normalizer, vector: Sequence[float]) -> np.ndarray:
    return norm.apply(vector)


def write_feature_csv(path, vectors: Iterable[FeatureVector]) -> int:
    """One row per window under the fixed 15-column header."""
    rows = 0
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(FEATURE_NAMES)
        for vector in vectors:
            writer.writerow([repr(float(x)) for x in vector])
            rows += 1
    return rows


def read_feature_csv(path) -> List[FeatureVector]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != FEATURE_NAMES:
            raise LayoutMismatch(f"{path}: unexpected feature header")
        return [FeatureVector(*(float(x) for x in row)) for row in reader if row]
