"""Temporal-Correlation Graphs over sliding windows of aligned events."""
from bisect import bisect_left
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Deque, Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import logging
import math

import networkx as nx

from .documents import (
    document_to_text,
    fmt_float,
    get_float,
    get_int,
    new_document,
    parse_document,
    sections_with_prefix,
)
from .parser import classify_target
from .types import (
    EventRecord,
    InvalidSmoothing,
    InvalidVocab,
    DetectorError,
    OperationKind,
    OutOfOrderEvent,
    TargetClass,
    UnknownNode,
    WindowMismatch,
)

logger = logging.getLogger(__name__)

SNAPSHOT_FORMAT_VERSION = 1


class NodeKey(NamedTuple):
    pid: int
    op: OperationKind
    target_class: TargetClass

    def label(self) -> str:
        return f"{self.pid}/{self.op.value}/{self.target_class.value}"

    @classmethod
    def from_label(cls, text: str) -> 'NodeKey':
        try:
            pid, op, target_class = text.strip().split('/')
            return cls(int(pid), OperationKind(op), TargetClass(target_class))
        except ValueError as e:
            raise DetectorError(f"bad node key {text!r}: {e}")


@lru_cache(maxsize=65536)
def _target_class(op: OperationKind, target: str) -> TargetClass:
    return classify_target(op, target)


def node_key(event: EventRecord) -> NodeKey:
    return NodeKey(event.pid, event.op, _target_class(event.op, event.target))


@dataclass(frozen=True)
class GraphParams:
    delta: float = 2.0
    tau: float = 1.0
    window: float = 40.0
    stride: Optional[float] = None

    def __post_init__(self) -> None:
        if self.stride is None:
            object.__setattr__(self, 'stride', self.window / 2.0)
        if not self.delta > 0:
            raise DetectorError(f"delta must be > 0, got {self.delta}")
        if not self.tau > 0:
            raise DetectorError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.stride <= self.window:
            raise DetectorError(f"stride must satisfy 0 < stride <= window, got {self.stride}")


@dataclass(frozen=True)
class NodeAttr:
    count: int
    first_ts: float
    last_ts: float
    total_bytes: int
    entropy_sum: float = 0.0
    write_count: int = 0

    @property
    def mean_entropy(self) -> float:
        return self.entropy_sum / self.write_count if self.write_count else 0.0


@dataclass(frozen=True)
class EdgeAttr:
    weight: float
    count: int
    total_gap: float
    min_gap: float

    @property
    def mean_gap(self) -> float:
        return self.total_gap / self.count


Edge = Tuple[NodeKey, NodeKey]


@dataclass(frozen=True)
class TemporalCorrelationGraph:
    """Immutable window graph; maps are read-only views."""
    window_start: float
    window_end: float
    nodes: Mapping[NodeKey, NodeAttr] = field(default_factory=dict)
    edges: Mapping[Edge, EdgeAttr] = field(default_factory=dict)
    event_count: int = 0
    params: GraphParams = field(default_factory=GraphParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, 'nodes', MappingProxyType(dict(self.nodes)))
        object.__setattr__(self, 'edges', MappingProxyType(dict(self.edges)))

    @property
    def duration(self) -> float:
        return self.window_end - self.window_start

    def sorted_nodes(self) -> List[NodeKey]:
        return sorted(self.nodes)

    def total_weight(self) -> float:
        return sum(attr.weight for attr in self.edges.values())

    def out_strength(self) -> Dict[NodeKey, float]:
        strength = {key: 0.0 for key in self.nodes}
        for (u, _), attr in self.edges.items():
            strength[u] += attr.weight
        return strength


class Window(NamedTuple):
    start: float
    end: float
    events: Tuple[EventRecord, ...]


def window_starts(last_ts: float, params: GraphParams) -> List[float]:
    starts = []
    k = 0
    while k * params.stride <= last_ts:
        starts.append(k * params.stride)
        k += 1
    return starts


def windows(events: Sequence[EventRecord], params: GraphParams) -> List[Window]:
    """Half-open windows [k*stride, k*stride + window) covering [0, last ts]."""
    if not events:
        return []
    stamps = [e.ts for e in events]
    result = []
    for start in window_starts(stamps[-1], params):
        end = start + params.window
        lo = bisect_left(stamps, start)
        hi = bisect_left(stamps, end)
        result.append(Window(start, end, tuple(events[lo:hi])))
    return result


class GraphBuilder:
    """Single-writer incremental construction of one window graph."""

    def __init__(self, start: float, end: float, params: GraphParams):
        if not start < end:
            raise WindowMismatch(f"empty window [{start}, {end})")
        self.start = start
        self.end = end
        self.params = params
        self.event_count = 0
        self._nodes: Dict[NodeKey, NodeAttr] = {}
        self._edges: Dict[Edge, EdgeAttr] = {}
        self._recent: Deque[Tuple[EventRecord, NodeKey]] = deque()
        self._last_ts: Optional[float] = None

    @classmethod
    def resume(cls, graph: TemporalCorrelationGraph,
               recent: Iterable[EventRecord] = ()) -> 'GraphBuilder':
        builder = cls(graph.window_start, graph.window_end, graph.params)
        builder._nodes = dict(graph.nodes)
        builder._edges = dict(graph.edges)
        builder.event_count = graph.event_count
        builder._recent = deque((e, node_key(e)) for e in recent)
        if graph.nodes:
            builder._last_ts = max(attr.last_ts for attr in graph.nodes.values())
        return builder

    @property
    def recent(self) -> Tuple[EventRecord, ...]:
        return tuple(e for e, _ in self._recent)

    def add(self, event: EventRecord) -> None:
        ts = event.ts
        if not self.start <= ts < self.end:
            raise WindowMismatch(f"event at {ts} outside window [{self.start}, {self.end})")
        if self._last_ts is not None and ts < self._last_ts:
            raise OutOfOrderEvent(f"event at {ts} precedes last insert at {self._last_ts}")
        self._last_ts = ts

        delta = self.params.delta
        tau = self.params.tau
        recent = self._recent
        while recent and ts - recent[0][0].ts > delta:
            recent.popleft()

        vkey = node_key(event)
        edges = self._edges
        for prior, ukey in recent:
            gap = ts - prior.ts
            if gap <= 0 or ukey == vkey:
                continue
            if prior.pid != event.pid and prior.target != event.target:
                continue
            increment = math.exp(-gap / tau)
            attr = edges.get((ukey, vkey))
            if attr is None:
                edges[(ukey, vkey)] = EdgeAttr(increment, 1, gap, gap)
            else:
                edges[(ukey, vkey)] = EdgeAttr(attr.weight + increment, attr.count + 1,
                                               attr.total_gap + gap, min(attr.min_gap, gap))
        recent.append((event, vkey))

        is_write = event.op is OperationKind.FILE_WRITE
        node = self._nodes.get(vkey)
        if node is None:
            self._nodes[vkey] = NodeAttr(1, ts, ts, event.bytes,
                                         event.entropy if is_write else 0.0, int(is_write))
        else:
            self._nodes[vkey] = NodeAttr(node.count + 1, node.first_ts, ts, node.total_bytes + event.bytes,
                                         node.entropy_sum + (event.entropy if is_write else 0.0),
                                         node.write_count + int(is_write))
        self.event_count += 1

    def graph(self) -> TemporalCorrelationGraph:
        return TemporalCorrelationGraph(self.start, self.end, self._nodes, self._edges,
                                        self.event_count, self.params)


def build_graph(events: Sequence[EventRecord], start: float, end: float,
                params: GraphParams) -> TemporalCorrelationGraph:
    builder = GraphBuilder(start, end, params)
    for event in events:
        builder.add(event)
    return builder.graph()


def update_graph(graph: TemporalCorrelationGraph, event: EventRecord,
                 recent: Sequence[EventRecord]
                 ) -> Tuple[TemporalCorrelationGraph, Tuple[EventRecord, ...]]:
    """Functional single-event update; returns the new graph and recent buffer."""
    builder = GraphBuilder.resume(graph, recent)
    builder.add(event)
    return builder.graph(), builder.recent


class TransitionRow(NamedTuple):
    successors: Dict[NodeKey, float]
    oov: float


def smoothed_row(counts: Mapping[NodeKey, int], alpha: float, vocab_size: int) -> TransitionRow:
    """Additive smoothing over a vocabulary of vocab_size keys."""
    total = sum(counts.values())
    denom = total + alpha * vocab_size
    if denom <= 0:
        return TransitionRow({}, 1.0)
    successors = {v: (c + alpha) / denom for v, c in counts.items()}
    oov = (vocab_size - len(counts)) * alpha / denom
    return TransitionRow(successors, oov)


def transition_probabilities(graph: TemporalCorrelationGraph, alpha: float,
                             vocab_size: int) -> Dict[NodeKey, TransitionRow]:
    if alpha < 0:
        raise InvalidSmoothing(f"alpha must be >= 0, got {alpha}")
    if vocab_size < 1 or vocab_size < len(graph.nodes):
        raise InvalidVocab(f"vocab size {vocab_size} below node count {len(graph.nodes)}")
    counts: Dict[NodeKey, Dict[NodeKey, int]] = {key: {} for key in graph.nodes}
    for (u, v), attr in graph.edges.items():
        counts[u][v] = attr.count
    rows = {}
    for key in graph.sorted_nodes():
        if not counts[key]:
            rows[key] = TransitionRow({}, 1.0)
        else:
            rows[key] = smoothed_row(counts[key], alpha, vocab_size)
    return rows


def to_networkx(graph: TemporalCorrelationGraph) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(graph.sorted_nodes())
    for (u, v) in sorted(graph.edges):
        g.add_edge(u, v, weight=graph.edges[(u, v)].weight)
    return g


def induced_subgraph(graph: TemporalCorrelationGraph, keys: Iterable[NodeKey]) -> TemporalCorrelationGraph:
    keep = set(keys)
    nodes = {k: graph.nodes[k] for k in sorted(keep)}
    edges = {e: a for e, a in graph.edges.items() if e[0] in keep and e[1] in keep}
    return TemporalCorrelationGraph(graph.window_start, graph.window_end, nodes, edges,
                                    sum(a.count for a in nodes.values()), graph.params)


def extract_component(graph: TemporalCorrelationGraph, seed: NodeKey) -> TemporalCorrelationGraph:
    """Induced subgraph on the weakly connected component holding seed."""
    if seed not in graph.nodes:
        raise UnknownNode(f"{seed} not in graph")
    undirected = to_networkx(graph).to_undirected(as_view=True)
    return induced_subgraph(graph, nx.node_connected_component(undirected, seed))


def to_dot(graph: TemporalCorrelationGraph) -> str:
    header = (f"// temporal correlation graph window [{graph.window_start}, {graph.window_end}) "
              f"nodes={len(graph.nodes)} edges={len(graph.edges)}\n")
    if not graph.nodes:
        return header + "digraph tcg {}\n"
    ids = {key: f"n{i}" for i, key in enumerate(graph.sorted_nodes())}
    lines = [header, "digraph tcg {\n"]
    for key, name in ids.items():
        attr = graph.nodes[key]
        label = f"pid={key.pid}\\n{key.op.value}\\n{key.target_class.value}\\ncount={attr.count}"
        lines.append(f'  {name} [label="{label}"];\n')
    for (u, v) in sorted(graph.edges):
        lines.append(f'  {ids[u]} -> {ids[v]} [label="{graph.edges[(u, v)].weight:.3f}"];\n')
    lines.append("}\n")
    return ''.join(lines)


def graph_to_document(graph: TemporalCorrelationGraph) -> str:
    """Snapshot a window graph as an INI document for retrospective analysis."""
    doc = new_document()
    p = graph.params
    doc['snapshot'] = {
        'format_version': str(SNAPSHOT_FORMAT_VERSION),
        'window_start': fmt_float(graph.window_start),
        'window_end': fmt_float(graph.window_end),
        'event_count': str(graph.event_count),
        'delta': fmt_float(p.delta),
        'tau': fmt_float(p.tau),
        'window': fmt_float(p.window),
        'stride': fmt_float(p.stride),
    }
    keys = graph.sorted_nodes()
    index = {key: i for i, key in enumerate(keys)}
    for i, key in enumerate(keys):
        a = graph.nodes[key]
        doc[f'node.{i}'] = {
            'key': key.label(),
            'count': str(a.count),
            'first_ts': fmt_float(a.first_ts),
            'last_ts': fmt_float(a.last_ts),
            'total_bytes': str(a.total_bytes),
            'entropy_sum': fmt_float(a.entropy_sum),
            'write_count': str(a.write_count),
        }
    for j, (u, v) in enumerate(sorted(graph.edges)):
        a = graph.edges[(u, v)]
        doc[f'edge.{j}'] = {
            'src': str(index[u]),
            'dst': str(index[v]),
            'weight': fmt_float(a.weight),
            'count': str(a.count),
            'total_gap': fmt_float(a.total_gap),
            'min_gap': fmt_float(a.min_gap),
        }
    return document_to_text(doc)


def graph_from_document(text: str, source: str = '<snapshot>') -> TemporalCorrelationGraph:
    doc = parse_document(text, source)
    if get_int(doc, 'snapshot', 'format_version') != SNAPSHOT_FORMAT_VERSION:
        raise DetectorError(f"{source}: unsupported snapshot format version")
    params = GraphParams(get_float(doc, 'snapshot', 'delta'), get_float(doc, 'snapshot', 'tau'),
                         get_float(doc, 'snapshot', 'window'), get_float(doc, 'snapshot', 'stride'))
    keys: List[NodeKey] = []
    nodes = {}
    for section in sorted(sections_with_prefix(doc, 'node.'), key=lambda s: int(s.split('.', 1)[1])):
        key = NodeKey.from_label(doc[section]['key'])
        keys.append(key)
        nodes[key] = NodeAttr(get_int(doc, section, 'count'), get_float(doc, section, 'first_ts'),
                              get_float(doc, section, 'last_ts'), get_int(doc, section, 'total_bytes'),
                              get_float(doc, section, 'entropy_sum'), get_int(doc, section, 'write_count'))

    def endpoint(section: str, field: str) -> NodeKey:
        index = get_int(doc, section, field)
        if not 0 <= index < len(keys):
            raise DetectorError(f"{source}: [{section}] {field} = {index} references a missing node")
        return keys[index]

    edges = {}
    for section in sections_with_prefix(doc, 'edge.'):
        u = endpoint(section, 'src')
        v = endpoint(section, 'dst')
        edges[(u, v)] = EdgeAttr(get_float(doc, section, 'weight'), get_int(doc, section, 'count'),
                                 get_float(doc, section, 'total_gap'), get_float(doc, section, 'min_gap'))
    return TemporalCorrelationGraph(get_float(doc, 'snapshot', 'window_start'),
                                    get_float(doc, 'snapshot', 'window_end'),
                                    nodes, edges, get_int(doc, 'snapshot', 'event_count'), params)
