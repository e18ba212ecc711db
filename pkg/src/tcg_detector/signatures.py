"""Declarative behavior-chain signatures and a backtracking subgraph matcher."""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import networkx as nx

from .documents import document_to_text, fmt_float, new_document, parse_document
from .graph import NodeKey, TemporalCorrelationGraph
from .types import DetectorError, MalformedSignature, OperationKind, TargetClass

logger = logging.getLogger(__name__)

SIGNATURE_FORMAT_VERSION = 1
WILDCARD = '*'
DEFAULT_MATCH_LIMIT = 64


@dataclass(frozen=True)
class PatternNode:
    local_id: str
    op: OperationKind
    target_class: Optional[TargetClass] = None  # None matches any class
    min_count: int = 1
    min_entropy: Optional[float] = None

    def accepts(self, key: NodeKey, graph: TemporalCorrelationGraph) -> bool:
        if key.op is not self.op:
            return False
        if self.target_class is not None and key.target_class is not self.target_class:
            return False
        attr = graph.nodes[key]
        if attr.count < self.min_count:
            return False
        return self.min_entropy is None or attr.mean_entropy >= self.min_entropy


@dataclass(frozen=True)
class PatternEdge:
    src: str
    dst: str
    max_mean_gap: Optional[float] = None


@dataclass(frozen=True)
class SignaturePattern:
    name: str
    nodes: Tuple[PatternNode, ...]
    edges: Tuple[PatternEdge, ...] = ()

    def node(self, local_id: str) -> PatternNode:
        for node in self.nodes:
            if node.local_id == local_id:
                return node
        raise KeyError(local_id)


@dataclass(frozen=True)
class Match:
    signature: str
    assignment: Tuple[Tuple[str, NodeKey], ...]

    @property
    def mapping(self) -> Dict[str, NodeKey]:
        return dict(self.assignment)


def validate_pattern(pattern: SignaturePattern) -> SignaturePattern:
    if not pattern.name:
        raise MalformedSignature("signature has no name")
    if not pattern.nodes:
        raise MalformedSignature(f"{pattern.name}: pattern has no nodes")
    ids = [n.local_id for n in pattern.nodes]
    if len(set(ids)) != len(ids):
        raise MalformedSignature(f"{pattern.name}: duplicate node id")
    for node in pattern.nodes:
        if node.min_count < 1:
            raise MalformedSignature(f"{pattern.name}: node {node.local_id} min_count must be >= 1")
    known = set(ids)
    for edge in pattern.edges:
        if edge.src not in known or edge.dst not in known:
            raise MalformedSignature(f"{pattern.name}: dangling edge {edge.src} -> {edge.dst}")
        if edge.src == edge.dst:
            raise MalformedSignature(f"{pattern.name}: self-loop on {edge.src}")
    shape = nx.DiGraph()
    shape.add_nodes_from(ids)
    shape.add_edges_from((e.src, e.dst) for e in pattern.edges)
    if not nx.is_weakly_connected(shape):
        raise MalformedSignature(f"{pattern.name}: pattern is disconnected")
    return pattern


def _optional_float(value: Optional[str], what: str) -> Optional[float]:
    if value is None or not value.strip():
        return None
    try:
        return float(value)
    except ValueError:
        raise MalformedSignature(f"bad number for {what}: {value!r}")


def parse_signature(text: str, source: str = '<signature>') -> SignaturePattern:
    doc = parse_document(text, source, MalformedSignature)
    if not doc.has_section('signature'):
        raise MalformedSignature(f"{source}: missing [signature] section")
    header = doc['signature']
    version = header.get('format_version', str(SIGNATURE_FORMAT_VERSION))
    if version.strip() != str(SIGNATURE_FORMAT_VERSION):
        raise MalformedSignature(f"{source}: unsupported format_version {version}")

    nodes = []
    edges = []
    for section in doc.sections():
        body = doc[section]
        if section.startswith('node.'):
            local_id = section[len('node.'):]
            try:
                op = OperationKind(body['op'].strip())
                cls_token = body.get('class', WILDCARD).strip()
                target_class = None if cls_token == WILDCARD else TargetClass(cls_token)
                min_count = int(body.get('min_count', '1'))
            except (KeyError, ValueError) as e:
                raise MalformedSignature(f"{source}: bad [{section}]: {e}")
            nodes.append(PatternNode(local_id, op, target_class, min_count,
                                     _optional_float(body.get('min_entropy'), f"[{section}] min_entropy")))
        elif section.startswith('edge.'):
            try:
                edges.append(PatternEdge(body['from'].strip(), body['to'].strip(),
                                         _optional_float(body.get('max_mean_gap'), f"[{section}] max_mean_gap")))
            except KeyError as e:
                raise MalformedSignature(f"{source}: [{section}] missing {e}")
        elif section != 'signature':
            raise MalformedSignature(f"{source}: unexpected section [{section}]")

    return validate_pattern(SignaturePattern(header.get('name', '').strip(), tuple(nodes), tuple(edges)))


def serialize_signature(pattern: SignaturePattern) -> str:
    doc = new_document()
    doc['signature'] = {'name': pattern.name, 'format_version': str(SIGNATURE_FORMAT_VERSION)}
    for node in pattern.nodes:
        body = {
            'op': node.op.value,
            'class': node.target_class.value if node.target_class else WILDCARD,
            'min_count': str(node.min_count),
        }
        if node.min_entropy is not None:
            body['min_entropy'] = fmt_float(node.min_entropy)
        doc[f'node.{node.local_id}'] = body
    for i, edge in enumerate(pattern.edges):
        body = {'from': edge.src, 'to': edge.dst}
        if edge.max_mean_gap is not None:
            body['max_mean_gap'] = fmt_float(edge.max_mean_gap)
        doc[f'edge.{i}'] = body
    return document_to_text(doc)


def _edge_ok(graph: TemporalCorrelationGraph, u: NodeKey, v: NodeKey, edge: PatternEdge) -> bool:
    attr = graph.edges.get((u, v))
    if attr is None:
        return False
    return edge.max_mean_gap is None or attr.mean_gap <= edge.max_mean_gap


def verify_match(graph: TemporalCorrelationGraph, pattern: SignaturePattern, match: Match) -> bool:
    """Independent re-check of every node and edge constraint."""
    mapping = match.mapping
    if len(set(mapping.values())) != len(mapping) or set(mapping) != {n.local_id for n in pattern.nodes}:
        return False
    for node in pattern.nodes:
        key = mapping[node.local_id]
        if key not in graph.nodes or not node.accepts(key, graph):
            return False
    return all(_edge_ok(graph, mapping[e.src], mapping[e.dst], e) for e in pattern.edges)


class _Matcher:
    """Backtracking monomorphism search, most-constrained variable first."""

    def __init__(self, graph: TemporalCorrelationGraph, pattern: SignaturePattern, limit: int):
        self.graph = graph
        self.pattern = pattern
        self.limit = limit
        self.order = [n.local_id for n in pattern.nodes]
        self.candidates = {
            n.local_id: [k for k in graph.sorted_nodes() if n.accepts(k, graph)] for n in pattern.nodes
        }
        self.incident: Dict[str, List[PatternEdge]] = {i: [] for i in self.order}
        for edge in pattern.edges:
            self.incident[edge.src].append(edge)
            self.incident[edge.dst].append(edge)
        self.assigned: Dict[str, NodeKey] = {}
        self.used = set()
        self.matches: List[Match] = []

    def _consistent(self, local_id: str, key: NodeKey) -> bool:
        for edge in self.incident[local_id]:
            u = key if edge.src == local_id else self.assigned.get(edge.src)
            v = key if edge.dst == local_id else self.assigned.get(edge.dst)
            if u is None or v is None:
                continue
            if not _edge_ok(self.graph, u, v, edge):
                return False
        return True

    def _options(self, local_id: str) -> List[NodeKey]:
        return [k for k in self.candidates[local_id] if k not in self.used and self._consistent(local_id, k)]

    def run(self) -> List[Match]:
        self._search()
        return self.matches

    def _search(self) -> bool:
        if len(self.assigned) == len(self.order):
            assignment = tuple((i, self.assigned[i]) for i in self.order)
            self.matches.append(Match(self.pattern.name, assignment))
            return len(self.matches) >= self.limit

        best_id, best_options = None, None
        for local_id in self.order:
            if local_id in self.assigned:
                continue
            options = self._options(local_id)
            if best_options is None or len(options) < len(best_options):
                best_id, best_options = local_id, options
            if not options:
                return False

        for key in best_options:
            self.assigned[best_id] = key
            self.used.add(key)
            done = self._search()
            del self.assigned[best_id]
            self.used.discard(key)
            if done:
                return True
        return False


def match_signature(graph: TemporalCorrelationGraph, pattern: SignaturePattern,
                    limit: int = DEFAULT_MATCH_LIMIT) -> List[Match]:
    """Up to limit non-induced injective matches, in deterministic order."""
    if limit < 1 or len(pattern.nodes) > len(graph.nodes):
        return []
    return _Matcher(graph, pattern, limit).run()


ENCRYPT_CHAIN = """\
[signature]
name = encrypt_chain
format_version = 1

[node.read]
op = FILE_READ
class = USER_DOC
min_count = 1

[node.write]
op = FILE_WRITE
class = USER_DOC
min_count = 1
min_entropy = 6.0

[node.rename]
op = FILE_RENAME
class = USER_DOC
min_count = 1

[edge.0]
from = read
to = write
max_mean_gap = 2.0

[edge.1]
from = write
to = rename
max_mean_gap = 2.0
"""

BEACON_THEN_BURST = """\
[signature]
name = beacon_then_burst
format_version = 1

[node.beacon]
op = NET_CONNECT
class = NETWORK_HOST
min_count = 1

[node.write]
op = FILE_WRITE
class = USER_DOC
min_count = 1
min_entropy = 6.0

[edge.0]
from = beacon
to = write
"""


def builtin_signatures() -> List[SignaturePattern]:
    return [parse_signature(ENCRYPT_CHAIN, 'builtin:encrypt_chain'),
            parse_signature(BEACON_THEN_BURST, 'builtin:beacon_then_burst')]


def load_signature_dir(directory: Union[str, Path]) -> Tuple[List[SignaturePattern], List[str]]:
    """Parse every *.ini in a directory; malformed files are reported and skipped."""
    patterns, errors = [], []
    path = Path(directory)
    if not path.is_dir():
        logger.warning(f"Signature directory not found: {path}")
        return patterns, errors
    for file_path in sorted(path.glob('*.ini')):
        try:
            patterns.append(parse_signature(file_path.read_text(encoding='utf-8'), str(file_path)))
        except (DetectorError, OSError) as e:
            logger.warning(f"Skipping signature {file_path}: {e}")
            errors.append(f"{file_path}: {e}")
    logger.info(f"Loaded {len(patterns)} signature(s) from {path}")
    return patterns, errors


def resolve_signatures(directory: Optional[Union[str, Path]]) -> List[SignaturePattern]:
    """Signatures from a directory, or the builtin set when none is configured."""
    if directory is None:
        return builtin_signatures()
    patterns, _ = load_signature_dir(directory)
    return patterns


def signature_hits(graph: TemporalCorrelationGraph, patterns: Sequence[SignaturePattern],
                   limit: int = DEFAULT_MATCH_LIMIT) -> Tuple[str, ...]:
    """Names of the patterns with at least one match, in pattern order."""
    return tuple(p.name for p in patterns if match_signature(graph, p, limit))
