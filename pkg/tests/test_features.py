import itertools
import math
import pytest
import numpy as np
from collections import deque

from tcg_detector.features import (
    FEATURE_COUNT,
    FEATURE_NAMES,
    LAYOUT_VERSION,
    PROBABILITY_FLOOR,
    FeatureVector,
    check_layout,
    clustering,
    diameter,
    edge_density,
    feature_vector,
    apply_normalizer,
    fit_normalizer,
    fit_transition_model,
    max_out_strength,
    pagerank,
    rare_transition_score,
    read_feature_csv,
    write_feature_csv,
)
from tcg_detector.graph import EdgeAttr, GraphParams, NodeAttr, NodeKey, TemporalCorrelationGraph, build_graph
from tcg_detector.types import (
    InsufficientData,
    LayoutMismatch,
    NonConvergence,
    OperationKind,
    TargetClass,
    UnfittedModel,
)


def key(i):
    return NodeKey(i, OperationKind.FILE_READ, TargetClass.USER_DOC)


def random_digraph(seed, max_nodes=12):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, max_nodes + 1))
    p = float(rng.uniform(0.05, 0.6))
    nodes = {key(i): NodeAttr(1, 0.0, 0.0, 0) for i in range(n)}
    edges = {}
    for i, j in itertools.permutations(range(n), 2):
        if rng.uniform() < p:
            edges[(key(i), key(j))] = EdgeAttr(float(rng.uniform(0.05, 3.0)), 1, 0.5, 0.5)
    return TemporalCorrelationGraph(0.0, 40.0, nodes, edges)


def neighbours(graph):
    adj = {k: set() for k in graph.nodes}
    for u, v in graph.edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj


def brute_clustering(graph):
    adj = neighbours(graph)
    if not adj:
        return 0.0, 0.0
    triangles = sum(1 for a, b, c in itertools.combinations(sorted(adj), 3)
                    if b in adj[a] and c in adj[a] and c in adj[b])
    triples = sum(len(s) * (len(s) - 1) // 2 for s in adj.values())
    global_cc = 3 * triangles / triples if triples else 0.0
    local = []
    for v, s in adj.items():
        if len(s) < 2:
            local.append(0.0)
            continue
        links = sum(1 for a, b in itertools.combinations(s, 2) if b in adj[a])
        local.append(links / (len(s) * (len(s) - 1) / 2))
    return global_cc, sum(local) / len(local)


def bfs(adj, source):
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def brute_diameter(graph):
    adj = neighbours(graph)
    if len(adj) <= 1:
        return 0
    components = []
    seen = set()
    for v in sorted(adj):
        if v not in seen:
            comp = set(bfs(adj, v))
            seen |= comp
            components.append(comp)
    largest = min(components, key=lambda c: (-len(c), min(c)))
    return max(max(bfs(adj, v).values()) for v in largest)


def dense_pagerank(graph, damping=0.85):
    keys = graph.sorted_nodes()
    n = len(keys)
    index = {k: i for i, k in enumerate(keys)}
    m = np.zeros((n, n))
    for (u, v), attr in graph.edges.items():
        m[index[u], index[v]] = attr.weight
    for i in range(n):
        total = m[i].sum()
        m[i] = m[i] / total if total > 0 else np.full(n, 1.0 / n)
    rank = np.linalg.solve(np.eye(n) - damping * m.T, np.full(n, (1.0 - damping) / n))
    return {k: rank[i] / rank.sum() for i, k in enumerate(keys)}


@pytest.mark.parametrize('seed', range(100))
def test_metrics_match_brute_force(seed):
    g = random_digraph(seed)
    n = len(g.nodes)
    assert edge_density(g) == (len(g.edges) / (n * (n - 1)) if n > 1 else 0.0)
    global_cc, local_cc = clustering(g)
    expected_global, expected_local = brute_clustering(g)
    assert global_cc == pytest.approx(expected_global, abs=1e-12)
    assert local_cc == pytest.approx(expected_local, abs=1e-12)
    assert diameter(g) == brute_diameter(g)
    if n:
        ranks = pagerank(g)
        oracle = dense_pagerank(g)
        assert max(abs(ranks[k] - oracle[k]) for k in g.nodes) <= 1e-6
        assert sum(ranks.values()) == pytest.approx(1.0, abs=1e-9)


def test_empty_graph_metrics():
    g = TemporalCorrelationGraph(0.0, 40.0)
    assert edge_density(g) == 0.0
    assert clustering(g) == (0.0, 0.0)
    assert diameter(g) == 0
    assert pagerank(g) == {}
    assert max_out_strength(g) == 0.0


def test_pagerank_warns_without_convergence():
    nodes = {key(i): NodeAttr(1, 0.0, 0.0, 0) for i in range(3)}
    edges = {(key(0), key(1)): EdgeAttr(1.0, 1, 0.1, 0.1), (key(1), key(2)): EdgeAttr(1.0, 1, 0.1, 0.1)}
    g = TemporalCorrelationGraph(0.0, 40.0, nodes, edges)
    with pytest.warns(NonConvergence):
        ranks = pagerank(g, max_iter=1)
    assert sum(ranks.values()) == pytest.approx(1.0)


@pytest.fixture
def chain_events(event):
    return [
        event(1.0, seq=0, pid=1, target='C:/Users/user/Documents/a.docx'),
        event(1.5, seq=1, pid=1, op=OperationKind.FILE_WRITE, target='C:/Users/user/Documents/a.docx', entropy=7.8),
        event(2.0, seq=2, pid=1, op=OperationKind.FILE_RENAME, target='C:/Users/user/Documents/a.docx'),
        event(4.0, seq=3, pid=1, op=OperationKind.FILE_WRITE, target='C:/Users/user/Documents/b.docx', entropy=3.0),
    ]


def test_feature_vector_by_hand(chain_events):
    g = build_graph(chain_events, 0.0, 40.0, GraphParams())
    f = feature_vector(g, chain_events)
    weights = [math.exp(-0.5), math.exp(-1.0), math.exp(-0.5), math.exp(-2.0)]
    assert f.node_count == 3
    assert f.edge_count == 4
    assert f.edge_density == pytest.approx(4 / 6)
    assert f.global_clustering == pytest.approx(1.0)
    assert f.mean_local_clustering == pytest.approx(1.0)
    assert f.diameter == 1
    assert f.max_out_strength == pytest.approx((weights[0] + weights[1]) / sum(weights))
    assert f.top3_pagerank_mass == pytest.approx(1.0)
    assert f.mean_edge_weight == pytest.approx(sum(weights) / 4)
    assert f.write_read_ratio == 2.0
    assert f.high_entropy_write_fraction == 0.5
    assert f.rename_rate == pytest.approx(1 / 40)
    assert f.burstiness == pytest.approx(math.sqrt(0.5))
    assert f.rare_transition_score == 0.0
    assert f.unique_targets_per_second == pytest.approx(2 / 40)
    assert f.as_array().shape == (FEATURE_COUNT,)


def test_tiny_windows_only_count_nodes(event):
    g = build_graph([event(1.0)], 0.0, 40.0, GraphParams())
    assert feature_vector(g, [event(1.0)]) == FeatureVector(node_count=1.0)
    empty = build_graph([], 0.0, 40.0, GraphParams())
    assert feature_vector(empty, []) == FeatureVector()


def test_rare_transitions(chain_events, event):
    params = GraphParams()
    g = build_graph(chain_events, 0.0, 40.0, params)
    model = fit_transition_model([g], alpha=1.0)
    assert model.vocab_size == 4
    familiar = rare_transition_score(g, model)
    odd = build_graph([event(1.0, seq=0, pid=1, op=OperationKind.FILE_RENAME),
                       event(1.2, seq=1, pid=1, op=OperationKind.FILE_READ)], 0.0, 40.0, params)
    assert rare_transition_score(odd, model) > familiar
    strict = fit_transition_model([g], alpha=0.0)
    assert strict.probability(key(1), key(2)) == PROBABILITY_FLOOR
    assert rare_transition_score(odd, strict) == pytest.approx(64.0)
    assert feature_vector(g, chain_events, model).rare_transition_score == pytest.approx(familiar)


def test_transition_model_errors(chain_events):
    g = build_graph(chain_events, 0.0, 40.0, GraphParams())
    with pytest.raises(InsufficientData):
        fit_transition_model([])
    with pytest.raises(UnfittedModel):
        rare_transition_score(g, None)


def test_normalizer_floors_constant_columns():
    vectors = [FeatureVector(node_count=float(i), edge_count=5.0) for i in range(4)]
    norm = fit_normalizer(vectors)
    z = norm.transform(np.asarray(vectors))
    assert np.all(np.isfinite(z))
    assert z[:, 0].mean() == pytest.approx(0.0)
    assert z[:, 0].std() == pytest.approx(1.0)
    assert np.all(z[:, 1] == 0.0)
    assert np.allclose(apply_normalizer(norm, vectors[2]), z[2])
    with pytest.raises(InsufficientData):
        fit_normalizer(vectors[:1])


def test_feature_csv(tmp_path, chain_events):
    g = build_graph(chain_events, 0.0, 40.0, GraphParams())
    vectors = [feature_vector(g, chain_events), FeatureVector()]
    path = tmp_path / 'features.csv'
    assert write_feature_csv(path, vectors) == 2
    assert path.read_text().splitlines()[0] == ','.join(FEATURE_NAMES)
    assert read_feature_csv(path) == vectors
    path.write_text('a,b\n1,2\n')
    with pytest.raises(LayoutMismatch):
        read_feature_csv(path)


def test_layout_check():
    check_layout(LAYOUT_VERSION)
    with pytest.raises(LayoutMismatch):
        check_layout(LAYOUT_VERSION + 1)
