import math
import statistics
import time
from dataclasses import replace

import numpy as np
import pytest

from tcg_detector.config import PipelineConfig
from tcg_detector.detection import WindowAnalyzer, anomaly_score, calibrate_threshold, fit_baseline, save_model
from tcg_detector.evaluation import (
    analyze_trace,
    confusion_from_labels,
    detection_latency,
    precision,
    quality_failures,
    rate_failures,
    sweep_speeds,
    sweep_windows,
    window_trend_failures,
)
from tcg_detector.features import feature_vector, fit_normalizer, fit_transition_model, rare_transition_score
from tcg_detector.graph import GraphParams, build_graph, windows
from tcg_detector.parser import write_trace
from tcg_detector.pipeline import run_detect
from tcg_detector.signatures import builtin_signatures, match_signature
from tcg_detector.simgen import SPEED_GRID, BenignProfile, RansomwareProfile, gen_benign, gen_ransomware, merge_traces
from tcg_detector.training import complete_windows, simulate_from_config, train_model


@pytest.fixture(scope='module')
def acceptance():
    """Default config, seed 1: 60 episodes, roughly 300 benign and 300 ransomware windows."""
    config = PipelineConfig()
    events, truth = simulate_from_config(config)
    return config, events, truth, train_model(events, truth, config)


def held_out_counts(result):
    return confusion_from_labels((r.verdict.is_ransomware for r in result.test_results), result.test_labels)


def window_graphs(events, params, duration):
    return [(build_graph(w.events, w.start, w.end, params), w) for w in complete_windows(events, params, duration)]


def whole_graph(events, params, end):
    return build_graph([e for e in events if e.ts < end], 0.0, end, params)


def encrypt_chain():
    return next(p for p in builtin_signatures() if p.name == 'encrypt_chain')


@pytest.mark.slow
def test_detection_quality_on_default_corpus(acceptance):
    _, _, _, result = acceptance
    assert len(result.labels) >= 590
    assert min(result.labels.count(0), result.labels.count(1)) >= 250
    assert quality_failures(held_out_counts(result)) == []


@pytest.mark.slow
def test_mean_precision_over_seeds(acceptance):
    config, _, _, first = acceptance
    precisions = [precision(held_out_counts(first))]
    for seed in range(2, 6):
        seeded = replace(config, seed=seed)
        events, truth = simulate_from_config(seeded)
        precisions.append(precision(held_out_counts(train_model(events, truth, seeded))))
    assert statistics.fmean(precisions) >= 0.92


@pytest.mark.slow
def test_training_loss_never_rises(acceptance):
    _, _, _, result = acceptance
    history = result.loss_history
    assert len(history) == 501
    assert all(b <= a for a, b in zip(history, history[1:]))
    assert history[-1] < history[0]


@pytest.mark.slow
def test_window_size_trend():
    rows = sweep_windows(PipelineConfig(), seeds=range(1, 6), workers=4)
    assert [r.size for r in rows] == [10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
    assert window_trend_failures(rows) == []
    assert all(r.seeds == 5 and r.accuracy_std <= 0.05 for r in rows)


@pytest.mark.slow
def test_speed_sweep_detection_rate(acceptance):
    config, _, _, result = acceptance
    rows = sweep_speeds(config, model=result.model, workers=4)
    assert [r.value for r in rows] == list(SPEED_GRID)
    assert all(r.episodes == 20 for r in rows)
    assert rate_failures(rows) == []


@pytest.mark.slow
def test_detection_latency_bound(acceptance):
    config, events, truth, result = acceptance
    params = result.model.params
    assert (params.window, params.stride) == (40.0, 20.0)
    stats = detection_latency(analyze_trace(result.model, events), truth, params.window)
    assert stats.detected > 0
    assert stats.mean <= params.window + params.delta + 1.0


@pytest.mark.slow
def test_window_processing_time_at_1000_events(acceptance):
    _, _, _, result = acceptance
    events = gen_benign(BenignProfile(n_processes=4, event_rate=6.25, duration=200.0), seed=11)
    busy = [w for w in windows(events, result.model.params) if len(w.events) >= 900]
    assert len(busy) >= 5
    analyzer = WindowAnalyzer(result.model, builtin_signatures())
    timings = []
    for w in busy:
        start = time.perf_counter()
        analyzer.analyze(w)
        timings.append(time.perf_counter() - start)
    assert statistics.fmean(timings) <= 0.1


@pytest.mark.slow
def test_stream_throughput(acceptance, tmp_path):
    config, events, _, result = acceptance
    trace = tmp_path / 'acceptance.jsonl'
    write_trace(trace, events)
    model_path = tmp_path / 'model.ini'
    save_model(model_path, result.model)
    start = time.perf_counter()
    stats = run_detect(replace(config, mode='stream'), model_path, trace, tmp_path / 'alerts.jsonl')
    elapsed = time.perf_counter() - start
    assert stats.events == len(events)
    assert stats.events / elapsed * 60.0 >= 50_000


@pytest.mark.slow
def test_graph_build_scales_linearly():
    params = GraphParams()
    timings = {}
    for duration in (500.0, 2000.0):
        events = gen_benign(BenignProfile(duration=duration), seed=2)
        best = math.inf
        for _ in range(3):
            start = time.perf_counter()
            whole_graph(events, params, duration)
            best = min(best, time.perf_counter() - start)
        timings[duration] = (len(events), best)
    (n_short, t_short), (n_long, t_long) = timings[500.0], timings[2000.0]
    # quadratic growth would be 16x for 4x the events
    assert t_long / t_short <= 2.0 * n_long / n_short


@pytest.mark.slow
def test_benign_arrivals_are_poisson():
    profile = BenignProfile(n_processes=1, event_rate=5.0, duration=600.0)
    counts = [len(gen_benign(profile, seed)) for seed in range(20)]
    sigma = math.sqrt(3000.0)
    assert all(abs(n - 3000) <= 3 * sigma for n in counts)
    assert abs(statistics.fmean(counts) - 3000) <= 3 * sigma / math.sqrt(len(counts))


@pytest.mark.slow
def test_encrypt_chain_rarely_matches_benign_windows():
    params = GraphParams()
    pattern = encrypt_chain()
    matched = 0
    for seed in range(30):
        events = gen_benign(BenignProfile(duration=params.window), seed)
        if match_signature(whole_graph(events, params, params.window), pattern):
            matched += 1
    assert matched / 30 <= 0.1


@pytest.mark.slow
@pytest.mark.parametrize('seed', [1, 2, 3])
def test_encrypt_chain_matches_ransomware_window(seed):
    params = GraphParams()
    events = gen_ransomware(RansomwareProfile(encryption_speed=5.2, target_count=20, onset=5.0), seed)
    assert match_signature(whole_graph(events, params, params.window), encrypt_chain())


@pytest.mark.slow
def test_rare_transition_score_separates_over_seeds():
    params = GraphParams()
    benign_scores, ransomware_scores = [], []
    for seed in range(30):
        history = gen_benign(BenignProfile(duration=400.0), seed)
        transitions = fit_transition_model(g for g, _ in window_graphs(history, params, 400.0))
        background = gen_benign(BenignProfile(duration=params.window), seed + 1000)
        attack = gen_ransomware(RansomwareProfile(onset=5.0, target_count=30), seed)
        mixed, _ = merge_traces([(background, []), (attack, [])])
        benign_scores.append(rare_transition_score(whole_graph(background, params, params.window), transitions))
        ransomware_scores.append(rare_transition_score(whole_graph(mixed, params, params.window), transitions))
    assert statistics.fmean(ransomware_scores) > statistics.fmean(benign_scores)
    assert sum(r > b for r, b in zip(ransomware_scores, benign_scores)) >= 25


@pytest.mark.slow
def test_calibrated_threshold_holds_on_fresh_benign_draws():
    params = GraphParams()
    duration = 800.0
    profile = BenignProfile(duration=duration)
    rates = []
    for seed in range(30):
        train = window_graphs(gen_benign(profile, seed), params, duration)
        transitions = fit_transition_model(g for g, _ in train)

        def vectors(s):
            return np.asarray([feature_vector(g, w.events, transitions)
                               for g, w in window_graphs(gen_benign(profile, s), params, duration)], dtype=float)

        raw = vectors(seed)
        normalizer = fit_normalizer(raw)
        baseline = fit_baseline(normalizer.transform(raw))
        threshold = calibrate_threshold(baseline, normalizer.transform(vectors(seed + 1000)), 0.05)
        fresh = normalizer.transform(vectors(seed + 2000))
        rates.append(sum(anomaly_score(baseline, v) >= threshold for v in fresh) / len(fresh))
    assert statistics.fmean(rates) <= 0.08
