import pytest
from dataclasses import replace

from tcg_detector.parser import align_events, classify_target, write_ground_truth, write_trace
from tcg_detector.simgen import (
    BACKUP_PROC,
    BEACON_HOST,
    BenignProfile,
    CorpusSettings,
    RandomStream,
    RansomwareProfile,
    benign_trace,
    gen_benign,
    gen_ransomware,
    merge_traces,
    plan_episodes,
    simulate_corpus,
)
from tcg_detector.types import InvalidProfile, LabelInterval, OperationKind, TargetClass


def test_random_stream_is_reproducible():
    a, b = RandomStream(7, 1, 2), RandomStream(7, 1, 2)
    draws = [a.uniform() for _ in range(5000)]
    assert draws == [b.uniform() for _ in range(5000)]
    assert all(0.0 <= u < 1.0 for u in draws)
    assert RandomStream(7, 1, 3).uniform() != draws[0]


def test_random_stream_variates():
    rs = RandomStream(1)
    samples = [rs.exponential(2.0) for _ in range(20000)]
    assert sum(samples) / len(samples) == pytest.approx(0.5, rel=0.05)
    assert all(0 <= rs.index(3) < 3 for _ in range(100))
    with pytest.raises(InvalidProfile):
        RandomStream(-1)


@pytest.mark.parametrize('stream, expected', [
    ((0,), [0.6369616873214543, 0.2697867137638703, 0.04097352393619469, 0.016527635528529094]),
    ((42,), [0.7739560485559633, 0.4388784397520523, 0.8585979199113825, 0.6973680290593639]),
    ((7, 1, 2), [0.9230124616734992, 0.7203569374911785, 0.2663851419363449, 0.5792492134281088]),
    ((2024, 3, 0), [0.8320476417722261, 0.8651181291149086, 0.8967433962786465, 0.9574910924090331]),
])
def test_random_stream_known_answers(stream, expected):
    rs = RandomStream(*stream)
    assert [rs.uniform() for _ in range(4)] == expected


def test_random_stream_derived_known_answers():
    assert RandomStream(7, 1, 2).exponential(2.0) == pytest.approx(1.2820558550707595, rel=1e-12)
    assert RandomStream(7, 1, 2).normal() == pytest.approx(-0.419346036012964, rel=1e-12)
    rs = RandomStream(7, 1, 2)
    assert [rs.index(10), rs.index(10)] == [9, 7]
    shifted = RandomStream(7, 1, 2)
    assert shifted.normal(3.0, 2.0) == pytest.approx(3.0 + 2.0 * -0.419346036012964, rel=1e-12)


def test_benign_trace_shape():
    profile = BenignProfile(duration=120.0)
    events = gen_benign(profile, seed=5)
    assert events == gen_benign(profile, seed=5)
    assert events != gen_benign(profile, seed=6)
    assert [e.seq for e in events] == list(range(len(events)))
    assert align_events(events) == events
    assert all(0 < e.ts <= 120.0 for e in events)
    assert {e.pid for e in events} <= set(range(1000, 1004))
    assert not any(e.proc == BACKUP_PROC for e in events)
    # about event_rate per second per process
    assert 4 * 1.5 * 120 * 0.8 < len(events) < 4 * 1.5 * 120 * 1.2


def test_benign_writes_stay_low_entropy():
    events = gen_benign(BenignProfile(duration=200.0), seed=2)
    writes = [e.entropy for e in events if e.op is OperationKind.FILE_WRITE]
    assert writes
    assert sum(writes) / len(writes) == pytest.approx(4.2, abs=0.3)


def test_backup_bursts():
    events = gen_benign(BenignProfile(duration=600.0, burst_rate=0.05), seed=4)
    backup = [e for e in events if e.proc == BACKUP_PROC]
    assert backup
    assert {e.op for e in backup} == {OperationKind.FILE_READ, OperationKind.FILE_WRITE, OperationKind.FILE_RENAME}
    assert all(e.entropy > 7.0 for e in backup if e.op is OperationKind.FILE_WRITE)


def test_ransomware_chain():
    profile = RansomwareProfile(encryption_speed=5.0, target_count=50, onset=10.0, pid=4242)
    events = gen_ransomware(profile, seed=1)
    assert len(events) == 1 + 3 * 50
    assert events[0].op is OperationKind.NET_CONNECT and events[0].target == BEACON_HOST
    assert all(e.pid == 4242 for e in events)
    writes = [e for e in events if e.op is OperationKind.FILE_WRITE]
    assert all(e.entropy > 7.5 for e in writes)
    assert all(classify_target(e.op, e.target) is TargetClass.USER_DOC for e in writes)
    for w in writes:
        read = next(e for e in events if e.op is OperationKind.FILE_READ and e.target == w.target)
        rename = next(e for e in events if e.op is OperationKind.FILE_RENAME and e.target == w.target)
        assert read.ts < w.ts < rename.ts
    # 50 files at 5 files/s, lognormal jitter around the cadence
    assert events[-1].ts - profile.onset == pytest.approx(10.0, rel=0.25)


def test_no_beacon():
    events = gen_ransomware(RansomwareProfile(target_count=3, beacon=False), seed=1)
    assert len(events) == 9
    assert events[0].op is OperationKind.FILE_READ


@pytest.mark.parametrize('profile', [
    RansomwareProfile(encryption_speed=0.0),
    RansomwareProfile(mean_file_size=-1.0),
    RansomwareProfile(target_count=-1),
    RansomwareProfile(family_label=''),
])
def test_invalid_ransomware_profile(profile):
    with pytest.raises(InvalidProfile):
        gen_ransomware(profile, seed=1)


def test_invalid_benign_profile():
    with pytest.raises(InvalidProfile):
        gen_benign(BenignProfile(write_fraction=1.5), seed=1)
    with pytest.raises(InvalidProfile):
        gen_benign(BenignProfile(n_processes=0), seed=1)


def test_plan_cycles_families():
    profiles = [RansomwareProfile(family_label='a'), RansomwareProfile(family_label='b')]
    plan = plan_episodes(profiles, CorpusSettings(episodes=4, benign_episodes=1), seed=1)
    assert [ep.family for ep in plan] == ['a', 'b', 'a', 'b', 'benign']
    assert plan[-1].profile is None
    for ep in plan[:4]:
        assert ep.offset + 60.0 <= ep.profile.onset <= ep.offset + 80.0


def test_corpus_labels():
    profiles = [RansomwareProfile(family_label='lockbit'), RansomwareProfile(family_label='hive')]
    events, truth = simulate_corpus(BenignProfile(), profiles, CorpusSettings(episodes=2, benign_episodes=1), 9)
    ransomware = [iv for iv in truth if iv.is_ransomware]
    benign = [iv for iv in truth if not iv.is_ransomware]
    assert len(ransomware) == 2
    assert [iv.family for iv in benign] == ['lockbit', 'hive', 'benign']
    assert align_events(events) == events
    assert [e.seq for e in events] == list(range(len(events)))
    for iv in ransomware:
        owned = [e for e in events if e.pid == iv.pid and iv.start <= e.ts <= iv.end]
        assert owned[0].ts == iv.start
        assert owned[-1].ts == iv.end
    assert events[-1].ts <= 600.0


def test_benign_only_trace():
    events, truth = benign_trace(BenignProfile(duration=50.0), seed=1)
    assert len(truth) == 1
    assert not truth[0].is_ransomware
    assert truth[0].end == 50.0
    assert events


def test_same_seed_same_files(tmp_path):
    settings = CorpusSettings(episodes=2)
    profiles = [RansomwareProfile()]
    outputs = []
    for name in ('a', 'b'):
        events, truth = simulate_corpus(BenignProfile(), profiles, settings, 11)
        write_trace(tmp_path / f'{name}.jsonl', events)
        write_ground_truth(tmp_path / f'{name}.truth.jsonl', truth)
        outputs.append(((tmp_path / f'{name}.jsonl').read_bytes(), (tmp_path / f'{name}.truth.jsonl').read_bytes()))
    assert outputs[0] == outputs[1]


def test_profile_speed_controls_cadence():
    slow = gen_ransomware(RansomwareProfile(encryption_speed=4.5, target_count=100), seed=3)
    fast = gen_ransomware(replace(RansomwareProfile(target_count=100), encryption_speed=6.0), seed=3)
    assert fast[-1].ts - fast[0].ts < slow[-1].ts - slow[0].ts


def test_merge_traces(event):
    background = [event(1.0, seq=0, pid=1), event(3.0, seq=1, pid=1)]
    attack = [event(1.0, seq=0, pid=2), event(2.0, seq=1, pid=2)]
    benign_truth = [LabelInterval(0.0, 4.0, 'benign', 'lockbit')]
    attack_truth = [LabelInterval(1.0, 2.0, 'ransomware', 'lockbit', pid=2)]
    trace, truth = merge_traces([(background, benign_truth), (attack, attack_truth)])
    assert [(e.ts, e.pid) for e in trace] == [(1.0, 1), (1.0, 2), (2.0, 2), (3.0, 1)]
    assert [e.seq for e in trace] == [0, 1, 2, 3]
    assert align_events(trace) == trace
    assert truth == benign_truth + attack_truth
