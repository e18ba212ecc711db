"""Deterministic synthetic traces: benign workloads and parametric ransomware.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence``. Only 53-bit uniform doubles (``Generator.random``) are
consumed; every other variate is derived from them here, so a trace depends on
nothing but the PCG64 stream and this module.
"""
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from .parser import USER_DOC_EXTENSIONS
from .types import (
    LABEL_BENIGN,
    LABEL_RANSOMWARE,
    EventRecord,
    InvalidProfile,
    LabelInterval,
    OperationKind,
)

logger = logging.getLogger(__name__)

MB = 1_000_000
SPEED_GRID = (4.5, 4.8, 5.2, 5.7, 6.0)
FILE_TREE_SIZE = 500

BENIGN_PROCS = ('explorer.exe', 'winword.exe', 'excel.exe', 'chrome.exe',
                'outlook.exe', 'svchost.exe', 'teams.exe', 'acrord32.exe')
SPAWNED_IMAGES = ('C:/Windows/System32/cmd.exe', 'C:/Windows/System32/conhost.exe',
                  'C:/Windows/System32/rundll32.exe', 'C:/Windows/System32/taskhostw.exe')
BEACON_HOST = '203.0.113.7:443'
BACKUP_PROC = 'backup.exe'

_DOC_EXTENSIONS = tuple(sorted(USER_DOC_EXTENSIONS))
_USER_DOC_BOUND = 0.70
_SYSTEM_BOUND = 0.90


class RandomStream:
    """Seeded variates built only on PCG64 uniform doubles."""

    def __init__(self, seed: int, *stream: int, block: int = 4096):
        if seed < 0 or any(s < 0 for s in stream):
            raise InvalidProfile(f"seeds must be non-negative, got {(seed,) + stream}")
        self._rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))
        self._block = block
        self._buf = self._rng.random(block)
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == self._block:
            self._buf = self._rng.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)

    def exponential(self, rate: float) -> float:
        return -math.log(1.0 - self.uniform()) / rate

    def normal(self, mu: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller, cosine branch only; always consumes two uniforms
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return mu + sigma * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def lognormal(self, sigma: float) -> float:
        return math.exp(self.normal(0.0, sigma))

    def index(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)


def _clamp_entropy(value: float) -> float:
    return min(8.0, max(0.0, value))


@dataclass(frozen=True)
class BenignProfile:
    n_processes: int = 4
    event_rate: float = 1.5
    write_fraction: float = 1.0
    mean_entropy_benign: float = 4.2
    entropy_sigma: float = 0.8
    net_rate: float = 0.1
    duration: float = 200.0
    base_pid: int = 1000
    # backup/archiver bursts; zero rate disables them
    burst_rate: float = 0.0
    burst_files: int = 40
    burst_speed: float = 5.0
    burst_entropy: float = 7.6

    def validate(self) -> None:
        if self.n_processes < 1:
            raise InvalidProfile(f"n_processes must be >= 1, got {self.n_processes}")
        for name in ('event_rate', 'net_rate', 'burst_rate'):
            if getattr(self, name) < 0:
                raise InvalidProfile(f"{name} must be >= 0")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise InvalidProfile(f"write_fraction must be in [0, 1], got {self.write_fraction}")
        if self.duration <= 0:
            raise InvalidProfile(f"duration must be > 0, got {self.duration}")
        if self.entropy_sigma < 0:
            raise InvalidProfile("entropy_sigma must be >= 0")
        if self.base_pid < 0:
            raise InvalidProfile("base_pid must be >= 0")
        if self.burst_rate > 0 and (self.burst_files < 1 or self.burst_speed <= 0):
            raise InvalidProfile("bursts need burst_files >= 1 and burst_speed > 0")


@dataclass(frozen=True)
class RansomwareProfile:
    encryption_speed: float = 5.2
    mean_file_size: float = 1.0
    entropy_encrypted: float = 7.9
    entropy_sigma: float = 0.05
    onset: float = 60.0
    target_count: int = 300
    beacon: bool = True
    family_label: str = 'generic'
    pid: Optional[int] = None
    cadence_jitter: float = 0.1

    @property
    def files_per_second(self) -> float:
        return self.encryption_speed / self.mean_file_size

    @property
    def cadence(self) -> float:
        return self.mean_file_size / self.encryption_speed

    def validate(self) -> None:
        if not self.encryption_speed > 0:
            raise InvalidProfile(f"encryption_speed must be > 0, got {self.encryption_speed}")
        if not self.mean_file_size > 0:
            raise InvalidProfile(f"mean_file_size must be > 0, got {self.mean_file_size}")
        if self.onset < 0:
            raise InvalidProfile(f"onset must be >= 0, got {self.onset}")
        if self.target_count < 0:
            raise InvalidProfile(f"target_count must be >= 0, got {self.target_count}")
        if self.cadence_jitter < 0 or self.entropy_sigma < 0:
            raise InvalidProfile("jitter and sigma must be >= 0")
        if not self.family_label:
            raise InvalidProfile("family_label must be non-empty")


@dataclass(frozen=True)
class CorpusSettings:
    """Layout of a multi-episode labeled corpus."""
    episodes: int = 60
    benign_episodes: int = 0
    episode_duration: float = 200.0
    onset_jitter: float = 20.0

    def validate(self) -> None:
        if self.episodes < 0 or self.benign_episodes < 0:
            raise InvalidProfile("episode counts must be >= 0")
        if self.episodes + self.benign_episodes < 1:
            raise InvalidProfile("corpus needs at least one episode")
        if self.episode_duration <= 0:
            raise InvalidProfile("episode_duration must be > 0")
        if self.onset_jitter < 0:
            raise InvalidProfile("onset_jitter must be >= 0")


def build_file_tree(rs: RandomStream, size: int = FILE_TREE_SIZE) -> List[str]:
    """Synthetic paths: 70% user documents, 20% system files, 10% temp."""
    tree = []
    for i in range(size):
        u = rs.uniform()
        if u < _USER_DOC_BOUND:
            ext = _DOC_EXTENSIONS[rs.index(len(_DOC_EXTENSIONS))]
            folder = ('Documents', 'Desktop', 'Pictures', 'Downloads')[rs.index(4)]
            tree.append(f"C:/Users/user/{folder}/file_{i:04d}.{ext}")
        elif u < _SYSTEM_BOUND:
            tree.append(f"C:/Windows/System32/module_{i:04d}.dll")
        else:
            tree.append(f"C:/Users/user/AppData/Local/Temp/tmp_{i:04d}.tmp")
    return tree


def _finalize(raw: List[Tuple[float, int, dict]]) -> List[EventRecord]:
    """Order raw events by (ts, emission order) and assign seq."""
    raw.sort(key=lambda item: (item[0], item[1]))
    return [EventRecord(ts=ts, seq=seq, **fields) for seq, (ts, _, fields) in enumerate(raw)]


def gen_benign(profile: BenignProfile, seed: int) -> List[EventRecord]:
    profile.validate()
    tree_rs = RandomStream(seed, 0)
    tree = build_file_tree(tree_rs)
    raw: List[Tuple[float, int, dict]] = []
    order = 0

    p_net = min(1.0, profile.net_rate / profile.event_rate) if profile.event_rate > 0 else 0.0
    p_write = 0.20 * profile.write_fraction
    for i in range(profile.n_processes):
        rs = RandomStream(seed, 1, i)
        pid = profile.base_pid + i
        proc = BENIGN_PROCS[i % len(BENIGN_PROCS)]
        hosts = [f"10.0.{i}.{k + 1}:443" for k in range(3)]
        if profile.event_rate <= 0:
            continue
        t = rs.exponential(profile.event_rate)
        while t <= profile.duration:
            fields = {'pid': pid, 'proc': proc}
            if rs.uniform() < p_net:
                op = OperationKind.NET_CONNECT if rs.uniform() < 0.3 else OperationKind.NET_SEND
                fields.update(op=op, target=hosts[rs.index(len(hosts))],
                              bytes=int(rs.exponential(1.0 / 2048.0)))
            else:
                u = rs.uniform()
                if u < 0.45:
                    fields.update(op=OperationKind.FILE_READ, target=tree[rs.index(len(tree))],
                                  bytes=int(rs.exponential(1.0 / 65536.0)))
                elif u < 0.45 + p_write:
                    entropy = _clamp_entropy(rs.normal(profile.mean_entropy_benign, profile.entropy_sigma))
                    fields.update(op=OperationKind.FILE_WRITE, target=tree[rs.index(len(tree))],
                                  bytes=int(rs.exponential(1.0 / 32768.0)), entropy=entropy)
                elif u < 0.48 + p_write:
                    fields.update(op=OperationKind.PROC_SPAWN,
                                  target=SPAWNED_IMAGES[rs.index(len(SPAWNED_IMAGES))])
                elif u < 0.50 + p_write:
                    fields.update(op=OperationKind.REG_SET,
                                  target=f"HKCU/Software/{proc}/Setting{rs.index(8)}")
                else:
                    fields.update(op=OperationKind.FILE_READ, target=tree[rs.index(len(tree))],
                                  bytes=int(rs.exponential(1.0 / 65536.0)))
            raw.append((t, order, fields))
            order += 1
            t += rs.exponential(profile.event_rate)

    if profile.burst_rate > 0:
        rs = RandomStream(seed, 2)
        pid = profile.base_pid + profile.n_processes
        cadence = 1.0 / profile.burst_speed
        start = rs.exponential(profile.burst_rate)
        burst = 0
        while start <= profile.duration:
            archive = f"C:/Users/user/Backups/archive_{burst:04d}.zip"
            t = start
            for _ in range(profile.burst_files):
                step = cadence * rs.lognormal(0.1)
                source = tree[rs.index(len(tree))]
                nbytes = int(rs.exponential(1.0 / 262144.0))
                entropy = _clamp_entropy(rs.normal(profile.burst_entropy, 0.1))
                for dt, op, target, extra in (
                        (0.0, OperationKind.FILE_READ, source, {'bytes': nbytes}),
                        (0.4 * step, OperationKind.FILE_WRITE, archive, {'bytes': nbytes, 'entropy': entropy}),
                        (0.8 * step, OperationKind.FILE_RENAME, archive, {})):
                    if t + dt <= profile.duration:
                        raw.append((t + dt, order, {'pid': pid, 'proc': BACKUP_PROC, 'op': op,
                                                    'target': target, **extra}))
                        order += 1
                t += step
            burst += 1
            start = t + rs.exponential(profile.burst_rate)

    events = _finalize(raw)
    logger.debug(f"gen_benign seed={seed} events={len(events)}")
    return events


def ransomware_pid(profile: RansomwareProfile, seed: int) -> int:
    if profile.pid is not None:
        return profile.pid
    return 4000 + RandomStream(seed, 3, 1).index(4000)


def gen_ransomware(profile: RansomwareProfile, seed: int) -> List[EventRecord]:
    """Read, high-entropy write and rename of each target file at the profile cadence."""
    profile.validate()
    rs = RandomStream(seed, 3, 0)
    pid = ransomware_pid(profile, seed)
    proc = f"{profile.family_label}.exe"
    raw: List[Tuple[float, int, dict]] = []
    order = 0

    if profile.beacon:
        raw.append((profile.onset, order, {'pid': pid, 'proc': proc, 'op': OperationKind.NET_CONNECT,
                                           'target': BEACON_HOST, 'bytes': 512}))
        order += 1

    t = profile.onset
    for i in range(profile.target_count):
        step = profile.cadence * rs.lognormal(profile.cadence_jitter)
        ext = _DOC_EXTENSIONS[rs.index(len(_DOC_EXTENSIONS))]
        target = f"C:/Users/user/Documents/{profile.family_label}_victim_{i:05d}.{ext}"
        size = max(1, int(profile.mean_file_size * MB * rs.lognormal(0.25)))
        entropy = _clamp_entropy(rs.normal(profile.entropy_encrypted, profile.entropy_sigma))
        raw.append((t, order, {'pid': pid, 'proc': proc, 'op': OperationKind.FILE_READ,
                               'target': target, 'bytes': size}))
        raw.append((t + 0.4 * step, order + 1, {'pid': pid, 'proc': proc, 'op': OperationKind.FILE_WRITE,
                                                'target': target, 'bytes': size, 'entropy': entropy}))
        raw.append((t + 0.8 * step, order + 2, {'pid': pid, 'proc': proc, 'op': OperationKind.FILE_RENAME,
                                                'target': target}))
        order += 3
        t += step

    return _finalize(raw)


def ransomware_interval(profile: RansomwareProfile, events: Sequence[EventRecord],
                        seed: int) -> LabelInterval:
    end = events[-1].ts if events else profile.onset
    return LabelInterval(start=profile.onset, end=end, label=LABEL_RANSOMWARE,
                         family=profile.family_label, pid=ransomware_pid(profile, seed))


def merge_traces(parts: Sequence[Tuple[Sequence[EventRecord], Sequence[LabelInterval]]]
                 ) -> Tuple[List[EventRecord], List[LabelInterval]]:
    """Merge aligned parts into one trace with fresh, unique seq values."""
    keyed = []
    for part_no, (events, _) in enumerate(parts):
        for event in events:
            keyed.append(((event.ts, part_no, event.seq), event))
    keyed.sort(key=lambda item: item[0])
    trace = [replace(event, seq=seq) for seq, (_, event) in enumerate(keyed)]

    truth = [interval for _, intervals in parts for interval in intervals]
    truth.sort(key=lambda iv: (iv.start, iv.label, iv.family, iv.end))
    return trace, truth


@dataclass(frozen=True)
class Episode:
    index: int
    offset: float
    family: str
    profile: Optional[RansomwareProfile] = None


def plan_episodes(profiles: Sequence[RansomwareProfile], settings: CorpusSettings,
                  seed: int) -> List[Episode]:
    """Ransomware episodes cycle through the profiles; benign-only episodes follow."""
    settings.validate()
    if settings.episodes and not profiles:
        raise InvalidProfile("ransomware episodes requested but no ransomware profile given")
    rs = RandomStream(seed, 4)
    plan = []
    for i in range(settings.episodes):
        base = profiles[i % len(profiles)]
        offset = i * settings.episode_duration
        onset = offset + base.onset + rs.uniform() * settings.onset_jitter
        plan.append(Episode(i, offset, base.family_label, replace(base, onset=onset, pid=None)))
    for j in range(settings.benign_episodes):
        i = settings.episodes + j
        plan.append(Episode(i, i * settings.episode_duration, LABEL_BENIGN))
    return plan


def simulate_corpus(benign: BenignProfile, profiles: Sequence[RansomwareProfile],
                    settings: CorpusSettings, seed: int
                    ) -> Tuple[List[EventRecord], List[LabelInterval]]:
    """One continuous benign background with ransomware episodes laid end to end."""
    plan = plan_episodes(profiles, settings, seed)
    total = len(plan) * settings.episode_duration
    background = replace(benign, duration=total)
    for episode in plan:
        if episode.profile is not None:
            episode.profile.validate()
            end = episode.profile.onset + episode.profile.target_count * episode.profile.cadence
            if end > episode.offset + settings.episode_duration:
                logger.warning(f"Episode {episode.index} ({episode.family}) may overrun its slot: "
                               f"expected end {end:.1f}s")

    parts = [(gen_benign(background, seed), [])]
    for episode in plan:
        interval = LabelInterval(start=episode.offset, end=episode.offset + settings.episode_duration,
                                 label=LABEL_BENIGN, family=episode.family)
        if episode.profile is None:
            parts.append(([], [interval]))
            continue
        part_seed = seed * 1000 + episode.index + 1
        events = gen_ransomware(episode.profile, part_seed)
        parts.append((events, [interval, ransomware_interval(episode.profile, events, part_seed)]))

    trace, truth = merge_traces(parts)
    logger.info(f"Simulated corpus: episodes={len(plan)} events={len(trace)} duration={total:.0f}s")
    return trace, truth


def benign_trace(benign: BenignProfile, seed: int) -> Tuple[List[EventRecord], List[LabelInterval]]:
    events = gen_benign(benign, seed)
    interval = LabelInterval(start=0.0, end=benign.duration, label=LABEL_BENIGN, family=LABEL_BENIGN)
    return merge_traces([(events, [interval])])


DEFAULT_FAMILIES = (
    RansomwareProfile(encryption_speed=5.2, family_label='lockbit'),
    RansomwareProfile(encryption_speed=4.8, family_label='blackmatter'),
    RansomwareProfile(encryption_speed=6.0, family_label='hive'),
    RansomwareProfile(encryption_speed=4.5, family_label='clop'),
    RansomwareProfile(encryption_speed=5.7, family_label='revil'),
)
