"""Batch and streaming orchestration, alert files and the run_* entry points."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, TextIO, Tuple, Union
import heapq
import json
import logging
import queue
import sys
import threading
import time

from .config import PipelineConfig
from .detection import DetectionModel, Verdict, WindowAnalyzer, load_model, save_model
from .evaluation import (
    LOAD_LEVELS,
    LOAD_SWEEP_HEADER,
    SPEED_SWEEP_HEADER,
    WINDOW_SIZES,
    WINDOW_SWEEP_HEADER,
    ConfusionCounts,
    FamilyRow,
    LatencyStats,
    confusion,
    confusion_from_labels,
    detection_latency,
    family_metrics,
    rate_rows,
    summary_document,
    sweep_load,
    sweep_speeds,
    sweep_windows,
    window_rows,
    write_table_csv,
    write_timeline_csv,
)
from .features import FeatureVector, write_feature_csv
from .graph import GraphBuilder, GraphParams, TemporalCorrelationGraph, graph_to_document, to_dot, windows
from .parser import (
    TraceReader,
    align_events,
    decode_lines,
    iter_trace_lines,
    read_ground_truth,
    read_trace,
    truth_path_for,
    write_ground_truth,
    write_trace,
)
from .signatures import SignaturePattern, resolve_signatures
from .simgen import SPEED_GRID, benign_trace
from .stages import log_stage, stage
from .training import TrainingResult, simulate_from_config, train_model
from .types import DetectorError, EventRecord, LabelInterval, MalformedRecord, UnreadableInput

logger = logging.getLogger(__name__)

_DONE = object()
POLL_INTERVAL = 0.05  # seconds between stop checks in blocked stage threads
JOIN_TIMEOUT = 5.0


@dataclass(frozen=True)
class Alert:
    verdict: Verdict
    emit_ts: float
    seq: int

    def to_dict(self) -> dict:
        return {**self.verdict.to_dict(), 'emit_ts': self.emit_ts, 'seq': self.seq}

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))

    @classmethod
    def from_line(cls, line: str, line_no: Optional[int] = None) -> 'Alert':
        try:
            data = json.loads(line)
            return cls(Verdict.from_dict(data), float(data['emit_ts']), int(data['seq']))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise MalformedRecord(f"bad alert record: {e}", line_no)


def write_alerts(target: Union[str, Path, TextIO], alerts: Iterable[Alert]) -> int:
    count = 0
    if hasattr(target, 'write'):
        for alert in alerts:
            target.write(alert.to_line() + '\n')
            count += 1
        return count
    with open(target, 'w', encoding='utf-8', newline='\n') as f:
        return write_alerts(f, alerts)


def read_alerts(path: Union[str, Path]) -> List[Alert]:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise UnreadableInput(f"Could not read alerts {path}: {e}") from e
    return [Alert.from_line(line, no) for no, line in enumerate(text.split('\n'), start=1) if line.strip()]


@dataclass(frozen=True)
class ClosedWindow:
    index: int
    graph: TemporalCorrelationGraph
    events: Tuple[EventRecord, ...]


class ArrivalGate:
    """Admits events in strictly increasing (ts, seq) arrival order.

    Anything at or behind the last admitted key, duplicates included, is
    counted as late and dropped. Batch and stream ingest share this rule.
    """

    def __init__(self) -> None:
        self.late = 0
        self._last: Optional[Tuple[float, int]] = None

    def admit(self, event: EventRecord) -> bool:
        key = (event.ts, event.seq)
        if self._last is not None and key <= self._last:
            self.late += 1
            logger.warning(f"Skipping late event ts={event.ts} seq={event.seq} (stream at {self._last[0]})")
            return False
        self._last = key
        return True


class WindowAssembler:
    """Opens windows as stream time advances and closes them at end + delta."""

    def __init__(self, params: GraphParams):
        self.params = params
        self._gate = ArrivalGate()
        self._open: Dict[int, Tuple[GraphBuilder, List[EventRecord]]] = {}
        self._next_index = 0

    @property
    def late(self) -> int:
        return self._gate.late

    def push(self, event: EventRecord) -> List[ClosedWindow]:
        if not self._gate.admit(event):
            return []
        p = self.params
        while self._next_index * p.stride <= event.ts:
            start = self._next_index * p.stride
            self._open[self._next_index] = (GraphBuilder(start, start + p.window, p), [])
            self._next_index += 1
        for builder, events in self._open.values():
            if builder.start <= event.ts < builder.end:
                builder.add(event)
                events.append(event)
        return self._close(lambda builder: event.ts >= builder.end + p.delta)

    def flush(self) -> List[ClosedWindow]:
        return self._close(lambda builder: True)

    def _close(self, ready: Callable[[GraphBuilder], bool]) -> List[ClosedWindow]:
        closed = []
        for index in sorted(self._open):
            builder, events = self._open[index]
            if not ready(builder):
                break
            del self._open[index]
            closed.append(ClosedWindow(index, builder.graph(), tuple(events)))
        return closed


@dataclass
class DetectStats:
    events: int = 0
    skipped: int = 0
    late: int = 0
    alerts: int = 0
    ransomware: int = 0
    wall: Dict[str, float] = field(default_factory=lambda: {'ingest': 0.0, 'build': 0.0, 'features': 0.0,
                                                             'decide': 0.0, 'emit': 0.0})

    def log(self, windows_built: int) -> None:
        log_stage('ingest', self.events, self.wall['ingest'], skipped=self.skipped, late=self.late)
        log_stage('build', windows_built, self.wall['build'])
        log_stage('features', windows_built, self.wall['features'])
        log_stage('decide', windows_built, self.wall['decide'])
        log_stage('emit', self.alerts, self.wall['emit'])


class Detector:
    """Turns closed windows into alerts; shared by the batch, stream and threaded paths."""

    def __init__(self, model: DetectionModel, signatures: Sequence[SignaturePattern] = (),
                 signature_limit: int = 64, snapshot_dir: Optional[Path] = None):
        self.analyzer = WindowAnalyzer(model, signatures, signature_limit)
        self.params = model.params
        self.snapshot_dir = snapshot_dir
        self.stats = DetectStats()
        self.features: List[FeatureVector] = []
        self._seq = 0
        self._lock = threading.Lock()

    def _add_wall(self, name: str, seconds: float) -> None:
        with self._lock:
            self.stats.wall[name] += seconds

    def judge(self, window: ClosedWindow) -> Tuple[int, FeatureVector, Verdict]:
        t0 = time.perf_counter()
        features = self.analyzer.features(window.graph, window.events)
        t1 = time.perf_counter()
        verdict = self.analyzer.verdict(window.graph, features)
        t2 = time.perf_counter()
        self._add_wall('features', t1 - t0)
        self._add_wall('decide', t2 - t1)
        if self.snapshot_dir is not None:
            path = self.snapshot_dir / f"window_{window.index:06d}.ini"
            path.write_text(graph_to_document(window.graph), encoding='utf-8')
        return window.index, features, verdict

    def emit(self, features: FeatureVector, verdict: Verdict) -> Alert:
        t0 = time.perf_counter()
        alert = Alert(verdict, verdict.window_end + self.params.delta, self._seq)
        self._seq += 1
        self.features.append(features)
        self.stats.alerts += 1
        if verdict.is_ransomware:
            self.stats.ransomware += 1
            logger.warning(f"Ransomware verdict for window [{verdict.window_start}, {verdict.window_end}) "
                           f"score={verdict.anomaly_score:.3f} prob={verdict.prob:.3f} "
                           f"severity={verdict.severity} hits={','.join(verdict.signature_hits) or '-'}")
        self._add_wall('emit', time.perf_counter() - t0)
        return alert

    def batch(self, events: Sequence[EventRecord]) -> Iterator[Alert]:
        """Alerts for an aligned, fully loaded trace."""
        for index, window in enumerate(windows(events, self.params)):
            t0 = time.perf_counter()
            builder = GraphBuilder(window.start, window.end, self.params)
            for event in window.events:
                builder.add(event)
            closed = ClosedWindow(index, builder.graph(), window.events)
            self._add_wall('build', time.perf_counter() - t0)
            _, features, verdict = self.judge(closed)
            yield self.emit(features, verdict)

    def stream(self, records: Iterable[Union[EventRecord, MalformedRecord]]) -> Iterator[Alert]:
        """Alerts in window order while records arrive one at a time."""
        assembler = WindowAssembler(self.params)
        for record in records:
            if isinstance(record, MalformedRecord):
                self.stats.skipped += 1
                logger.warning(f"Skipping malformed record: {record}")
                continue
            self.stats.events += 1
            t0 = time.perf_counter()
            closed = assembler.push(record)
            self._add_wall('build', time.perf_counter() - t0)
            for window in closed:
                _, features, verdict = self.judge(window)
                yield self.emit(features, verdict)
        self.stats.late = assembler.late
        for window in assembler.flush():
            _, features, verdict = self.judge(window)
            yield self.emit(features, verdict)

    def _count(self, name: str) -> None:
        with self._lock:
            setattr(self.stats, name, getattr(self.stats, name) + 1)

    def threaded(self, records: Iterable[Union[EventRecord, MalformedRecord]], queue_size: int = 64,
                 workers: int = 2) -> Iterator[Alert]:
        """Stream path split over bounded queues; a reorder buffer restores window order.

        At most ``queue_size + workers`` windows are in flight between the builder
        and the emitter, which also bounds the reorder buffer. Closing the
        generator early stops every stage thread.
        """
        event_q: queue.Queue = queue.Queue(maxsize=queue_size)
        window_q: queue.Queue = queue.Queue(maxsize=queue_size)
        result_q: queue.Queue = queue.Queue(maxsize=queue_size)
        slots = threading.BoundedSemaphore(queue_size + workers)
        stop = threading.Event()
        errors: List[BaseException] = []
        assembler = WindowAssembler(self.params)

        def fail(e: BaseException) -> None:
            errors.append(e)
            stop.set()

        def put(q: queue.Queue, item: object) -> bool:
            while not stop.is_set():
                try:
                    q.put(item, timeout=POLL_INTERVAL)
                    return True
                except queue.Full:
                    continue
            return False

        def get(q: queue.Queue) -> object:
            while not stop.is_set():
                try:
                    return q.get(timeout=POLL_INTERVAL)
                except queue.Empty:
                    continue
            return _DONE

        def acquire_slot() -> bool:
            while not stop.is_set():
                if slots.acquire(timeout=POLL_INTERVAL):
                    return True
            return False

        def send_window(window: ClosedWindow) -> bool:
            return acquire_slot() and put(window_q, window)

        def ingest() -> None:
            try:
                for record in records:
                    if stop.is_set():
                        return
                    if isinstance(record, MalformedRecord):
                        self._count('skipped')
                        logger.warning(f"Skipping malformed record: {record}")
                        continue
                    self._count('events')
                    if not put(event_q, record):
                        return
            except BaseException as e:
                fail(e)
            finally:
                put(event_q, _DONE)

        def assemble() -> None:
            try:
                while True:
                    item = get(event_q)
                    if item is _DONE:
                        break
                    t0 = time.perf_counter()
                    closed = assembler.push(item)
                    self._add_wall('build', time.perf_counter() - t0)
                    if not all(send_window(window) for window in closed):
                        return
                if not stop.is_set():
                    for window in assembler.flush():
                        if not send_window(window):
                            return
            except BaseException as e:
                fail(e)
            finally:
                for _ in range(workers):
                    put(window_q, _DONE)

        def analyze() -> None:
            try:
                while True:
                    item = get(window_q)
                    if item is _DONE:
                        break
                    if not put(result_q, self.judge(item)):
                        return
            except BaseException as e:
                fail(e)
            finally:
                put(result_q, _DONE)

        threads = [threading.Thread(target=ingest, name='tcg-ingest', daemon=True),
                   threading.Thread(target=assemble, name='tcg-build', daemon=True)]
        threads += [threading.Thread(target=analyze, name=f'tcg-analyze-{i}', daemon=True) for i in range(workers)]
        for t in threads:
            t.start()

        pending: List[Tuple[int, int, FeatureVector, Verdict]] = []
        next_index = 0
        finished = 0
        tie = 0
        try:
            while finished < workers:
                item = get(result_q)
                if item is _DONE:
                    finished += 1
                    continue
                index, features, verdict = item
                heapq.heappush(pending, (index, tie, features, verdict))
                tie += 1
                while pending and pending[0][0] == next_index:
                    _, _, features, verdict = heapq.heappop(pending)
                    next_index += 1
                    slots.release()
                    yield self.emit(features, verdict)
            if errors:
                raise errors[0]
            while pending:
                _, _, features, verdict = heapq.heappop(pending)
                slots.release()
                yield self.emit(features, verdict)
        finally:
            stop.set()
            for t in threads:
                t.join(timeout=JOIN_TIMEOUT)
            self.stats.late = assembler.late


def _open_stream(path: Union[str, Path]) -> BinaryIO:
    if str(path) == '-':
        return sys.stdin.buffer
    try:
        return open(path, 'rb')
    except OSError as e:
        raise UnreadableInput(f"Input not found: {path}") from e


def _signatures(config: PipelineConfig) -> List[SignaturePattern]:
    return resolve_signatures(config.signature_dir)


def run_detect(config: PipelineConfig, model_path: Union[str, Path], input_path: Union[str, Path],
               output: Union[str, Path, TextIO, None] = None,
               snapshot_dir: Optional[Union[str, Path]] = None,
               features_path: Optional[Union[str, Path]] = None) -> DetectStats:
    """Score a trace and write one alert line per window."""
    model = load_model(model_path)
    snapshots = Path(snapshot_dir) if snapshot_dir else None
    if snapshots is not None:
        snapshots.mkdir(parents=True, exist_ok=True)
    detector = Detector(model, _signatures(config), config.signature_limit, snapshots)

    if config.mode == 'batch':
        with stage('ingest') as st:
            reader = TraceReader(input_path, use_parallel=True,
                                 parallel_threshold=config.parallel_parse_threshold)
            records = reader.events()
            gate = ArrivalGate()
            events = align_events([e for e in records if gate.admit(e)])
            st.count = len(records)
            st.extra['skipped'] = reader.skipped
            st.extra['late'] = gate.late
        detector.stats.events = len(records)
        detector.stats.skipped = reader.skipped
        detector.stats.late = gate.late
        alerts = detector.batch(events)
        source = None
    else:
        source = _open_stream(input_path)
        lines = iter_trace_lines(decode_lines(source))
        if config.threaded:
            alerts = detector.threaded(lines, config.queue_size)
        else:
            alerts = detector.stream(lines)

    try:
        if output is None:
            write_alerts(sys.stdout, alerts)
        else:
            write_alerts(output, alerts)
    finally:
        if source is not None and str(input_path) != '-':
            source.close()

    stats = detector.stats
    if config.mode == 'batch':
        # ingest already logged with its own timer
        for name in ('build', 'features', 'decide'):
            log_stage(name, stats.alerts, stats.wall[name])
        log_stage('emit', stats.alerts, stats.wall['emit'])
    else:
        stats.log(stats.alerts)
    if features_path is not None:
        write_feature_csv(features_path, detector.features)
    logger.info(f"Detection finished: events={stats.events} skipped={stats.skipped} late={stats.late} "
                f"windows={stats.alerts} ransomware={stats.ransomware}")
    return stats


@dataclass
class SimulateSummary:
    events: int
    intervals: int
    episodes: int
    trace_path: Path
    truth_path: Path


def run_simulate(config: PipelineConfig, output: Union[str, Path], benign_only: bool = False) -> SimulateSummary:
    """Write a seeded trace and its ground-truth sidecar."""
    output = Path(output)
    if benign_only:
        events, truth = benign_trace(config.benign, config.seed)
    else:
        events, truth = simulate_from_config(config)
    truth_path = truth_path_for(output)
    write_trace(output, events)
    write_ground_truth(truth_path, truth)
    episodes = sum(1 for iv in truth if iv.is_ransomware)
    logger.info(f"Wrote {len(events)} events and {len(truth)} label interval(s) to {output}")
    return SimulateSummary(len(events), len(truth), episodes, output, truth_path)


def held_out_alerts_path(model_path: Union[str, Path]) -> Path:
    path = Path(model_path)
    return path.with_name(path.stem + '.test_alerts.jsonl')


@dataclass
class TrainSummary:
    result: TrainingResult
    counts: ConfusionCounts
    model_path: Path
    alerts_path: Path


def load_corpus(config: PipelineConfig, input_path: Optional[Union[str, Path]] = None,
                truth_path: Optional[Union[str, Path]] = None
                ) -> Tuple[List[EventRecord], List[LabelInterval]]:
    """Events and labels from files, or simulated from the config when no input is given."""
    if input_path is None:
        return simulate_from_config(config)
    with stage('ingest') as st:
        events = align_events(read_trace(input_path))
        st.count = len(events)
    truth = read_ground_truth(truth_path or truth_path_for(input_path))
    return events, truth


def run_train(config: PipelineConfig, model_path: Union[str, Path],
              input_path: Optional[Union[str, Path]] = None,
              truth_path: Optional[Union[str, Path]] = None) -> TrainSummary:
    events, truth = load_corpus(config, input_path, truth_path)
    result = train_model(events, truth, config, _signatures(config))
    model_path = Path(model_path)
    save_model(model_path, result.model)

    params = result.model.params
    alerts = [Alert(r.verdict, r.verdict.window_end + params.delta, seq)
              for seq, r in enumerate(sorted(result.test_results, key=lambda r: r.window.start))]
    alerts_path = held_out_alerts_path(model_path)
    with stage('emit') as st:
        st.count = write_alerts(alerts_path, alerts)
    counts = confusion_from_labels((r.verdict.is_ransomware for r in result.test_results), result.test_labels)
    logger.info(f"Model written to {model_path}; test alerts in {alerts_path}")
    return TrainSummary(result, counts, model_path, alerts_path)


@dataclass
class EvalSummary:
    counts: ConfusionCounts
    latency: LatencyStats
    families: List[FamilyRow]


def run_eval(alerts_path: Union[str, Path], truth_path: Union[str, Path], window: Optional[float] = None,
             trace_path: Optional[Union[str, Path]] = None, report_path: Optional[Union[str, Path]] = None,
             timeline_path: Optional[Union[str, Path]] = None) -> EvalSummary:
    verdicts = [a.verdict for a in read_alerts(alerts_path)]
    truth = read_ground_truth(truth_path)
    events = align_events(read_trace(trace_path)) if trace_path else None
    if window is None:
        window = max((v.window_end - v.window_start for v in verdicts), default=0.0)
    counts = confusion(verdicts, truth, events)
    latency = detection_latency(verdicts, truth, window)
    families = family_metrics(verdicts, truth, events)
    if report_path is not None:
        Path(report_path).write_text(summary_document(counts, latency, families, alerts=Path(alerts_path).name),
                                     encoding='utf-8')
    if timeline_path is not None:
        write_timeline_csv(timeline_path, verdicts)
    return EvalSummary(counts, latency, families)


def run_sweep(kind: str, config: PipelineConfig, output: Union[str, Path],
              values: Optional[Sequence[float]] = None, seeds: Optional[Sequence[int]] = None,
              model_path: Optional[Union[str, Path]] = None, episodes: int = 20,
              workers: Optional[int] = None, progress: bool = False) -> list:
    """Run one sweep, write its CSV table and return the typed rows."""
    model = load_model(model_path) if model_path else None
    signatures = _signatures(config)
    if kind == 'windows':
        rows = sweep_windows(config, values or WINDOW_SIZES, seeds, workers, progress)
        table = window_rows(rows)
        header = WINDOW_SWEEP_HEADER
    elif kind == 'speeds':
        rows = sweep_speeds(config, values or SPEED_GRID, episodes, model, signatures, workers, progress)
        table = rate_rows(rows)
        header = SPEED_SWEEP_HEADER
    elif kind == 'load':
        rows = sweep_load(config, values or LOAD_LEVELS, episodes, model, signatures, workers, progress)
        table = rate_rows(rows)
        header = LOAD_SWEEP_HEADER
    else:
        raise DetectorError(f"unknown sweep {kind!r}")
    write_table_csv(output, header, table)
    logger.info(f"Wrote {len(rows)} sweep row(s) to {output}")
    return rows


def run_export_dot(config: PipelineConfig, input_path: Union[str, Path], output_dir: Union[str, Path],
                   window_start: Optional[float] = None) -> List[Path]:
    """One DOT file per window (or only the window starting at window_start)."""
    events = align_events(read_trace(input_path))
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for index, window in enumerate(windows(events, config.graph)):
        if window_start is not None and window.start != window_start:
            continue
        builder = GraphBuilder(window.start, window.end, config.graph)
        for event in window.events:
            builder.add(event)
        path = out / f"window_{index:06d}.dot"
        path.write_text(to_dot(builder.graph()), encoding='utf-8')
        written.append(path)
    logger.info(f"Wrote {len(written)} DOT file(s) to {out}")
    return written
