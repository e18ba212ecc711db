"""Window-level metrics, detection latency, per-family reports and parameter sweeps."""
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple
import csv
import logging
import statistics

from tqdm import tqdm
from tqdm.contrib.logging import logging_redirect_tqdm

from .config import PipelineConfig
from .detection import DetectionModel, Verdict, WindowAnalyzer
from .documents import document_to_text, fmt_float, new_document
from .graph import windows
from .signatures import SignaturePattern
from .simgen import SPEED_GRID, CorpusSettings
from .training import label_window, simulate_from_config, train_model
from .types import LABEL_BENIGN, CoverageGap, EventRecord, LabelInterval

logger = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
WINDOW_SIZES = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
LOAD_LEVELS = (1.0, 2.0, 4.0)
SWEEP_EPISODES = 20


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: 'ConfusionCounts') -> 'ConfusionCounts':
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _ratio(num: float, den: float) -> float:
    # 0/0 is reported as 0
    return num / den if den else 0.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def recall(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def f1(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return _ratio(2 * p * r, p + r)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def confusion_from_labels(predicted: Iterable[bool], labels: Iterable[int]) -> ConfusionCounts:
    tp = fp = tn = fn = 0
    for flagged, label in zip(predicted, labels):
        if flagged and label:
            tp += 1
        elif flagged:
            fp += 1
        elif label:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def _window_events(events: Sequence[EventRecord], stamps: List[float], start: float,
                   end: float) -> Sequence[EventRecord]:
    return events[bisect_left(stamps, start):bisect_left(stamps, end)]


def verdict_labels(verdicts: Sequence[Verdict], truth: Sequence[LabelInterval],
                   events: Optional[Sequence[EventRecord]] = None) -> List[int]:
    """Ground-truth label per verdict window; CoverageGap when a window is unlabeled."""
    stamps = [e.ts for e in events] if events is not None else []
    labels = []
    for v in verdicts:
        sliced = _window_events(events, stamps, v.window_start, v.window_end) if events is not None else None
        label = label_window(v.window_start, v.window_end, truth, sliced)
        if label is None:
            raise CoverageGap(f"window [{v.window_start}, {v.window_end}) has no ground-truth label")
        labels.append(label)
    return labels


def confusion(verdicts: Sequence[Verdict], truth: Sequence[LabelInterval],
              events: Optional[Sequence[EventRecord]] = None) -> ConfusionCounts:
    labels = verdict_labels(verdicts, truth, events)
    return confusion_from_labels((v.is_ransomware for v in verdicts), labels)


@dataclass(frozen=True)
class LatencyStats:
    latencies: Tuple[float, ...] = ()
    undetected: int = 0

    @property
    def episodes(self) -> int:
        return len(self.latencies) + self.undetected

    @property
    def detected(self) -> int:
        return len(self.latencies)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.latencies) if self.latencies else 0.0

    @property
    def median(self) -> float:
        return statistics.median(self.latencies) if self.latencies else 0.0

    @property
    def max(self) -> float:
        return max(self.latencies, default=0.0)

    @property
    def detection_rate(self) -> float:
        return _ratio(self.detected, self.episodes)


def detection_latency(verdicts: Sequence[Verdict], truth: Sequence[LabelInterval],
                      window: float) -> LatencyStats:
    """Onset to end of the first alerting window, per ransomware episode."""
    alerts = sorted((v for v in verdicts if v.is_ransomware), key=lambda v: v.window_start)
    latencies = []
    undetected = 0
    for iv in sorted((iv for iv in truth if iv.is_ransomware), key=lambda iv: iv.start):
        first = next((v for v in alerts if iv.start - window <= v.window_start <= iv.end), None)
        if first is None:
            undetected += 1
            continue
        latencies.append(max(0.0, first.window_end - iv.start))
    return LatencyStats(tuple(latencies), undetected)


@dataclass(frozen=True)
class FamilyRow:
    family: str
    counts: ConfusionCounts

    @property
    def precision(self) -> float:
        return precision(self.counts)

    @property
    def recall(self) -> float:
        return recall(self.counts)

    @property
    def accuracy(self) -> float:
        return accuracy(self.counts)

    @property
    def f1(self) -> float:
        return f1(self.counts)


def family_metrics(verdicts: Sequence[Verdict], truth: Sequence[LabelInterval],
                   events: Optional[Sequence[EventRecord]] = None) -> List[FamilyRow]:
    """Metrics over the windows that start inside each family's episodes."""
    labels = verdict_labels(verdicts, truth, events)
    slots = [iv for iv in truth if not iv.is_ransomware and iv.family and iv.family != LABEL_BENIGN]
    per_family = {}
    for v, label in zip(verdicts, labels):
        slot = next((iv for iv in slots if iv.start <= v.window_start < iv.end), None)
        if slot is None:
            continue
        counts = confusion_from_labels([v.is_ransomware], [label])
        per_family[slot.family] = per_family.get(slot.family, ConfusionCounts()) + counts
    return [FamilyRow(name, per_family[name]) for name in sorted(per_family)]


def write_timeline_csv(path, verdicts: Sequence[Verdict]) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['window_start', 'window_end', 'anomaly_score', 'prob', 'label'])
        for v in verdicts:
            writer.writerow([repr(v.window_start), repr(v.window_end), repr(v.anomaly_score),
                             repr(v.prob), v.label])


def write_table_csv(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def summary_document(counts: ConfusionCounts, latency: Optional[LatencyStats] = None,
                     families: Sequence[FamilyRow] = (), **extra: object) -> str:
    """Run summary as INI; accuracy is window-level throughout."""
    doc = new_document()
    doc['report'] = {
        'format_version': str(REPORT_FORMAT_VERSION),
        'accuracy_basis': 'window',
        **{k: str(v) for k, v in extra.items()},
    }
    doc['metrics'] = {
        'tp': str(counts.tp), 'fp': str(counts.fp), 'tn': str(counts.tn), 'fn': str(counts.fn),
        'precision': fmt_float(precision(counts)),
        'recall': fmt_float(recall(counts)),
        'f1': fmt_float(f1(counts)),
        'accuracy': fmt_float(accuracy(counts)),
    }
    if latency is not None:
        doc['latency'] = {
            'episodes': str(latency.episodes),
            'detected': str(latency.detected),
            'undetected': str(latency.undetected),
            'mean': fmt_float(latency.mean),
            'median': fmt_float(latency.median),
            'max': fmt_float(latency.max),
        }
    for row in families:
        doc[f'family.{row.family}'] = {
            'precision': fmt_float(row.precision),
            'recall': fmt_float(row.recall),
            'accuracy': fmt_float(row.accuracy),
            'f1': fmt_float(row.f1),
            'windows': str(row.counts.total),
        }
    return document_to_text(doc)


def format_family_table(rows: Sequence[FamilyRow]) -> str:
    lines = [f"{'family':<16}{'precision':>10}{'recall':>10}{'accuracy':>10}"]
    for row in rows:
        lines.append(f"{row.family:<16}{row.precision:>10.3f}{row.recall:>10.3f}{row.accuracy:>10.3f}")
    return '\n'.join(lines)


def _run_cells(job: Callable, cells: Sequence, workers: Optional[int], desc: str, progress: bool) -> list:
    """Evaluate independent cells, returning results in grid order."""
    with logging_redirect_tqdm():
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(job, cell) for cell in cells]
                return [f.result() for f in tqdm(futures, desc=desc, disable=not progress)]
        return [job(cell) for cell in tqdm(cells, desc=desc, disable=not progress)]


def analyze_trace(model: DetectionModel, events: Sequence[EventRecord],
                  signatures: Sequence[SignaturePattern] = (), signature_limit: int = 64) -> List[Verdict]:
    analyzer = WindowAnalyzer(model, signatures, signature_limit)
    return [r.verdict for r in analyzer.analyze_all(windows(events, model.params))]


@dataclass(frozen=True)
class WindowSweepRow:
    size: float
    accuracy: float
    accuracy_std: float
    precision: float
    recall: float
    seeds: int


def sweep_windows(config: PipelineConfig, sizes: Sequence[float] = WINDOW_SIZES,
                  seeds: Optional[Sequence[int]] = None, workers: Optional[int] = None,
                  progress: bool = False) -> List[WindowSweepRow]:
    """Full train/calibrate/test per window size; test accuracy averaged over seeds."""
    seeds = tuple(seeds) if seeds else (config.seed,)
    corpora = {seed: simulate_from_config(config, seed) for seed in seeds}

    def cell(item: Tuple[float, int]):
        size, seed = item
        events, truth = corpora[seed]
        result = train_model(events, truth, replace(config.with_window(size), seed=seed))
        counts = confusion_from_labels((r.verdict.is_ransomware for r in result.test_results),
                                       result.test_labels)
        return counts

    grid = [(size, seed) for size in sizes for seed in seeds]
    results = dict(zip(grid, _run_cells(cell, grid, workers, 'window sweep', progress)))
    rows = []
    for size in sizes:
        cells = [results[(size, seed)] for seed in seeds]
        accs = [accuracy(c) for c in cells]
        total = sum(cells, ConfusionCounts())
        rows.append(WindowSweepRow(size, statistics.fmean(accs), statistics.pstdev(accs),
                                   precision(total), recall(total), len(seeds)))
        logger.info(f"window={size:g}s accuracy={rows[-1].accuracy:.3f}")
    return rows


@dataclass(frozen=True)
class RateSweepRow:
    value: float
    detection_rate: float
    episodes: int
    detected: int
    mean_latency: float


def _sweep_settings(config: PipelineConfig, episodes: int) -> CorpusSettings:
    return replace(config.corpus, episodes=episodes, benign_episodes=0)


def _fixed_model(config: PipelineConfig, model: Optional[DetectionModel],
                 signatures: Sequence[SignaturePattern]) -> DetectionModel:
    if model is not None:
        return model
    events, truth = simulate_from_config(config)
    return train_model(events, truth, config, signatures).model


def sweep_speeds(config: PipelineConfig, speeds: Sequence[float] = SPEED_GRID,
                 episodes: int = SWEEP_EPISODES, model: Optional[DetectionModel] = None,
                 signatures: Sequence[SignaturePattern] = (), workers: Optional[int] = None,
                 progress: bool = False) -> List[RateSweepRow]:
    """Episode detection rate per encryption speed under one fixed model."""
    model = _fixed_model(config, model, signatures)
    base = config.ransomware[0]
    settings = _sweep_settings(config, episodes)

    def cell(item: Tuple[int, float]) -> RateSweepRow:
        k, speed = item
        profile = replace(base, encryption_speed=speed, family_label=f"speed_{speed:g}")
        events, truth = simulate_from_config(config, config.seed + 1000 * (k + 1), [profile], corpus=settings)
        stats = detection_latency(analyze_trace(model, events, signatures, config.signature_limit),
                                  truth, model.params.window)
        return RateSweepRow(speed, stats.detection_rate, stats.episodes, stats.detected, stats.mean)

    rows = _run_cells(cell, list(enumerate(speeds)), workers, 'speed sweep', progress)
    for row in rows:
        logger.info(f"speed={row.value:g}MB/s detection_rate={row.detection_rate:.3f}")
    return rows


def sweep_load(config: PipelineConfig, levels: Sequence[float] = LOAD_LEVELS,
               episodes: int = SWEEP_EPISODES, model: Optional[DetectionModel] = None,
               signatures: Sequence[SignaturePattern] = (), workers: Optional[int] = None,
               progress: bool = False) -> List[RateSweepRow]:
    """Detection rate and latency as benign activity is scaled up."""
    model = _fixed_model(config, model, signatures)
    settings = _sweep_settings(config, episodes)

    def cell(item: Tuple[int, float]) -> RateSweepRow:
        k, level = item
        benign = replace(config.benign, event_rate=config.benign.event_rate * level,
                         net_rate=config.benign.net_rate * level)
        events, truth = simulate_from_config(config, config.seed + 2000 * (k + 1), benign=benign,
                                             corpus=settings)
        stats = detection_latency(analyze_trace(model, events, signatures, config.signature_limit),
                                  truth, model.params.window)
        return RateSweepRow(level, stats.detection_rate, stats.episodes, stats.detected, stats.mean)

    rows = _run_cells(cell, list(enumerate(levels)), workers, 'load sweep', progress)
    for row in rows:
        logger.info(f"load={row.value:g}x detection_rate={row.detection_rate:.3f} "
                    f"mean_latency={row.mean_latency:.2f}s")
    return rows


WINDOW_SWEEP_HEADER = ('window', 'accuracy', 'accuracy_std', 'precision', 'recall', 'seeds')
SPEED_SWEEP_HEADER = ('speed_mb_s', 'detection_rate', 'episodes', 'detected', 'mean_latency')
LOAD_SWEEP_HEADER = ('load_level', 'detection_rate', 'episodes', 'detected', 'mean_latency')


def window_rows(rows: Sequence[WindowSweepRow]) -> List[tuple]:
    return [(r.size, r.accuracy, r.accuracy_std, r.precision, r.recall, r.seeds) for r in rows]


def rate_rows(rows: Sequence[RateSweepRow]) -> List[tuple]:
    return [(r.value, r.detection_rate, r.episodes, r.detected, r.mean_latency) for r in rows]


MIN_PRECISION = 0.90
MIN_RECALL = 0.88
MIN_WINDOW_GAIN = 0.03
MAX_INVERSION = 0.02
MIN_DETECTION_RATE = 0.85
MAX_RATE_SPREAD = 0.08


def quality_failures(counts: ConfusionCounts, min_precision: float = MIN_PRECISION,
                     min_recall: float = MIN_RECALL) -> List[str]:
    failures = []
    if precision(counts) < min_precision:
        failures.append(f"precision {precision(counts):.3f} < {min_precision}")
    if recall(counts) < min_recall:
        failures.append(f"recall {recall(counts):.3f} < {min_recall}")
    return failures


def window_trend_failures(rows: Sequence[WindowSweepRow], short: float = 10.0, long: float = 40.0) -> List[str]:
    """Longer windows should beat short ones, with at most one notable inversion."""
    failures = []
    by_size = {r.size: r.accuracy for r in rows}
    if short in by_size and long in by_size and by_size[long] < by_size[short] + MIN_WINDOW_GAIN:
        failures.append(f"accuracy({long:g}) {by_size[long]:.3f} < accuracy({short:g}) "
                        f"{by_size[short]:.3f} + {MIN_WINDOW_GAIN}")
    ordered = sorted(rows, key=lambda r: r.size)
    inversions = sum(1 for a, b in zip(ordered, ordered[1:]) if a.accuracy - b.accuracy > MAX_INVERSION)
    if inversions > 1:
        failures.append(f"{inversions} adjacent window-size inversions above {MAX_INVERSION}")
    return failures


def rate_failures(rows: Sequence[RateSweepRow], min_rate: float = MIN_DETECTION_RATE,
                  max_spread: Optional[float] = MAX_RATE_SPREAD) -> List[str]:
    failures = [f"detection rate {r.detection_rate:.3f} < {min_rate} at {r.value:g}"
                for r in rows if r.detection_rate < min_rate]
    if max_spread is not None and rows:
        spread = max(r.detection_rate for r in rows) - min(r.detection_rate for r in rows)
        if spread > max_spread:
            failures.append(f"detection rate spread {spread:.3f} > {max_spread}")
    return failures
