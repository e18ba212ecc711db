from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union
import json
import logging
from multiprocessing import Pool, cpu_count
from pathlib import Path

import numpy as np

from .types import (
    DuplicateKey,
    EventRecord,
    LabelInterval,
    MalformedRecord,
    OperationKind,
    TargetClass,
    UnreadableInput,
)

logger = logging.getLogger(__name__)

USER_DOC_EXTENSIONS = frozenset({'docx', 'xlsx', 'pptx', 'pdf', 'txt', 'jpg', 'png', 'csv', 'doc', 'xls'})
SYSTEM_PREFIXES = ('c:/windows', '/usr', '/bin', '/etc')
TEMP_SEGMENTS = frozenset({'tmp', 'temp'})

# Tried in order, per line
ENCODINGS = [
    ('utf-8-sig', 'strict'),
    ('cp1252', 'replace'),
]


def parse_event_line(line: str, line_no: Optional[int] = None) -> EventRecord:
    """Parse one trace line. Unknown extra fields are ignored."""
    try:
        data = json.loads(line)
    except json.JSONDecodeError as e:
        raise MalformedRecord(f"invalid JSON: {e.msg}", line_no)
    if not isinstance(data, dict):
        raise MalformedRecord("record is not a key-value object", line_no)
    return EventRecord.from_dict(data, line_no)


def serialize_event(event: EventRecord) -> str:
    return event.to_line()


def align_events(events: Iterable[EventRecord]) -> List[EventRecord]:
    """Stable sort by (ts, seq); duplicated pairs are rejected."""
    ordered = sorted(events, key=lambda e: (e.ts, e.seq))
    for prev, cur in zip(ordered, ordered[1:]):
        if prev.ts == cur.ts and prev.seq == cur.seq:
            raise DuplicateKey(f"duplicate (ts, seq) = ({cur.ts}, {cur.seq})")
    return ordered


def classify_target(op: OperationKind, target: str) -> TargetClass:
    if op.is_network:
        return TargetClass.NETWORK_HOST
    if op is OperationKind.REG_SET:
        return TargetClass.REGISTRY

    path = target.replace('\\', '/').lower()
    segments = [s for s in path.split('/') if s]
    if any(s in TEMP_SEGMENTS for s in segments[:-1]):
        return TargetClass.TEMP
    name = segments[-1] if segments else ''
    if '.' in name and name.rsplit('.', 1)[1] in USER_DOC_EXTENSIONS:
        return TargetClass.USER_DOC
    if path.startswith(SYSTEM_PREFIXES):
        return TargetClass.SYSTEM_FILE
    return TargetClass.OTHER


def shannon_entropy(buffer: Union[bytes, bytearray, memoryview]) -> float:
    """Entropy of a byte buffer in bits/byte."""
    data = np.frombuffer(bytes(buffer), dtype=np.uint8)
    if data.size == 0:
        return 0.0
    counts = np.bincount(data, minlength=256)
    p = counts[counts > 0] / data.size
    h = float(-(p * np.log2(p)).sum())
    return min(max(0.0, h), 8.0)


def decode_line(raw: bytes) -> str:
    """Decode one raw line; batch files and streams both go through here."""
    raw = raw.rstrip(b'\r\n')
    for encoding, errors in ENCODINGS:
        try:
            return raw.decode(encoding, errors)
        except UnicodeDecodeError:
            continue
    return raw.decode('latin1')


def decode_lines(source: Iterable[bytes]) -> Iterator[str]:
    for raw in source:
        yield decode_line(raw)


def read_lines(file_path: Union[str, Path]) -> List[str]:
    try:
        data = Path(file_path).read_bytes()
    except FileNotFoundError as e:
        raise UnreadableInput(f"Input not found: {file_path}") from e
    except OSError as e:
        raise UnreadableInput(f"Could not read {file_path}: {e}") from e
    return [decode_line(raw) for raw in data.split(b'\n')]


def _is_payload(line: str) -> bool:
    stripped = line.strip()
    return bool(stripped) and not stripped.startswith('#')


def _parse_entry(entry: Tuple[int, str]) -> Tuple[Optional[EventRecord], Optional[str]]:
    """Parse a single numbered line for the worker pool."""
    line_no, line = entry
    try:
        return parse_event_line(line, line_no), None
    except MalformedRecord as e:
        return None, str(e)


class TraceReader:
    """Reads a whole trace file, skipping (and counting) malformed lines."""

    def __init__(self, file_path: Union[str, Path], use_parallel: bool = False,
                 max_workers: Optional[int] = None, parallel_threshold: int = 50000):
        self.file_path = str(file_path)
        self.use_parallel = use_parallel
        self.max_workers = max_workers or max(1, cpu_count() - 1)
        self.parallel_threshold = parallel_threshold
        self.skipped = 0
        self.errors: List[str] = []
        self._events: Optional[List[EventRecord]] = None

    def _numbered_lines(self) -> List[Tuple[int, str]]:
        lines = read_lines(self.file_path)
        return [(no, line) for no, line in enumerate(lines, start=1) if _is_payload(line)]

    def _process_entries_parallel(self, entries: list) -> list:
        chunk_size = max(250, len(entries) // (self.max_workers * 2))
        with Pool(processes=self.max_workers) as pool:
            return pool.map(_parse_entry, entries, chunksize=chunk_size)

    def events(self) -> List[EventRecord]:
        """Parsed records in file order."""
        if self._events is not None:
            return self._events

        entries = self._numbered_lines()
        if self.use_parallel and len(entries) >= self.parallel_threshold:
            results = self._process_entries_parallel(entries)
        else:
            results = [_parse_entry(entry) for entry in entries]

        events = []
        for record, error in results:
            if record is None:
                self.skipped += 1
                self.errors.append(error)
                logger.warning(f"Skipping malformed record in {self.file_path}: {error}")
                continue
            events.append(record)
        self._events = events
        return events


def read_trace(file_path: Union[str, Path], strict: bool = False) -> List[EventRecord]:
    reader = TraceReader(file_path)
    events = reader.events()
    if strict and reader.errors:
        raise MalformedRecord(reader.errors[0])
    return events


def iter_trace_lines(lines: Iterable[str]) -> Iterator[Union[EventRecord, MalformedRecord]]:
    """Lazily parse lines from an open stream, yielding errors in place of bad records."""
    for line_no, line in enumerate(lines, start=1):
        if not _is_payload(line):
            continue
        try:
            yield parse_event_line(line, line_no)
        except MalformedRecord as e:
            yield e


def write_trace(file_path: Union[str, Path], events: Sequence[EventRecord]) -> None:
    with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
        for event in events:
            f.write(event.to_line() + '\n')


def truth_path_for(trace_path: Union[str, Path]) -> Path:
    """Default sidecar location next to a trace file."""
    path = Path(trace_path)
    return path.with_name(path.stem + '.truth.jsonl')


def read_ground_truth(file_path: Union[str, Path]) -> List[LabelInterval]:
    intervals = []
    for line_no, line in enumerate(read_lines(file_path), start=1):
        if not _is_payload(line):
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(f"invalid JSON: {e.msg}", line_no)
        if not isinstance(data, dict):
            raise MalformedRecord("record is not a key-value object", line_no)
        intervals.append(LabelInterval.from_dict(data, line_no))
    return intervals


def write_ground_truth(file_path: Union[str, Path], intervals: Sequence[LabelInterval]) -> None:
    with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
        for interval in intervals:
            f.write(interval.to_line() + '\n')
