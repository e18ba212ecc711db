"""Event schema, ground-truth records and the error hierarchy."""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional
import json


class DetectorError(Exception):
    """Base exception for trace, model and pipeline errors"""
    pass


class MalformedRecord(DetectorError):
    """Raised when a trace line cannot be parsed into an EventRecord"""

    def __init__(self, reason: str, line_no: Optional[int] = None):
        self.reason = reason
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}{reason}")


class DuplicateKey(DetectorError):
    """Two records share the same (ts, seq) pair"""
    pass


class InvalidProfile(DetectorError):
    pass


class WindowMismatch(DetectorError):
    pass


class OutOfOrderEvent(DetectorError):
    pass


class InvalidSmoothing(DetectorError):
    pass


class InvalidVocab(DetectorError):
    pass


class UnknownNode(DetectorError):
    pass


class UnfittedModel(DetectorError):
    pass


class InsufficientData(DetectorError):
    pass


class DimensionMismatch(DetectorError):
    pass


class DegenerateLabels(DetectorError):
    pass


class MalformedSignature(DetectorError):
    pass


class CoverageGap(DetectorError):
    pass


class IncompatibleModel(DetectorError):
    pass


class UnreadableInput(DetectorError):
    pass


class LayoutMismatch(DetectorError):
    """Feature layout version of a document differs from this build"""
    pass


class ConfigError(DetectorError):
    pass


class NonConvergence(DetectorError, RuntimeWarning):
    """Issued as a warning; the last iterate is still returned"""
    pass


class OperationKind(str, Enum):
    FILE_READ = 'FILE_READ'
    FILE_WRITE = 'FILE_WRITE'
    FILE_RENAME = 'FILE_RENAME'
    FILE_DELETE = 'FILE_DELETE'
    PROC_SPAWN = 'PROC_SPAWN'
    NET_CONNECT = 'NET_CONNECT'
    NET_SEND = 'NET_SEND'
    REG_SET = 'REG_SET'
    CRYPTO_API = 'CRYPTO_API'

    @property
    def is_network(self) -> bool:
        return self in (OperationKind.NET_CONNECT, OperationKind.NET_SEND)


class TargetClass(str, Enum):
    USER_DOC = 'USER_DOC'
    SYSTEM_FILE = 'SYSTEM_FILE'
    TEMP = 'TEMP'
    NETWORK_HOST = 'NETWORK_HOST'
    REGISTRY = 'REGISTRY'
    OTHER = 'OTHER'


REQUIRED_FIELDS = ('ts', 'seq', 'pid', 'proc', 'op', 'target')


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_real(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class EventRecord:
    ts: float
    seq: int
    pid: int
    proc: str
    op: OperationKind
    target: str
    bytes: int = 0
    entropy: float = 0.0

    @property
    def sort_key(self) -> tuple:
        return (self.ts, self.seq)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], line_no: Optional[int] = None) -> 'EventRecord':
        """Create an EventRecord from a decoded trace object, validating every field."""
        missing = [name for name in REQUIRED_FIELDS if name not in data]
        if missing:
            raise MalformedRecord(f"missing field(s): {', '.join(missing)}", line_no)

        ts, seq, pid = data['ts'], data['seq'], data['pid']
        proc, op_token, target = data['proc'], data['op'], data['target']
        nbytes = data.get('bytes', 0)
        entropy = data.get('entropy', 0.0)

        if not _is_real(ts) or ts != ts or ts < 0 or ts == float('inf'):
            raise MalformedRecord(f"ts must be a non-negative finite number, got {ts!r}", line_no)
        if not _is_int(seq):
            raise MalformedRecord(f"seq must be an integer, got {seq!r}", line_no)
        if not _is_int(pid) or pid < 0:
            raise MalformedRecord(f"pid must be an integer >= 0, got {pid!r}", line_no)
        if not isinstance(proc, str) or not proc:
            raise MalformedRecord("proc must be a non-empty string", line_no)
        if not isinstance(target, str):
            raise MalformedRecord("target must be a string", line_no)
        try:
            op = OperationKind(op_token)
        except ValueError:
            raise MalformedRecord(f"unknown op {op_token!r}", line_no)
        if not _is_int(nbytes) or nbytes < 0:
            raise MalformedRecord(f"bytes must be an integer >= 0, got {nbytes!r}", line_no)
        if not _is_real(entropy) or not 0.0 <= entropy <= 8.0:
            raise MalformedRecord(f"entropy {entropy!r} outside [0, 8]", line_no)

        return cls(
            ts=float(ts),
            seq=seq,
            pid=pid,
            proc=proc,
            op=op,
            target=target,
            bytes=nbytes,
            entropy=float(entropy),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ts': self.ts,
            'seq': self.seq,
            'pid': self.pid,
            'proc': self.proc,
            'op': self.op.value,
            'target': self.target,
            'bytes': self.bytes,
            'entropy': self.entropy,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))


LABEL_BENIGN = 'benign'
LABEL_RANSOMWARE = 'ransomware'


@dataclass(frozen=True)
class LabelInterval:
    """One ground-truth record of the sidecar file."""
    start: float
    end: float
    label: str
    family: str
    pid: Optional[int] = None

    @property
    def is_ransomware(self) -> bool:
        return self.label == LABEL_RANSOMWARE

    @classmethod
    def from_dict(cls, data: Dict[str, Any], line_no: Optional[int] = None) -> 'LabelInterval':
        try:
            start = float(data['start'])
            end = float(data['end'])
            label = data['label']
            family = str(data.get('family', ''))
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedRecord(f"bad ground-truth record: {e}", line_no)
        if label not in (LABEL_BENIGN, LABEL_RANSOMWARE):
            raise MalformedRecord(f"unknown label {label!r}", line_no)
        if end < start:
            raise MalformedRecord(f"interval end {end} before start {start}", line_no)
        pid = data.get('pid')
        if pid is not None and not _is_int(pid):
            raise MalformedRecord(f"pid must be an integer, got {pid!r}", line_no)
        return cls(start=start, end=end, label=label, family=family, pid=pid)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            'start': self.start,
            'end': self.end,
            'label': self.label,
            'family': self.family,
        }
        if self.pid is not None:
            data['pid'] = self.pid
        return data

    def to_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
