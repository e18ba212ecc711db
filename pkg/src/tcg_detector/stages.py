"""Per-stage run log: one ``stage=... count=... wall=...`` line per stage."""
from contextlib import contextmanager
from typing import Dict, Iterator
import logging
import time

logger = logging.getLogger(__name__)

STAGES = ('ingest', 'build', 'features', 'decide', 'emit')


class StageRecord:
    def __init__(self, name: str):
        self.name = name
        self.count = 0
        self.extra: Dict[str, object] = {}
        self.wall = 0.0

    def line(self) -> str:
        parts = [f"stage={self.name}", f"count={self.count}", f"wall={self.wall:.3f}"]
        parts.extend(f"{k}={v}" for k, v in self.extra.items())
        return ' '.join(parts)


@contextmanager
def stage(name: str) -> Iterator[StageRecord]:
    record = StageRecord(name)
    start = time.perf_counter()
    try:
        yield record
    finally:
        record.wall = time.perf_counter() - start
        logger.info(record.line())


def log_stage(name: str, count: int, wall: float, **extra: object) -> StageRecord:
    """Log a stage whose time was accumulated elsewhere (interleaved stream stages)."""
    record = StageRecord(name)
    record.count = count
    record.wall = wall
    record.extra.update(extra)
    logger.info(record.line())
    return record
