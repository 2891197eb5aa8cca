"""Structured, level-filtered experiment logging.

Records are JSON lines tagged with a free-form string, the test index, the
round, and optionally the emitting peer.  Sinks filter by level and count
write failures instead of raising, so a broken disk never kills a run.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Any, IO, Optional

LEVELS = {"trace": 5, "debug": 10, "info": 20, "warning": 30, "error": 40}
LEVEL_NAMES = tuple(LEVELS)


def level_value(name: str) -> int:
    try:
        return LEVELS[name]
    except KeyError:
        raise ValueError(f"unknown log level: {name!r}") from None


@dataclass
class LogRecord:
    level: str
    tag: str
    test_index: int
    round: int
    peer_id: Optional[int] = None
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        doc: dict[str, Any] = {
            "level": self.level,
            "tag": self.tag,
            "test": self.test_index,
            "round": self.round,
        }
        if self.peer_id is not None:
            doc["peer"] = self.peer_id
        doc["payload"] = self.payload
        return json.dumps(doc, separators=(",", ":"), sort_keys=False)


class LogSink:
    """Threshold-filtered record sink; subclasses provide the writer."""

    def __init__(self, threshold: str = "info"):
        self.threshold = level_value(threshold)
        self.record_count = 0
        self.write_failures = 0
        self._lock = threading.Lock()

    def accepts(self, level: str) -> bool:
        return level_value(level) >= self.threshold

    def emit(self, record: LogRecord) -> None:
        if not self.accepts(record.level):
            return
        line = record.to_json()
        with self._lock:
            try:
                self._write(line)
                self.record_count += 1
            except (OSError, ValueError):
                self.write_failures += 1

    def emit_many(self, records) -> None:
        for record in records:
            self.emit(record)

    def _write(self, line: str) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class JsonlSink(LogSink):
    """Appends one JSON line per record to a file."""

    def __init__(self, path, threshold: str = "info"):
        super().__init__(threshold)
        self.path = path
        self._fh: Optional[IO[str]] = open(path, "w", encoding="utf-8")

    def _write(self, line: str) -> None:
        assert self._fh is not None
        self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None


class MemorySink(LogSink):
    """Collects records in memory; used by tests and metric scrapers."""

    def __init__(self, threshold: str = "trace"):
        super().__init__(threshold)
        self.lines: list[str] = []
        self.records: list[LogRecord] = []

    def emit(self, record: LogRecord) -> None:
        if not self.accepts(record.level):
            return
        with self._lock:
            self.records.append(record)
            self.lines.append(record.to_json())
            self.record_count += 1

    def _write(self, line: str) -> None:  # pragma: no cover - emit() bypasses
        self.lines.append(line)


class NullSink(LogSink):
    def __init__(self):
        super().__init__("error")
        self.threshold = level_value("error") + 1

    def _write(self, line: str) -> None:  # pragma: no cover
        pass
