"""Append-only JSONL event log."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

KINDS = (
    "ContestStarted",
    "ContestantRegistered",
    "SubmissionReceived",
    "EvaluationCompleted",
    "HintRequested",
    "ProblemUnlocked",
    "ContestEnded",
)


class LogCorrupted(Exception):
    def __init__(self, line_no, reason):
        super().__init__(f"event log line {line_no}: {reason}")
        self.line_no = line_no


class SequenceGap(Exception):
    def __init__(self, seq):
        super().__init__(f"event sequence gap: seq {seq} missing")
        self.seq = seq


@dataclass(frozen=True)
class ContestEvent:
    seq: int
    at: float
    kind: str
    data: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "at": self.at, "kind": self.kind, **self.data},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "ContestEvent":
        obj = json.loads(line)
        if not isinstance(obj, dict):
            raise ValueError("event must be a JSON object")
        seq, at, kind = obj.pop("seq"), obj.pop("at"), obj.pop("kind")
        if not isinstance(seq, int) or isinstance(seq, bool):
            raise ValueError("seq must be an integer")
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        return cls(seq, float(at), kind, obj)


def check_dense(events: Iterable[ContestEvent]):
    expected = 1
    for ev in events:
        if ev.seq != expected:
            raise SequenceGap(expected)
        expected += 1


def read_events(path) -> list[ContestEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            if not line.endswith("\n"):
                raise LogCorrupted(no, "truncated record")
            if not line.strip():
                continue
            try:
                events.append(ContestEvent.from_json(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise LogCorrupted(no, str(exc)) from None
    return events


class EventLog:
    """Durable sink: one JSON object per line, fsync after every append."""

    def __init__(self, path, *, fsync=True):
        self.path = Path(path)
        self.fsync = fsync
        self._fh = None
        self._lock = threading.Lock()

    def append(self, event: ContestEvent):
        with self._lock:
            if self._fh is None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(event.to_json() + "\n")
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class MemoryLog:
    """In-memory sink used when no durable log is wanted."""

    def __init__(self):
        self.events: list[ContestEvent] = []

    def append(self, event: ContestEvent):
        self.events.append(event)

    def close(self):
        pass
