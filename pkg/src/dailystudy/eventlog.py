"""Append-only newline-delimited JSON event log.

Each line is one event::

    {"seq": 7, "at": "2021-03-01T15:00:00+00:00", "kind": "BonusPaid",
     "worker_id": "A1B2", "payload": {...}, "crc": "3f9a0c1d5e7b2a44"}

``crc`` is the first 16 hex digits of the SHA-256 of the canonical JSON
encoding (sorted keys, no whitespace) of the other five fields. Sequence
numbers have no gaps. A full log starts at 1; the tail left behind by
compaction starts right after the snapshot it accompanies.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .domain import StudyEvent
from .errors import CorruptLog, StorageError

log = logging.getLogger(__name__)


def _canonical(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def checksum(record: dict) -> str:
    return hashlib.sha256(_canonical(record).encode()).hexdigest()[:16]


def encode_event(event: StudyEvent) -> str:
    rec = event.to_record()
    rec["crc"] = checksum(rec)
    return _canonical(rec) + "\n"


def decode_lines(lines: Iterable[bytes], first_seq: int = 1) -> Iterator[StudyEvent]:
    offset = 0
    expected = first_seq
    for line_no, raw in enumerate(lines, start=1):
        if not raw.endswith(b"\n"):
            raise CorruptLog("truncated record", line_no, offset)
        try:
            rec = json.loads(raw)
            crc = rec.pop("crc")
        except (ValueError, KeyError, AttributeError) as exc:
            raise CorruptLog(f"unparseable record: {exc}", line_no, offset) from exc
        if checksum(rec) != crc:
            raise CorruptLog("checksum mismatch", line_no, offset)
        try:
            event = StudyEvent.from_record(rec)
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptLog(f"malformed record: {exc}", line_no, offset) from exc
        if event.seq != expected:
            raise CorruptLog(f"sequence gap: expected {expected}, got {event.seq}", line_no, offset)
        expected += 1
        offset += len(raw)
        yield event


def read_log(path: str | Path, first_seq: int = 1) -> list[StudyEvent]:
    try:
        with open(path, "rb") as fh:
            return list(decode_lines(fh, first_seq))
    except OSError as exc:
        raise StorageError(f"cannot read log {path}: {exc}") from exc


def write_log(path: str | Path, events: Iterable[StudyEvent]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(encode_event(ev))


class EventLog:
    """In-memory event sequence, optionally mirrored to an NDJSON file.

    With a path, every append is written (and by default fsynced) before it
    is acknowledged. Reopening an existing file resumes numbering after its
    last record; a damaged file raises CorruptLog instead of being repaired.
    """

    def __init__(self, path: Optional[str | Path] = None, fsync: bool = True,
                 events: Iterable[StudyEvent] = (), first_seq: int = 1):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self.first_seq = first_seq
        self._events: list[StudyEvent] = list(events)
        self._fh = None
        if self.path is not None:
            if self.path.exists() and not self._events:
                self._events = read_log(self.path, first_seq)
            try:
                self._fh = open(self.path, "ab")
            except OSError as exc:
                raise StorageError(f"cannot open log {self.path}: {exc}") from exc

    @property
    def next_seq(self) -> int:
        return self.first_seq + len(self._events)

    @property
    def head(self) -> int:
        return self.next_seq - 1

    @property
    def events(self) -> list[StudyEvent]:
        return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self) -> Iterator[StudyEvent]:
        return iter(list(self._events))

    def since(self, seq: int) -> list[StudyEvent]:
        """Events with a sequence number greater than ``seq``."""
        return self._events[max(0, seq + 1 - self.first_seq):]

    def append(self, event: StudyEvent) -> int:
        if event.seq != self.next_seq:
            raise StorageError(f"out-of-order append: expected seq {self.next_seq}, got {event.seq}")
        if self._fh is not None:
            data = encode_event(event).encode()
            pos = self._fh.tell()
            try:
                self._fh.write(data)
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                try:
                    self._fh.truncate(pos)
                except OSError:
                    log.exception("could not roll back partial append at %d", pos)
                raise StorageError(f"append failed: {exc}") from exc
        self._events.append(event)
        return event.seq

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
