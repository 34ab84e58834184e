"""On-disk layout of one study.

A study directory holds::

    study.conf       the StudyConfig in key = value form
    events.ndjson    the event log (or, after compaction, its tail)
    snapshot.json    state at some sequence number, written by ``compact``
    archive/         log segments that a snapshot has superseded

The directory defaults to ``$DAILYSTUDY_HOME`` or ``./study``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

from .config import StudyConfig, dump_config, load_config
from .errors import ConfigError, StorageError
from .eventlog import EventLog, read_log, write_log
from .state import StudyState, read_snapshot, replay, write_snapshot

HOME_ENV = "DAILYSTUDY_HOME"
DEFAULT_HOME = "study"


def default_home() -> Path:
    return Path(os.environ.get(HOME_ENV, DEFAULT_HOME))


class StudyStore:
    def __init__(self, root: Optional[str | Path] = None):
        self.root = Path(root) if root is not None else default_home()

    @property
    def config_path(self) -> Path:
        return self.root / "study.conf"

    @property
    def log_path(self) -> Path:
        return self.root / "events.ndjson"

    @property
    def snapshot_path(self) -> Path:
        return self.root / "snapshot.json"

    @property
    def archive_dir(self) -> Path:
        return self.root / "archive"

    def init(self, config: StudyConfig, force: bool = False) -> None:
        if self.config_path.exists() and not force:
            raise ConfigError(f"{self.config_path} already exists (use --force to replace it)")
        if self.log_path.exists() and self.log_path.stat().st_size and not force:
            raise ConfigError(f"{self.root} already holds an event log")
        self.root.mkdir(parents=True, exist_ok=True)
        self.config_path.write_text(dump_config(config))

    def config(self) -> StudyConfig:
        if not self.config_path.exists():
            raise ConfigError(f"no study at {self.root}: run `dailystudy init` first")
        return load_config(self.config_path)

    def snapshot(self, config: Optional[StudyConfig] = None) -> Optional[StudyState]:
        if not self.snapshot_path.exists():
            return None
        return read_snapshot(self.snapshot_path, config or self.config())

    def _first_seq(self, snapshot: Optional[StudyState]) -> int:
        return snapshot.seq + 1 if snapshot is not None else 1

    def open_log(self, snapshot: Optional[StudyState] = None, fsync: bool = True) -> EventLog:
        return EventLog(self.log_path, fsync=fsync, first_seq=self._first_seq(snapshot))

    def load_state(self, config: Optional[StudyConfig] = None) -> StudyState:
        """Snapshot (if any) plus every event after it."""
        config = config or self.config()
        snap = self.snapshot(config)
        tail = read_log(self.log_path, self._first_seq(snap)) if self.log_path.exists() else []
        return replay(tail, config, snap)

    def write_events(self, events) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        if self.snapshot_path.exists():
            raise StorageError(f"{self.root} is compacted; refusing to overwrite its log")
        write_log(self.log_path, events)

    def compact(self, config: Optional[StudyConfig] = None) -> int:
        """Write a snapshot at the current head and archive the log it covers."""
        config = config or self.config()
        snap = self.snapshot(config)
        first = self._first_seq(snap)
        tail = read_log(self.log_path, first) if self.log_path.exists() else []
        state = replay(tail, config, snap)
        if not tail:
            return state.seq
        tmp = self.snapshot_path.with_suffix(".tmp")
        write_snapshot(tmp, state)
        self.archive_dir.mkdir(exist_ok=True)
        segment = self.archive_dir / f"events-{first:08d}-{state.seq:08d}.ndjson"
        os.replace(self.log_path, segment)
        os.replace(tmp, self.snapshot_path)
        self.log_path.touch()
        return state.seq

    def manifest(self) -> dict:
        state = self.load_state()
        return {"root": str(self.root), "head": state.seq,
                "snapshot": json.loads(self.snapshot_path.read_text())["seq"] if self.snapshot_path.exists() else None}
