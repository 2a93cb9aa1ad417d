"""File-backed persistence: run records, session event logs, reports.

Single-node directory tree, no database. The layout is the interchange
format: everything the HTTP service exposes lives on disk, so service
restarts lose nothing and event streams resume via cursors.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path


class StoreError(Exception):
    pass


class NotFoundError(StoreError):
    pass


class CorruptStoreError(StoreError):
    """Stored config bytes no longer match the recorded hash."""


@dataclass
class RunRecord:
    run_id: str
    kind: str  # duo | orchestra | baseline | forge | bench
    created_at: float
    status: str
    session_ids: list[str] = field(default_factory=list)
    artifact_dir: str = ""
    config_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "created_at": self.created_at,
            "status": self.status,
            "session_ids": self.session_ids,
            "artifact_dir": self.artifact_dir,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


class FileStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        for sub in ("runs", "sessions", "reports", "configs"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        self._event_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # --- runs ---

    def save_run(self, record: RunRecord, config_bytes: bytes = b"") -> None:
        run_dir = self.root / "runs" / record.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        if config_bytes:
            record.config_hash = hashlib.sha256(config_bytes).hexdigest()
            (run_dir / "config.json").write_bytes(config_bytes)
        (run_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2))

    def load_run(self, run_id: str) -> RunRecord:
        run_dir = self.root / "runs" / run_id
        record_path = run_dir / "record.json"
        if not record_path.exists():
            raise NotFoundError(f"run {run_id} not found")
        record = RunRecord.from_dict(json.loads(record_path.read_text()))
        if record.config_hash:
            config_path = run_dir / "config.json"
            stored = config_path.read_bytes() if config_path.exists() else b""
            if hashlib.sha256(stored).hexdigest() != record.config_hash:
                raise CorruptStoreError(f"run {run_id}: config hash mismatch")
        return record

    def list_runs(self) -> list[RunRecord]:
        records = []
        for run_dir in sorted((self.root / "runs").iterdir()):
            if (run_dir / "record.json").exists():
                records.append(self.load_run(run_dir.name))
        return records

    def update_run_status(self, run_id: str, status: str) -> None:
        record = self.load_run(run_id)
        record.status = status
        self.save_run(record)

    # --- session events ---

    def _events_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.events.jsonl"

    def _event_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._event_locks.setdefault(session_id, threading.Lock())

    def append_event(self, session_id: str, event_type: str, payload: dict) -> dict:
        """Append one event with the next monotone event_seq."""
        path = self._events_path(session_id)
        with self._event_lock(session_id):
            last = 0
            if path.exists():
                lines = path.read_text(encoding="utf-8").splitlines()
                if lines:
                    last = json.loads(lines[-1])["event_seq"]
            event = {
                "event_seq": last + 1,
                "type": event_type,
                "session_id": session_id,
                "payload": payload,
            }
            with path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(event, ensure_ascii=False) + "\n")
        return event

    def read_events(self, session_id: str, cursor: int = 0) -> list[dict]:
        path = self._events_path(session_id)
        if not path.exists():
            return []
        events = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                event = json.loads(line)
                if event["event_seq"] > cursor:
                    events.append(event)
        return events

    # --- reports and configs ---

    def save_report(self, report_id: str, payload: dict) -> None:
        (self.root / "reports" / f"{report_id}.json").write_text(
            json.dumps(payload, indent=2))

    def load_report(self, report_id: str) -> dict:
        path = self.root / "reports" / f"{report_id}.json"
        if not path.exists():
            raise NotFoundError(f"report {report_id} not found")
        return json.loads(path.read_text())

    def load_config(self, name: str) -> tuple[dict, bytes]:
        path = self.root / "configs" / f"{name}.json"
        if not path.exists():
            raise NotFoundError(f"config {name} not found")
        raw = path.read_bytes()
        return json.loads(raw), raw

    def transcript_path(self, session_id: str) -> Path:
        return self.root / "sessions" / f"{session_id}.jsonl"
