"""Append-only per-session event logs.

Each session's history lives in one JSONL file: creation, every utterance,
feedback reports, resets, rollbacks, baseline submissions, closure, and (for
audit) every chat exchange. Mutating endpoints append and fsync before they
answer, so replaying a log reconstructs the exact session state after any
acknowledged mutation.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

EVENT_CREATED = "created"
EVENT_UTTERANCE = "utterance"
EVENT_FEEDBACK = "feedback"
EVENT_RESET = "reset"
EVENT_ROLLBACK = "rollback"
EVENT_BASELINE = "baseline_response"
EVENT_CLOSED = "closed"
EVENT_EXCHANGE = "exchange"  # audit only; ignored on replay


class PersistenceError(Exception):
    pass


class EventLog:
    """One append-only JSONL file. Appends are flushed and fsynced so an
    acknowledged event survives a crash."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: dict) -> None:
        line = json.dumps(event, ensure_ascii=False)
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write(line + "\n")
            handle.flush()
            os.fsync(handle.fileno())

    def events(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise PersistenceError(f"{self.path}:{lineno}: bad event: {exc}") from exc
        return out


class EventStore:
    """Directory of per-session event logs."""

    def __init__(self, base_dir: str | Path) -> None:
        self.base_dir = Path(base_dir)
        self.base_dir.mkdir(parents=True, exist_ok=True)

    def log_for(self, session_id: str) -> EventLog:
        return EventLog(self.base_dir / f"{session_id}.events.jsonl")

    def session_ids(self) -> list[str]:
        return sorted(
            p.name.removesuffix(".events.jsonl")
            for p in self.base_dir.glob("*.events.jsonl")
        )
