"""HTTP session API.

Serves both conditions to the web client and the harness: the full simulated
condition (live student agents, feedback, reset/rollback) and the baseline
condition (static scenario text, a free-text strategy submission, and the
matched strategy table as feedback). Sessions persist to append-only event
logs and are rebuilt from them on startup.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel

from . import feedback as feedback_mod
from . import persistence
from .catalog import Catalog, UnknownProblem, UnknownTheme, load_catalog, load_default_catalog, strategies_for_scenario
from .gateway import Backend, BackendConfig, ChatExchange, ChatResult, GatewayError, configure_backend
from .orchestrator import (
    ORIGIN_TUTOR,
    EmptyMessage,
    IndexOutOfRange,
    NotATutorUtterance,
    OrchestratorError,
    Phase,
    Session,
    SessionClosed,
    SessionConfig,
    create_session,
)
from .prompts import PromptRenderer

CONDITION_TUTORUP = "tutorup"
CONDITION_BASELINE = "baseline"

STATUS_OPEN = "open"
STATUS_CLOSED = "closed"

TEST_SESSION_SECONDS = 600.0  # test-mode sessions close after 10 minutes


@dataclass
class SessionRecord:
    session_id: str
    condition: str
    theme_id: str
    problem_id: str
    created_at: float
    transcript_path: str
    status: str = STATUS_OPEN
    test_mode: bool = False


@dataclass
class BaselineResponse:
    session_id: str
    free_text: str
    submitted_at: float
    version: int


@dataclass
class _Entry:
    record: SessionRecord
    session: Session | None  # None for baseline sessions
    log: persistence.EventLog
    baseline_responses: list[BaselineResponse] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    # Effective log length the event file replays to; utterances past this
    # index still need persisting.
    persisted_log_len: int = 0


class _RecordingBackend:
    """Wraps the shared backend so every exchange lands in the session's
    event log for audit."""

    def __init__(self, inner: Backend, log: persistence.EventLog) -> None:
        self._inner = inner
        self._log = log
        self.name = inner.name

    def complete(self, exchange: ChatExchange) -> ChatResult:
        result = self._inner.complete(exchange)
        self._log.append(
            {
                "type": persistence.EVENT_EXCHANGE,
                "tag": exchange.tag,
                "messages": len(exchange.messages),
                "reply_chars": len(result.text),
                "backend": result.backend,
            }
        )
        return result


class SessionStore:
    """All live sessions, keyed by id. Handlers are stateless over this
    store; per-session mutations are queued on the entry's lock."""

    def __init__(
        self,
        catalog: Catalog,
        data_dir: str | Path,
        backend: Backend | None = None,
        renderer: PromptRenderer | None = None,
        session_config: SessionConfig | None = None,
        feedback_config: feedback_mod.FeedbackConfig | None = None,
        clock: Callable[[], float] = time.time,
        session_clock: Callable[[], float] | None = None,
    ) -> None:
        self.catalog = catalog
        self.store = persistence.EventStore(data_dir)
        self.backend = backend
        self.renderer = renderer or PromptRenderer()
        self.session_config = session_config or SessionConfig()
        self.clock = clock
        self.session_clock = session_clock
        self._entries: dict[str, _Entry] = {}
        self._lock = threading.Lock()
        self._feedback = (
            feedback_mod.FeedbackEngine(
                catalog, backend, self.renderer, feedback_config
            )
            if backend is not None
            else None
        )
        self.recover()

    # ── creation and recovery ─────────────────────────────────────────

    def create(self, theme_id: str, problem_id: str, condition: str, test_mode: bool = False) -> _Entry:
        if condition not in (CONDITION_TUTORUP, CONDITION_BASELINE):
            raise HTTPException(400, f"unknown condition {condition!r}")
        try:
            self.catalog.scenario_for_theme(theme_id)
            self.catalog.problem(problem_id)
        except (UnknownTheme, UnknownProblem) as exc:
            raise HTTPException(400, str(exc)) from exc
        if condition == CONDITION_TUTORUP and self.backend is None:
            raise HTTPException(503, "no chat backend configured for simulated sessions")
        if test_mode and condition != CONDITION_TUTORUP:
            raise HTTPException(400, "test mode applies only to simulated sessions")

        session_id = uuid.uuid4().hex
        log = self.store.log_for(session_id)
        record = SessionRecord(
            session_id=session_id,
            condition=condition,
            theme_id=theme_id,
            problem_id=problem_id,
            created_at=self.clock(),
            transcript_path=str(log.path),
            test_mode=test_mode,
        )
        session = None
        if condition == CONDITION_TUTORUP:
            session = create_session(
                self.catalog,
                theme_id,
                problem_id,
                config=self.session_config,
                backend=_RecordingBackend(self.backend, log),
                renderer=self.renderer,
                session_id=session_id,
                clock=self.session_clock,
            )
        entry = _Entry(record=record, session=session, log=log)
        log.append(
            {
                "type": persistence.EVENT_CREATED,
                "session_id": session_id,
                "condition": condition,
                "theme_id": theme_id,
                "problem_id": problem_id,
                "test_mode": test_mode,
                "created_at": record.created_at,
                "config": asdict(self.session_config),
            }
        )
        if session is not None:
            _persist_new_utterances(entry)
        with self._lock:
            self._entries[session_id] = entry
        return entry

    def recover(self) -> None:
        """Rebuild every persisted session by replaying its event log. No
        backend calls happen during replay."""
        for session_id in self.store.session_ids():
            if session_id in self._entries:
                continue
            log = self.store.log_for(session_id)
            events = log.events()
            if not events or events[0].get("type") != persistence.EVENT_CREATED:
                continue
            created = events[0]
            record = SessionRecord(
                session_id=session_id,
                condition=created["condition"],
                theme_id=created["theme_id"],
                problem_id=created["problem_id"],
                created_at=created["created_at"],
                transcript_path=str(log.path),
                test_mode=created.get("test_mode", False),
            )
            entry = _Entry(record=record, session=None, log=log)
            if record.condition == CONDITION_TUTORUP:
                config = SessionConfig(**created.get("config", {}))
                session = create_session(
                    self.catalog,
                    record.theme_id,
                    record.problem_id,
                    config=config,
                    backend=_RecordingBackend(self.backend, log) if self.backend else _NullBackend(),
                    renderer=self.renderer,
                    session_id=session_id,
                    clock=self.session_clock,
                )
                session.restore_truncate(0)
                entry.session = session
            self._apply_events(entry, events[1:])
            if entry.session is not None:
                entry.persisted_log_len = len(entry.session.log)
            with self._lock:
                self._entries[session_id] = entry

    def _apply_events(self, entry: _Entry, events: list[dict]) -> None:
        session = entry.session
        for event in events:
            etype = event.get("type")
            if etype == persistence.EVENT_UTTERANCE and session is not None:
                session.restore_utterance(
                    event["speaker"], event["text"], event["origin"], event["ts"]
                )
            elif etype == persistence.EVENT_FEEDBACK and session is not None:
                session.record_feedback(feedback_mod.report_from_dict(event["report"]))
            elif etype == persistence.EVENT_RESET and session is not None:
                session.restore_truncate(session.initial_length)
            elif etype == persistence.EVENT_ROLLBACK and session is not None:
                session.restore_truncate(event["index"])
            elif etype == persistence.EVENT_BASELINE:
                entry.baseline_responses.append(
                    BaselineResponse(
                        session_id=entry.record.session_id,
                        free_text=event["free_text"],
                        submitted_at=event["ts"],
                        version=event["version"],
                    )
                )
            elif etype == persistence.EVENT_CLOSED:
                entry.record.status = STATUS_CLOSED
                if session is not None:
                    session.close()

    # ── access ────────────────────────────────────────────────────────

    def entry(self, session_id: str) -> _Entry:
        with self._lock:
            entry = self._entries.get(session_id)
        if entry is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return entry

    def enforce_deadline(self, entry: _Entry) -> None:
        """Test-mode sessions close after their wall-clock budget."""
        if not entry.record.test_mode or entry.record.status == STATUS_CLOSED:
            return
        if self.clock() - entry.record.created_at > TEST_SESSION_SECONDS:
            self.close_entry(entry)

    def close_entry(self, entry: _Entry) -> None:
        entry.record.status = STATUS_CLOSED
        if entry.session is not None:
            entry.session.close()
        entry.log.append({"type": persistence.EVENT_CLOSED, "ts": self.clock()})

    def feedback_engine(self) -> feedback_mod.FeedbackEngine:
        if self._feedback is None:
            raise HTTPException(503, "no chat backend configured")
        return self._feedback


class _NullBackend:
    """Placeholder for replaying tutorup sessions when no backend is
    configured; any live completion attempt is a 502-grade failure."""

    name = "null"

    def complete(self, exchange: ChatExchange) -> ChatResult:
        raise GatewayError("no chat backend configured")


# ── payload shaping ───────────────────────────────────────────────────────


def _utterance_payload(utterance) -> dict:
    return {
        "index": utterance.index,
        "speaker": utterance.speaker,
        "text": utterance.text,
        "origin": utterance.origin,
    }


def _scenario_payload(catalog: Catalog, theme_id: str, problem_id: str) -> dict:
    theme = catalog.theme(theme_id)
    scenario = catalog.scenario_for_theme(theme_id)
    problem = catalog.problem(problem_id)
    matched = strategies_for_scenario(catalog, theme_id)
    return {
        "theme": {
            "id": theme.id,
            "title": theme.title,
            "description": theme.description,
            "reactive_examples": list(theme.reactive_examples),
        },
        "problem": {"id": problem.id, "statement": problem.statement},
        # Student cards: public fields only; early-disengagement behavior is
        # never exposed through the API.
        "students": [p.public_card() for p in scenario.personas],
        "matched_strategies": [
            {"id": s.id, "title": s.title, "instances": list(s.instances)} for s in matched
        ],
    }


def _session_payload(store: SessionStore, entry: _Entry) -> dict:
    record = entry.record
    payload = {
        "session_id": record.session_id,
        "condition": record.condition,
        "test_mode": record.test_mode,
        "status": record.status,
        "created_at": record.created_at,
        "scenario": _scenario_payload(store.catalog, record.theme_id, record.problem_id),
        "transcript": [],
        "phase": None,
        "feedback_history": [],
    }
    if record.test_mode:
        payload["time_limit_seconds"] = TEST_SESSION_SECONDS
    if entry.session is not None:
        state = entry.session.state()
        payload["transcript"] = [_utterance_payload(u) for u in state.log]
        payload["phase"] = state.phase.value
        payload["feedback_history"] = [
            feedback_mod.report_to_dict(r) for r in state.feedback_history
        ]
    return payload


# ── request models ────────────────────────────────────────────────────────


class CreateSessionRequest(BaseModel):
    theme_id: str
    problem_id: str
    condition: str
    test_mode: bool = False


class MessageRequest(BaseModel):
    text: str


class RollbackRequest(BaseModel):
    index: int


class BaselineSubmitRequest(BaseModel):
    free_text: str


# ── app ───────────────────────────────────────────────────────────────────


def create_app(store: SessionStore, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="tutorsim", version="0.1.0")

    def tutorup_entry(session_id: str) -> _Entry:
        entry = store.entry(session_id)
        if entry.record.condition != CONDITION_TUTORUP:
            raise HTTPException(409, "not a simulated session")
        return entry

    def ensure_open(entry: _Entry) -> None:
        store.enforce_deadline(entry)
        if entry.record.status == STATUS_CLOSED:
            raise HTTPException(409, "session is closed")

    @app.get("/api/v1/scenarios")
    def list_scenarios() -> dict:
        return {
            "scenarios": [
                _scenario_payload(store.catalog, sc.theme_id, sc.problem_id)
                for sc in store.catalog.scenarios
            ],
            "problems": [
                {"id": p.id, "statement": p.statement} for p in store.catalog.problems
            ],
        }

    @app.post("/api/v1/sessions", status_code=201)
    def api_create_session(body: CreateSessionRequest) -> dict:
        entry = store.create(body.theme_id, body.problem_id, body.condition, body.test_mode)
        return _session_payload(store, entry)

    @app.get("/api/v1/sessions/{session_id}")
    def api_get_session(session_id: str) -> dict:
        entry = store.entry(session_id)
        store.enforce_deadline(entry)
        return _session_payload(store, entry)

    @app.post("/api/v1/sessions/{session_id}/messages")
    def api_post_message(session_id: str, body: MessageRequest) -> dict:
        entry = tutorup_entry(session_id)
        with entry.lock:
            ensure_open(entry)
            if entry.session.phase != Phase.AWAITING_TUTOR:
                raise HTTPException(409, "session is not awaiting tutor input")
            try:
                produced = entry.session.submit_tutor_message(body.text)
            except EmptyMessage as exc:
                raise HTTPException(422, str(exc)) from exc
            except SessionClosed as exc:
                raise HTTPException(409, str(exc)) from exc
            except GatewayError as exc:
                _persist_new_utterances(entry)
                raise HTTPException(502, f"chat backend failed: {exc}") from exc
            _persist_new_utterances(entry)
            return {"utterances": [_utterance_payload(u) for u in produced]}

    @app.post("/api/v1/sessions/{session_id}/feedback/{kind}")
    def api_feedback(session_id: str, kind: str) -> dict:
        if kind not in ("immediate", "async"):
            raise HTTPException(400, f"unknown feedback kind {kind!r}")
        entry = tutorup_entry(session_id)
        with entry.lock:
            ensure_open(entry)
            if entry.record.test_mode:
                raise HTTPException(409, "feedback is disabled in test mode")
            engine = store.feedback_engine()
            try:
                if kind == "immediate":
                    report = engine.immediate(entry.session)
                else:
                    report = engine.asynchronous(entry.session)
            except feedback_mod.NoTutorTurnYet as exc:
                raise HTTPException(409, str(exc)) from exc
            except feedback_mod.ParseFailure as exc:
                raise HTTPException(502, f"feedback parsing failed: {exc}") from exc
            except GatewayError as exc:
                raise HTTPException(502, f"chat backend failed: {exc}") from exc
            payload = feedback_mod.report_to_dict(report)
            entry.log.append(
                {"type": persistence.EVENT_FEEDBACK, "report": payload, "ts": store.clock()}
            )
            return {"report": payload}

    @app.post("/api/v1/sessions/{session_id}/reset")
    def api_reset(session_id: str) -> dict:
        entry = tutorup_entry(session_id)
        with entry.lock:
            ensure_open(entry)
            if entry.record.test_mode:
                raise HTTPException(409, "reset is disabled in test mode")
            try:
                state = entry.session.reset()
            except SessionClosed as exc:
                raise HTTPException(409, str(exc)) from exc
            entry.log.append({"type": persistence.EVENT_RESET, "ts": store.clock()})
            entry.persisted_log_len = entry.session.initial_length
            return {
                "transcript": [_utterance_payload(u) for u in state.log],
                "phase": state.phase.value,
            }

    @app.post("/api/v1/sessions/{session_id}/rollback")
    def api_rollback(session_id: str, body: RollbackRequest) -> dict:
        entry = tutorup_entry(session_id)
        with entry.lock:
            ensure_open(entry)
            if entry.record.test_mode:
                raise HTTPException(409, "rollback is disabled in test mode")
            try:
                result = entry.session.rollback(body.index)
            except (NotATutorUtterance, IndexOutOfRange) as exc:
                raise HTTPException(409, str(exc)) from exc
            except SessionClosed as exc:
                raise HTTPException(409, str(exc)) from exc
            entry.log.append(
                {"type": persistence.EVENT_ROLLBACK, "index": body.index, "ts": store.clock()}
            )
            entry.persisted_log_len = body.index
            return {
                "transcript": [_utterance_payload(u) for u in result.state.log],
                "phase": result.state.phase.value,
                "recovered_text": result.recovered_text,
            }

    @app.post("/api/v1/sessions/{session_id}/baseline-response")
    def api_baseline_submit(session_id: str, body: BaselineSubmitRequest) -> dict:
        entry = store.entry(session_id)
        if entry.record.condition != CONDITION_BASELINE:
            raise HTTPException(409, "not a baseline session")
        with entry.lock:
            ensure_open(entry)
            free_text = body.free_text.strip()
            if not free_text:
                raise HTTPException(422, "free_text must be nonempty")
            version = len(entry.baseline_responses) + 1
            response = BaselineResponse(
                session_id=session_id,
                free_text=free_text,
                submitted_at=store.clock(),
                version=version,
            )
            entry.baseline_responses.append(response)
            entry.log.append(
                {
                    "type": persistence.EVENT_BASELINE,
                    "free_text": free_text,
                    "version": version,
                    "ts": response.submitted_at,
                }
            )
            theme = store.catalog.theme(entry.record.theme_id)
            matched = strategies_for_scenario(store.catalog, entry.record.theme_id)
            return {
                "version": version,
                "pairs": [
                    {
                        "scenario": theme.title,
                        "strategy": s.title,
                        "instances": list(s.instances),
                    }
                    for s in matched
                ],
            }

    @app.get("/api/v1/sessions/{session_id}/transcript")
    def api_export_transcript(
        session_id: str, blinded: bool = Query(default=True)
    ) -> PlainTextResponse:
        entry = store.entry(session_id)
        lines = [export_header(entry.record, blinded=blinded)]
        if entry.session is not None:
            for rec in entry.session.export_records():
                lines.append(
                    json.dumps(
                        {
                            "type": "utterance",
                            "index": rec["index"],
                            "speaker": rec["speaker"],
                            "origin": rec["origin"],
                            "text": rec["text"],
                            "ts": rec["ts"],
                        },
                        ensure_ascii=False,
                    )
                )
        return PlainTextResponse("\n".join(lines) + "\n", media_type="application/jsonl")

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True), name="frontend")

    return app


def export_header(record: SessionRecord, blinded: bool = True) -> str:
    """Transcript header line. Blinded exports (the default) omit the
    condition so raters cannot see which system produced the dialogue."""
    header = {
        "type": "header",
        "session_id": record.session_id,
        "theme_id": record.theme_id,
        "problem_id": record.problem_id,
    }
    if not blinded:
        header["condition"] = record.condition
    return json.dumps(header, ensure_ascii=False)


def _persist_new_utterances(entry: _Entry) -> None:
    """Append utterances the event file does not replay to yet. Reset and
    rollback write their own truncation events, which keep
    `persisted_log_len` aligned with the session log."""
    records = entry.session.export_records()
    for rec in records[entry.persisted_log_len:]:
        entry.log.append({"type": persistence.EVENT_UTTERANCE, **rec})
    entry.persisted_log_len = len(records)


def build_store(
    catalog_path: str | None = None,
    data_dir: str | Path = "sessions",
    backend_config: BackendConfig | None = None,
) -> SessionStore:
    catalog = load_catalog(catalog_path) if catalog_path else load_default_catalog()
    backend = configure_backend(backend_config) if backend_config else None
    return SessionStore(catalog=catalog, data_dir=data_dir, backend=backend)
