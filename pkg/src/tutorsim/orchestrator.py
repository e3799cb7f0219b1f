"""Director/character session engine.

Keeps the shared dialogue "story": a master utterance log mirrored into one
view per agent (the director plus one per student persona). A director agent
picks who speaks next; student agents generate their own lines; the tutor's
lines only ever come from tutor input. Supports reset and rollback to any
earlier tutor turn.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from enum import Enum
from typing import Callable

from . import gateway
from .catalog import Catalog, MathProblem, Scenario, ScenarioTheme
from .gateway import Backend, ChatExchange, ChatMessage
from .prompts import PromptRenderer, format_conversation

ORIGIN_INITIAL = "initial"
ORIGIN_TUTOR = "tutor_input"
ORIGIN_STUDENT = "student_agent"

DIRECTOR_VIEW = "director"


class Phase(str, Enum):
    AWAITING_TUTOR = "awaiting_tutor"
    GENERATING_STUDENTS = "generating_students"
    CLOSED = "closed"


class OrchestratorError(Exception):
    pass


class EmptyMessage(OrchestratorError):
    pass


class SessionClosed(OrchestratorError):
    pass


class UnknownPersona(OrchestratorError):
    pass


class NotATutorUtterance(OrchestratorError):
    pass


class IndexOutOfRange(OrchestratorError):
    pass


@dataclass(frozen=True)
class Utterance:
    index: int
    speaker: str
    text: str
    origin: str


@dataclass(frozen=True)
class SessionConfig:
    max_consecutive_student_turns: int = 3
    greeting_rule_enabled: bool = True
    speaker_repair_attempts: int = 1

    def __post_init__(self) -> None:
        if self.max_consecutive_student_turns < 1:
            raise ValueError("max_consecutive_student_turns must be >= 1")
        if self.speaker_repair_attempts < 0:
            raise ValueError("speaker_repair_attempts must be >= 0")


@dataclass(frozen=True)
class SpeakerSelection:
    raw: str
    resolved: str | None  # persona name, the tutor token, or None when invalid
    fallback_used: bool = False


@dataclass(frozen=True)
class SessionState:
    """Immutable snapshot of a session, safe to hand to readers."""

    session_id: str
    theme_id: str
    problem_id: str
    log: tuple[Utterance, ...]
    agent_views: dict[str, tuple[Utterance, ...]]
    phase: Phase
    consecutive_student_turns: int
    feedback_history: tuple
    config: SessionConfig


@dataclass(frozen=True)
class RollbackResult:
    state: SessionState
    recovered_text: str


def _logical_clock() -> Callable[[], float]:
    counter = {"t": -1.0}

    def tick() -> float:
        counter["t"] += 1.0
        return counter["t"]

    return tick


def logical_clock() -> Callable[[], float]:
    """A deterministic session clock: 0.0, 1.0, 2.0, ... Use it with scripted
    backends when transcripts must be byte-identical across runs."""
    return _logical_clock()


class Session:
    """One live tutoring session. Operations on a session are serialized by an
    internal lock; distinct sessions can run concurrently."""

    def __init__(
        self,
        catalog: Catalog,
        scenario: Scenario,
        problem: MathProblem,
        config: SessionConfig,
        backend: Backend,
        renderer: PromptRenderer | None = None,
        session_id: str | None = None,
        clock: Callable[[], float] | None = None,
    ) -> None:
        import threading

        self.catalog = catalog
        self.scenario = scenario
        self.theme: ScenarioTheme = catalog.theme(scenario.theme_id)
        self.problem = problem
        self.config = config
        self.backend = backend
        self.renderer = renderer or PromptRenderer()
        self.session_id = session_id or uuid.uuid4().hex
        self.clock = clock or time.time

        self.log: list[Utterance] = []
        self.timestamps: list[float] = []
        self.views: dict[str, list[Utterance]] = {DIRECTOR_VIEW: []}
        for persona in scenario.personas:
            self.views[persona.name] = []
        self.phase = Phase.AWAITING_TUTOR
        self.consecutive_student_turns = 0
        self.feedback_history: list = []
        self._lock = threading.RLock()

        self._director_prompt = self.renderer.render_director_prompt(
            catalog, scenario, problem
        )
        self._student_prompts = {
            p.name: self.renderer.render_student_prompt(p, problem)
            for p in scenario.personas
        }

        init = scenario.initial_utterance
        self._append(Utterance(0, init.speaker, init.text, ORIGIN_INITIAL))
        self._initial_len = len(self.log)

    # ── bookkeeping ───────────────────────────────────────────────────

    def _append(self, utterance: Utterance, ts: float | None = None) -> None:
        self.log.append(utterance)
        self.timestamps.append(self.clock() if ts is None else ts)
        for view in self.views.values():
            view.append(utterance)

    def _truncate(self, length: int) -> None:
        del self.log[length:]
        del self.timestamps[length:]
        for view in self.views.values():
            del view[length:]
        self.consecutive_student_turns = self._trailing_student_run()

    def _trailing_student_run(self) -> int:
        run = 0
        for u in reversed(self.log):
            if u.origin == ORIGIN_STUDENT:
                run += 1
            else:
                break
        return run

    def _ensure_open(self) -> None:
        if self.phase == Phase.CLOSED:
            raise SessionClosed(f"session {self.session_id} is closed")

    def tutor_turns(self) -> int:
        return sum(1 for u in self.log if u.origin == ORIGIN_TUTOR)

    @property
    def initial_length(self) -> int:
        """Number of scene-setting utterances the log is truncated back to on
        reset."""
        return self._initial_len

    def views_synchronized(self) -> bool:
        return all(view == self.log for view in self.views.values())

    def state(self) -> SessionState:
        with self._lock:
            return SessionState(
                session_id=self.session_id,
                theme_id=self.scenario.theme_id,
                problem_id=self.problem.id,
                log=tuple(self.log),
                agent_views={k: tuple(v) for k, v in self.views.items()},
                phase=self.phase,
                consecutive_student_turns=self.consecutive_student_turns,
                feedback_history=tuple(self.feedback_history),
                config=self.config,
            )

    def record_feedback(self, report) -> None:
        with self._lock:
            self.feedback_history.append(report)

    # ── the director loop ─────────────────────────────────────────────

    def submit_tutor_message(self, text: str) -> list[Utterance]:
        """Append the tutor's line, then let the director drive student turns
        until it yields back to the tutor or the turn cap forces a yield.
        The first tutor input instead fans out one reply per student when the
        greeting rule is enabled."""
        with self._lock:
            self._ensure_open()
            trimmed = text.strip()
            if not trimmed:
                raise EmptyMessage("tutor message is empty")
            if self.config.greeting_rule_enabled and self.tutor_turns() == 0:
                return self.greeting_fanout(trimmed)
            self._append(Utterance(len(self.log), self.catalog.tutor_token, trimmed, ORIGIN_TUTOR))
            self.consecutive_student_turns = 0
            self.phase = Phase.GENERATING_STUDENTS
            produced: list[Utterance] = []
            try:
                while True:
                    selection = self.select_next_speaker()
                    if selection.resolved == self.catalog.tutor_token:
                        break
                    produced.append(self._generate_student(selection.resolved))
                    if self.consecutive_student_turns >= self.config.max_consecutive_student_turns:
                        break  # forced yield: leave space for the tutor
            finally:
                # On a backend failure mid-loop the session keeps every fully
                # appended utterance and goes back to waiting for the tutor.
                self.phase = Phase.AWAITING_TUTOR
            return produced

    def greeting_fanout(self, tutor_greeting: str) -> list[Utterance]:
        """First-greeting rule: every student responds once, in catalog order,
        bypassing the director for this exchange only."""
        with self._lock:
            self._ensure_open()
            if not self.config.greeting_rule_enabled:
                raise OrchestratorError("greeting rule is disabled for this session")
            if self.tutor_turns() != 0:
                raise OrchestratorError("greeting fanout only applies to the first tutor input")
            trimmed = tutor_greeting.strip()
            if not trimmed:
                raise EmptyMessage("tutor message is empty")
            self._append(Utterance(len(self.log), self.catalog.tutor_token, trimmed, ORIGIN_TUTOR))
            self.phase = Phase.GENERATING_STUDENTS
            produced: list[Utterance] = []
            try:
                for persona in self.scenario.personas:
                    produced.append(self._generate_student(persona.name, count_toward_cap=False))
            finally:
                self.phase = Phase.AWAITING_TUTOR
            return produced

    def select_next_speaker(self) -> SpeakerSelection:
        """Ask the director who speaks next. Invalid replies get up to
        `speaker_repair_attempts` corrective re-asks, then fall back to a
        round-robin pick of the least-recently-spoken persona."""
        with self._lock:
            allowed = list(self.scenario.persona_names()) + [self.catalog.tutor_token]
            raw = self._ask_director()
            selection = self._parse_speaker(raw)
            attempts = 0
            while selection.resolved is None and attempts < self.config.speaker_repair_attempts:
                attempts += 1
                correction = (
                    "That is not a valid choice. Reply with exactly one name from this "
                    f"list, on a single line, with nothing else: {', '.join(allowed)}"
                )
                raw = self._ask_director(previous_reply=raw, correction=correction)
                selection = self._parse_speaker(raw)
            if selection.resolved is None:
                return SpeakerSelection(
                    raw=raw, resolved=self._least_recently_spoken(), fallback_used=True
                )
            return selection

    def _ask_director(self, previous_reply: str | None = None, correction: str | None = None) -> str:
        story = format_conversation(self.views[DIRECTOR_VIEW])
        messages = [
            ChatMessage("system", self._director_prompt),
            ChatMessage("user", f"The story so far:\n{story}\n\nWho speaks next?"),
        ]
        if previous_reply is not None and correction is not None:
            messages.append(ChatMessage("assistant", previous_reply))
            messages.append(ChatMessage("user", correction))
        exchange = ChatExchange(
            messages=tuple(messages), tag="director", max_tokens=gateway.MAX_TOKENS_DIRECTOR
        )
        return self.backend.complete(exchange).text

    def _parse_speaker(self, raw: str) -> SpeakerSelection:
        normalized = raw.strip().strip("\"'“”‘’.,!?:;`").strip()
        allowed = list(self.scenario.persona_names()) + [self.catalog.tutor_token]
        for token in allowed:
            if normalized.casefold() == token.casefold():
                return SpeakerSelection(raw=raw, resolved=token)
        return SpeakerSelection(raw=raw, resolved=None)

    def _least_recently_spoken(self) -> str:
        last_spoken: dict[str, int] = {}
        for name in self.scenario.persona_names():
            last_spoken[name] = -1
        for u in self.log:
            if u.speaker in last_spoken:
                last_spoken[u.speaker] = u.index
        names = list(self.scenario.persona_names())
        return min(names, key=lambda n: (last_spoken[n], names.index(n)))

    def generate_student_utterance(self, persona_name: str) -> Utterance:
        with self._lock:
            self._ensure_open()
            return self._generate_student(persona_name)

    def _generate_student(self, persona_name: str, count_toward_cap: bool = True) -> Utterance:
        if persona_name not in self._student_prompts:
            raise UnknownPersona(f"{persona_name!r} is not in this scenario")
        messages = self._student_messages(persona_name)
        exchange = ChatExchange(
            messages=tuple(messages),
            tag=f"student:{persona_name}",
            max_tokens=gateway.MAX_TOKENS_STUDENT,
        )
        text = self.backend.complete(exchange).text.strip()
        utterance = Utterance(len(self.log), persona_name, text, ORIGIN_STUDENT)
        self._append(utterance)
        if count_toward_cap:
            self.consecutive_student_turns += 1
        return utterance

    def _student_messages(self, persona_name: str) -> list[ChatMessage]:
        """The student's synchronized view as a chat: own lines as assistant
        turns, everyone else's (prefixed with the speaker) merged into user
        turns."""
        messages = [ChatMessage("system", self._student_prompts[persona_name])]
        pending_user: list[str] = []
        for u in self.views[persona_name]:
            if u.speaker == persona_name:
                if pending_user:
                    messages.append(ChatMessage("user", "\n".join(pending_user)))
                    pending_user = []
                messages.append(ChatMessage("assistant", u.text))
            else:
                pending_user.append(f"{u.speaker}: {u.text}")
        if pending_user:
            messages.append(ChatMessage("user", "\n".join(pending_user)))
        return messages

    # ── reset / rollback ──────────────────────────────────────────────

    def reset(self) -> SessionState:
        """Back to the initial dialogue. Feedback history survives so earlier
        advice stays available."""
        with self._lock:
            self._ensure_open()
            self._truncate(self._initial_len)
            self.phase = Phase.AWAITING_TUTOR
            return self.state()

    def rollback(self, tutor_utterance_index: int) -> RollbackResult:
        """Remove the clicked tutor utterance and everything after it, handing
        its text back so the tutor can edit and retry."""
        with self._lock:
            self._ensure_open()
            if not 0 <= tutor_utterance_index < len(self.log):
                raise IndexOutOfRange(f"index {tutor_utterance_index} out of range")
            clicked = self.log[tutor_utterance_index]
            if clicked.origin != ORIGIN_TUTOR:
                raise NotATutorUtterance(
                    f"utterance {tutor_utterance_index} is {clicked.origin}, not tutor input"
                )
            self._truncate(tutor_utterance_index)
            self.phase = Phase.AWAITING_TUTOR
            return RollbackResult(state=self.state(), recovered_text=clicked.text)

    def close(self) -> None:
        with self._lock:
            self.phase = Phase.CLOSED

    # ── transcript export / replay support ────────────────────────────

    def export_records(self) -> list[dict]:
        with self._lock:
            return [
                {
                    "index": u.index,
                    "speaker": u.speaker,
                    "origin": u.origin,
                    "text": u.text,
                    "ts": self.timestamps[u.index],
                }
                for u in self.log
            ]

    def restore_utterance(self, speaker: str, text: str, origin: str, ts: float) -> Utterance:
        """Re-append an utterance from a persisted event without calling any
        backend. Used only by log replay."""
        with self._lock:
            utterance = Utterance(len(self.log), speaker, text, origin)
            self._append(utterance, ts=ts)
            self.consecutive_student_turns = self._trailing_student_run()
            return utterance

    def restore_truncate(self, length: int) -> None:
        with self._lock:
            self._truncate(length)
            self.phase = Phase.AWAITING_TUTOR


def create_session(
    catalog: Catalog,
    theme_id: str,
    problem_id: str,
    config: SessionConfig | None = None,
    backend: Backend | None = None,
    renderer: PromptRenderer | None = None,
    session_id: str | None = None,
    clock: Callable[[], float] | None = None,
) -> Session:
    """Bind a scenario (by theme) and a problem into a live session. The
    initial scene-setting utterance is already in the log; the session starts
    waiting for the tutor."""
    scenario = catalog.scenario_for_theme(theme_id)  # raises UnknownTheme
    problem = catalog.problem(problem_id)  # raises UnknownProblem
    if backend is None:
        raise OrchestratorError("a backend is required to create a session")
    return Session(
        catalog=catalog,
        scenario=scenario,
        problem=problem,
        config=config or SessionConfig(),
        backend=backend,
        renderer=renderer,
        session_id=session_id,
        clock=clock,
    )
