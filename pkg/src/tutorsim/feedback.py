"""Feedback generation and parsing.

Two report kinds: immediate (on demand mid-session: a short situation summary
plus recommendations drawn from the scenario's matched strategy categories)
and asynchronous (end-of-session reflection in four stages: Overview,
Reflection, Theory, Preparation, with the reflection organized per student
along the emotional/behavioral/cognitive/collaborative dimensions).

The model is instructed to emit labeled sections; parsing is label-keyed and
order-independent, with one automatic corrective re-ask before giving up.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

from . import gateway
from .catalog import Catalog, StrategyCategory, strategies_for_scenario
from .gateway import Backend, ChatExchange, ChatMessage
from .orchestrator import ORIGIN_TUTOR, Session, Utterance
from .prompts import ASYNC_STAGES, ENGAGEMENT_DIMENSIONS, IMMEDIATE_SECTIONS, PromptRenderer


class FeedbackError(Exception):
    pass


class NoTutorTurnYet(FeedbackError):
    pass


class ParseFailure(FeedbackError):
    def __init__(self, message: str, missing: str | None = None) -> None:
        self.missing = missing
        super().__init__(message)


@dataclass(frozen=True)
class Recommendation:
    category_id: str
    advice: str


@dataclass(frozen=True)
class ImmediateFeedback:
    situation: str
    recommendations: tuple[Recommendation, ...]
    extras: tuple[tuple[str, str], ...] = ()
    at_index: int = -1  # log index at which the report was requested

    kind = "immediate"


@dataclass(frozen=True)
class ReflectionEntry:
    persona: str
    dimensions: tuple[str, ...]
    analysis: str


@dataclass(frozen=True)
class AsyncFeedback:
    overview: str
    reflection: tuple[ReflectionEntry, ...]
    theory: str
    preparation: tuple[str, ...]
    extras: tuple[tuple[str, str], ...] = ()
    at_index: int = -1

    kind = "async"


@dataclass(frozen=True)
class FeedbackConfig:
    # Immediate feedback is meant to be skimmed mid-session; prose fields are
    # truncated at sentence boundaries past this many characters.
    immediate_max_chars: int = 700
    window_tutor_turns: int = 2


# ── section splitting ─────────────────────────────────────────────────────

_EXTRA_HEADER_RE = re.compile(r"^([A-Z][A-Za-z][A-Za-z ]{0,38}):\s*$")


def _split_sections(raw_text: str, labels: Sequence[str]) -> tuple[dict[str, str], list[tuple[str, str]]]:
    """Split text into label-keyed sections. A known label starting a line
    opens its section; a standalone 'Other Label:' line opens an extra
    section, which is preserved rather than dropped."""
    known = {label.casefold(): label for label in labels}
    header_re = re.compile(
        r"^(" + "|".join(re.escape(label) for label in labels) + r")\s*:\s*(.*)$",
        re.IGNORECASE,
    )
    sections: dict[str, list[str]] = {}
    extras: list[tuple[str, list[str]]] = []
    current: list[str] | None = None
    for line in raw_text.splitlines():
        match = header_re.match(line.strip())
        if match:
            label = known[match.group(1).casefold()]
            sections.setdefault(label, [])
            current = sections[label]
            rest = match.group(2).strip()
            if rest:
                current.append(rest)
            continue
        extra_match = _EXTRA_HEADER_RE.match(line.strip())
        if extra_match and extra_match.group(1).casefold() not in known:
            extras.append((extra_match.group(1), []))
            current = extras[-1][1]
            continue
        if current is not None:
            current.append(line)
    joined = {label: "\n".join(body).strip() for label, body in sections.items()}
    extra_sections = [(label, "\n".join(body).strip()) for label, body in extras]
    return joined, extra_sections


def _bullets(section_text: str) -> list[str]:
    items = []
    for line in section_text.splitlines():
        stripped = line.strip()
        if stripped.startswith("- "):
            items.append(stripped[2:].strip())
        elif stripped.startswith("-") and len(stripped) > 1:
            items.append(stripped[1:].strip())
        elif stripped and items:
            items[-1] = f"{items[-1]} {stripped}"
    if not items and section_text.strip():
        items = [section_text.strip()]
    return items


def truncate_sentences(text: str, max_chars: int) -> str:
    """Trim prose to at most max_chars, cutting only at sentence boundaries
    (the first sentence always survives)."""
    if len(text) <= max_chars:
        return text
    sentences = re.split(r"(?<=[.!?])\s+", text.strip())
    out: list[str] = []
    for sentence in sentences:
        candidate = " ".join(out + [sentence])
        if out and len(candidate) > max_chars:
            break
        out.append(sentence)
    return " ".join(out)


# ── parsing ───────────────────────────────────────────────────────────────


def _parse_reflection_entry(item: str) -> ReflectionEntry:
    head, _, analysis = item.partition(":")
    head = head.strip()
    analysis = analysis.strip()
    name_match = re.match(r"([A-Za-z]+)", head)
    if not name_match:
        raise ParseFailure(f"reflection entry has no student name: {item!r}")
    persona = name_match.group(1)
    paren = re.search(r"\(([^)]*)\)", head)
    dimensions: list[str] = []
    if paren:
        for token in re.split(r"[,/;]", paren.group(1)):
            token = token.strip().casefold()
            if not token:
                continue
            if token not in ENGAGEMENT_DIMENSIONS:
                raise ParseFailure(
                    f"unknown engagement dimension {token!r} in {item!r}"
                )
            dimensions.append(token)
    else:
        rest = head[len(persona):].casefold()
        dimensions = [d for d in ENGAGEMENT_DIMENSIONS if d in rest]
    return ReflectionEntry(persona=persona, dimensions=tuple(dimensions), analysis=analysis)


def parse_feedback(
    kind: str,
    raw_text: str,
    matched: Sequence[StrategyCategory] = (),
    personas: Sequence[str] = (),
) -> ImmediateFeedback | AsyncFeedback:
    """Deterministic label-keyed extraction. Sections may appear in any
    order; extra sections are kept, never dropped. Raises ParseFailure
    naming the first missing label."""
    if not raw_text.strip():
        raise ParseFailure("empty feedback text", missing=_first_label(kind))
    if kind == "immediate":
        return _parse_immediate(raw_text, matched)
    if kind == "async":
        return _parse_async(raw_text, personas)
    raise FeedbackError(f"unknown feedback kind {kind!r}")


def _first_label(kind: str) -> str:
    return IMMEDIATE_SECTIONS[0] if kind == "immediate" else ASYNC_STAGES[0]


def _parse_immediate(raw_text: str, matched: Sequence[StrategyCategory]) -> ImmediateFeedback:
    sections, extras = _split_sections(raw_text, IMMEDIATE_SECTIONS)
    for label in IMMEDIATE_SECTIONS:
        if not sections.get(label):
            raise ParseFailure(f"missing section {label!r}", missing=label)
    by_title = {c.title.casefold(): c for c in matched}
    recommendations = []
    for item in _bullets(sections["Recommendations"]):
        title, sep, advice = item.partition(":")
        if not sep:
            raise ParseFailure(f"recommendation has no category prefix: {item!r}")
        category = by_title.get(title.strip().casefold())
        if category is None:
            raise ParseFailure(
                f"recommendation references a category outside the matched set: {title.strip()!r}"
            )
        recommendations.append(Recommendation(category_id=category.id, advice=advice.strip()))
    if not recommendations:
        raise ParseFailure("no recommendations parsed", missing="Recommendations")
    return ImmediateFeedback(
        situation=sections["Situation"],
        recommendations=tuple(recommendations),
        extras=tuple(extras),
    )


def _parse_async(raw_text: str, personas: Sequence[str]) -> AsyncFeedback:
    sections, extras = _split_sections(raw_text, ASYNC_STAGES)
    for label in ASYNC_STAGES:
        if not sections.get(label):
            raise ParseFailure(f"missing stage {label!r}", missing=label)
    reflection = tuple(_parse_reflection_entry(item) for item in _bullets(sections["Reflection"]))
    if personas:
        covered = {e.persona.casefold() for e in reflection}
        missing = [p for p in personas if p.casefold() not in covered]
        if missing:
            raise ParseFailure(
                f"reflection does not cover all students (missing {', '.join(missing)})",
                missing="Reflection",
            )
    preparation = tuple(_bullets(sections["Preparation"]))
    if not preparation:
        raise ParseFailure("no preparation suggestions parsed", missing="Preparation")
    return AsyncFeedback(
        overview=sections["Overview"],
        reflection=reflection,
        theory=sections["Theory"],
        preparation=preparation,
        extras=tuple(extras),
    )


# ── generation ────────────────────────────────────────────────────────────


class FeedbackEngine:
    """Generates feedback over immutable session snapshots. Never mutates the
    dialogue log; only appends to the session's feedback history."""

    def __init__(
        self,
        catalog: Catalog,
        backend: Backend,
        renderer: PromptRenderer | None = None,
        config: FeedbackConfig | None = None,
    ) -> None:
        self.catalog = catalog
        self.backend = backend
        self.renderer = renderer or PromptRenderer()
        self.config = config or FeedbackConfig()

    def _window(self, log: Sequence[Utterance]) -> list[Utterance]:
        """The last `window_tutor_turns` tutor utterances and everything
        after the earliest of them."""
        tutor_indices = [u.index for u in log if u.origin == ORIGIN_TUTOR]
        if not tutor_indices:
            raise NoTutorTurnYet("immediate feedback needs at least one tutor turn")
        keep = tutor_indices[-self.config.window_tutor_turns:]
        return [u for u in log if u.index >= keep[0]]

    def _complete(
        self, prompt: str, correction_labels: Sequence[str], max_tokens: int
    ) -> tuple[str, str]:
        """One backend call; returns (raw_text, correction_text) where the
        correction is what a re-ask should append."""
        exchange = ChatExchange(
            messages=(
                ChatMessage("system", prompt),
                ChatMessage("user", "Write the report now."),
            ),
            tag="feedback",
            max_tokens=max_tokens,
        )
        raw = self.backend.complete(exchange).text
        correction = (
            "Your reply did not follow the required format. Rewrite it using exactly "
            f"these labeled sections, each starting on its own line: "
            f"{', '.join(f'{label}:' for label in correction_labels)}"
        )
        return raw, correction

    def _reask(self, prompt: str, previous: str, correction: str, max_tokens: int) -> str:
        exchange = ChatExchange(
            messages=(
                ChatMessage("system", prompt),
                ChatMessage("user", "Write the report now."),
                ChatMessage("assistant", previous),
                ChatMessage("user", correction),
            ),
            tag="feedback",
            max_tokens=max_tokens,
        )
        return self.backend.complete(exchange).text

    def immediate(self, session: Session) -> ImmediateFeedback:
        state = session.state()
        if not any(u.origin == ORIGIN_TUTOR for u in state.log):
            raise NoTutorTurnYet("immediate feedback needs at least one tutor turn")
        matched = strategies_for_scenario(self.catalog, state.theme_id)
        window = self._window(state.log)
        prompt = self.renderer.render_feedback_prompt("immediate", window, matched)
        budget = gateway.MAX_TOKENS_IMMEDIATE_FEEDBACK
        raw, correction = self._complete(prompt, IMMEDIATE_SECTIONS, budget)
        try:
            report = parse_feedback("immediate", raw, matched=matched)
        except ParseFailure:
            raw = self._reask(prompt, raw, correction, budget)
            report = parse_feedback("immediate", raw, matched=matched)
        report = self._trim_immediate(report)
        report = replace(report, at_index=len(state.log) - 1)
        session.record_feedback(report)
        return report

    def asynchronous(self, session: Session) -> AsyncFeedback:
        state = session.state()
        if not any(u.origin == ORIGIN_TUTOR for u in state.log):
            raise NoTutorTurnYet("asynchronous feedback needs at least one tutor turn")
        matched = strategies_for_scenario(self.catalog, state.theme_id)
        names = session.scenario.persona_names()
        prompt = self.renderer.render_feedback_prompt(
            "async", list(state.log), matched, student_names=names
        )
        budget = gateway.MAX_TOKENS_ASYNC_FEEDBACK
        raw, correction = self._complete(prompt, ASYNC_STAGES, budget)
        try:
            report = parse_feedback("async", raw, personas=names)
        except ParseFailure:
            raw = self._reask(prompt, raw, correction, budget)
            report = parse_feedback("async", raw, personas=names)
        report = replace(report, at_index=len(state.log) - 1)
        session.record_feedback(report)
        return report

    def _trim_immediate(self, report: ImmediateFeedback) -> ImmediateFeedback:
        limit = self.config.immediate_max_chars
        return replace(
            report,
            situation=truncate_sentences(report.situation, limit),
            recommendations=tuple(
                replace(r, advice=truncate_sentences(r.advice, limit))
                for r in report.recommendations
            ),
        )


# ── serialization (for the session event log and the API) ─────────────────


def report_to_dict(report: ImmediateFeedback | AsyncFeedback) -> dict:
    if isinstance(report, ImmediateFeedback):
        return {
            "kind": report.kind,
            "at_index": report.at_index,
            "situation": report.situation,
            "recommendations": [
                {"category_id": r.category_id, "advice": r.advice}
                for r in report.recommendations
            ],
            "extras": [list(e) for e in report.extras],
        }
    return {
        "kind": report.kind,
        "at_index": report.at_index,
        "overview": report.overview,
        "reflection": [
            {"persona": e.persona, "dimensions": list(e.dimensions), "analysis": e.analysis}
            for e in report.reflection
        ],
        "theory": report.theory,
        "preparation": list(report.preparation),
        "extras": [list(e) for e in report.extras],
    }


def report_from_dict(raw: dict) -> ImmediateFeedback | AsyncFeedback:
    if raw["kind"] == "immediate":
        return ImmediateFeedback(
            situation=raw["situation"],
            recommendations=tuple(
                Recommendation(r["category_id"], r["advice"]) for r in raw["recommendations"]
            ),
            extras=tuple((e[0], e[1]) for e in raw.get("extras", [])),
            at_index=raw.get("at_index", -1),
        )
    return AsyncFeedback(
        overview=raw["overview"],
        reflection=tuple(
            ReflectionEntry(e["persona"], tuple(e["dimensions"]), e["analysis"])
            for e in raw["reflection"]
        ),
        theory=raw["theory"],
        preparation=tuple(raw["preparation"]),
        extras=tuple((e[0], e[1]) for e in raw.get("extras", [])),
        at_index=raw.get("at_index", -1),
    )
