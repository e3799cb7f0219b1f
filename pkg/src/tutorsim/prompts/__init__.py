"""Prompt rendering.

Every prompt in the system is rendered from a template file plus catalog or
session data, byte-exactly. Templates live as UTF-8 text files in the
package's prompts/ directory (overridable) and use [UPPER CASE] placeholders;
rendering is deterministic and refuses to leave any placeholder unbound.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from ..catalog import Catalog, MathProblem, Scenario, StrategyCategory, StudentPersona

TEMPLATE_IDS = (
    "student_system",
    "director_system",
    "immediate_feedback",
    "async_feedback",
    "rubric_rater",
)

# The placeholder vocabulary across all shipped templates. The closure scan
# checks that none of these survive rendering; free-form content is allowed
# to contain other [BRACKETED] text (for example inside a tutor message).
KNOWN_PLACEHOLDERS = (
    "INTRODUCE THE MATH PROBLEM",
    "STUDENT NAME",
    "STUDENT AGE",
    "STUDENT CHARACTERISTICS",
    "STUDENT ABILITY",
    "STUDENT BEHAVIOR",
    "SCENARIO DESCRIPTION",
    "STUDENT PROFILES",
    "SPEAKER TOKENS",
    "CONVERSATION WINDOW",
    "MATCHED STRATEGIES",
    "STUDENT NAMES",
    "TRANSCRIPT",
)

_PLACEHOLDER_RE = re.compile(r"\[([A-Z][A-Z0-9' ]*)\]")

ENGAGEMENT_DIMENSIONS = ("emotional", "behavioral", "cognitive", "collaborative")
ASYNC_STAGES = ("Overview", "Reflection", "Theory", "Preparation")
IMMEDIATE_SECTIONS = ("Situation", "Recommendations")


class PromptError(Exception):
    pass


class UnboundPlaceholder(PromptError):
    """A placeholder had no binding, a blank binding, or survived rendering."""


class EmptyWindow(PromptError):
    """A feedback prompt was requested over an empty conversation window."""


class SpeakerLine(Protocol):
    speaker: str
    text: str


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    def placeholders(self) -> set[str]:
        return {m.group(1) for m in _PLACEHOLDER_RE.finditer(self.body)}


def render_template(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Substitute placeholders. Every placeholder in the body must be bound
    to nonblank text; known placeholders must not survive in the output."""
    out = template.body
    for name in sorted(template.placeholders()):
        if name not in bindings:
            raise UnboundPlaceholder(f"{template.id}: no binding for [{name}]")
        value = bindings[name]
        if not value or not value.strip():
            raise UnboundPlaceholder(f"{template.id}: blank binding for [{name}]")
        out = out.replace(f"[{name}]", value)
    leftover = scan_unbound(out)
    if leftover:
        raise UnboundPlaceholder(f"{template.id}: unbound after render: {sorted(leftover)}")
    return out


def scan_unbound(text: str) -> set[str]:
    """Known placeholder ids still present in a rendered text."""
    return {m.group(1) for m in _PLACEHOLDER_RE.finditer(text) if m.group(1) in KNOWN_PLACEHOLDERS}


def natural_join(items: Sequence[str]) -> str:
    items = [i for i in items if i.strip()]
    if not items:
        return ""
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    return ", ".join(items[:-1]) + f", and {items[-1]}"


def format_conversation(window: Iterable[SpeakerLine]) -> str:
    """One 'Speaker: text' line per utterance; the shared wire form for
    director input, feedback windows, and rater transcripts."""
    return "\n".join(f"{u.speaker}: {u.text}" for u in window)


def format_strategies(strategies: Sequence[StrategyCategory]) -> str:
    return "\n".join(f"- {s.title}: {'; '.join(s.instances)}" for s in strategies)


def format_persona_profile(persona: StudentPersona) -> str:
    traits = natural_join(list(persona.characteristics))
    return (
        f"- {persona.name} (age {persona.age}, grade {persona.grade}). "
        f"Characteristics: {traits}. "
        f"Command of knowledge: {persona.knowledge}. "
        f"Initial behavior: {persona.initial_behavior}."
    )


class PromptRenderer:
    """Loads the template files once and renders all system prompts.

    Pure over immutable inputs: the same arguments always produce the same
    bytes, so outputs can be pinned with golden files.
    """

    def __init__(self, templates_dir: str | Path | None = None) -> None:
        self._dir = Path(templates_dir) if templates_dir else None
        self._cache: dict[str, PromptTemplate] = {}

    def template(self, template_id: str) -> PromptTemplate:
        if template_id not in TEMPLATE_IDS:
            raise PromptError(f"unknown template id {template_id!r}")
        if template_id not in self._cache:
            if self._dir is not None:
                body = (self._dir / f"{template_id}.txt").read_text(encoding="utf-8")
            else:
                body = (
                    resources.files("tutorsim.prompts")
                    .joinpath(f"{template_id}.txt")
                    .read_text(encoding="utf-8")
                )
            self._cache[template_id] = PromptTemplate(id=template_id, body=body)
        return self._cache[template_id]

    def render_student_prompt(self, persona: StudentPersona, problem: MathProblem) -> str:
        return render_template(
            self.template("student_system"),
            {
                "INTRODUCE THE MATH PROBLEM": problem.statement,
                "STUDENT NAME": persona.name,
                "STUDENT AGE": str(persona.age),
                "STUDENT CHARACTERISTICS": natural_join(list(persona.characteristics)),
                "STUDENT ABILITY": persona.knowledge,
                "STUDENT BEHAVIOR": persona.initial_behavior,
            },
        )

    def render_director_prompt(
        self, catalog: Catalog, scenario: Scenario, problem: MathProblem | None = None
    ) -> str:
        theme = catalog.theme(scenario.theme_id)
        if problem is None:
            problem = catalog.problem(scenario.problem_id)
        profiles = "\n".join(format_persona_profile(p) for p in scenario.personas)
        tokens = ", ".join(list(scenario.persona_names()) + [catalog.tutor_token])
        return render_template(
            self.template("director_system"),
            {
                "SCENARIO DESCRIPTION": theme.description,
                "INTRODUCE THE MATH PROBLEM": problem.statement,
                "STUDENT PROFILES": profiles,
                "SPEAKER TOKENS": tokens,
            },
        )

    def render_feedback_prompt(
        self,
        kind: str,
        transcript_window: Sequence[SpeakerLine],
        strategies: Sequence[StrategyCategory],
        student_names: Sequence[str] = (),
    ) -> str:
        if kind not in ("immediate", "async"):
            raise PromptError(f"unknown feedback kind {kind!r}")
        if not transcript_window:
            raise EmptyWindow(f"{kind} feedback needs a nonempty conversation window")
        bindings = {
            "CONVERSATION WINDOW": format_conversation(transcript_window),
            "MATCHED STRATEGIES": format_strategies(strategies),
        }
        if kind == "immediate":
            return render_template(self.template("immediate_feedback"), bindings)
        bindings["STUDENT NAMES"] = natural_join(list(student_names))
        return render_template(self.template("async_feedback"), bindings)

    def render_rubric_prompt(self, transcript_text: str) -> str:
        return render_template(
            self.template("rubric_rater"), {"TRANSCRIPT": transcript_text}
        )
