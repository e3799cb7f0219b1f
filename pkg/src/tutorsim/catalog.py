"""Scenario catalog: disengagement themes, student personas, math problems,
strategy categories, and the scenario-strategy matching.

The catalog is data, not code: it lives in a single JSON file (schema in
docs/catalog-schema.md) so scenarios and personas can be edited without
touching the engine. A catalog is immutable after load and safe to share
across concurrent sessions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path

# Reserved speaker token for the human tutor; persona names must not collide.
TUTOR_TOKEN = "Tutor"

# Persona fields that must never be rendered in a UI student card. They are
# revealed only through conversation (and to the director agent).
HIDDEN_PERSONA_FIELDS = ("initial_behavior",)

PERSONA_AGE_RANGE = (10, 11)
PERSONA_GRADE_RANGE = (4, 5)
PERSONAS_PER_SCENARIO = 3
STRATEGY_CATEGORY_COUNT = 10


class CatalogError(Exception):
    """Base class for catalog failures."""


class ParseError(CatalogError):
    """The catalog file is malformed. Carries a locus (line or field path)."""

    def __init__(self, message: str, locus: str = "") -> None:
        self.locus = locus
        super().__init__(f"{message}{f' (at {locus})' if locus else ''}")


class ValidationError(CatalogError):
    """The catalog parsed but violates one or more invariants."""

    def __init__(self, violations: list[Violation]) -> None:
        self.violations = violations
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"{len(violations)} catalog violation(s): {lines}")


class UnknownTheme(CatalogError):
    pass


class UnknownProblem(CatalogError):
    pass


@dataclass(frozen=True)
class Violation:
    """One violated invariant, attached to the offending entity."""

    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


@dataclass(frozen=True)
class ScenarioTheme:
    id: str
    title: str
    description: str
    reactive_examples: tuple[str, ...]


@dataclass(frozen=True)
class StudentPersona:
    name: str
    age: int
    grade: int
    characteristics: tuple[str, ...]
    knowledge: str
    initial_behavior: str

    def public_card(self) -> dict:
        """The persona as shown in the UI, with hidden fields stripped."""
        card = asdict(self)
        card["characteristics"] = list(self.characteristics)
        for hidden in HIDDEN_PERSONA_FIELDS:
            card.pop(hidden, None)
        return card


@dataclass(frozen=True)
class MathProblem:
    id: str
    statement: str
    canonical_answer: tuple[tuple[str, int], ...]  # named quantities, ordered
    # Structured restatement of the problem for the arithmetic oracle:
    # two quantities, a total, and a "many = times * few" relation.
    total: int
    times: int
    many: str
    few: str

    def answer(self) -> dict[str, int]:
        return dict(self.canonical_answer)


@dataclass(frozen=True)
class StrategyCategory:
    id: str
    title: str
    instances: tuple[str, ...]


@dataclass(frozen=True)
class InitialUtterance:
    speaker: str
    text: str


@dataclass(frozen=True)
class Scenario:
    theme_id: str
    problem_id: str
    personas: tuple[StudentPersona, ...]
    matched_strategy_ids: tuple[str, ...]
    initial_utterance: InitialUtterance

    def persona_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.personas)


@dataclass(frozen=True)
class Catalog:
    themes: tuple[ScenarioTheme, ...]
    problems: tuple[MathProblem, ...]
    strategies: tuple[StrategyCategory, ...]
    scenarios: tuple[Scenario, ...]
    tutor_token: str = TUTOR_TOKEN
    version: int = 1

    def theme(self, theme_id: str) -> ScenarioTheme:
        for t in self.themes:
            if t.id == theme_id:
                return t
        raise UnknownTheme(f"unknown theme: {theme_id!r}")

    def problem(self, problem_id: str) -> MathProblem:
        for p in self.problems:
            if p.id == problem_id:
                return p
        raise UnknownProblem(f"unknown problem: {problem_id!r}")

    def strategy(self, strategy_id: str) -> StrategyCategory:
        for s in self.strategies:
            if s.id == strategy_id:
                return s
        raise CatalogError(f"unknown strategy category: {strategy_id!r}")

    def strategy_by_title(self, title: str) -> StrategyCategory | None:
        wanted = title.strip().casefold()
        for s in self.strategies:
            if s.title.casefold() == wanted:
                return s
        return None

    def scenario_for_theme(self, theme_id: str) -> Scenario:
        for sc in self.scenarios:
            if sc.theme_id == theme_id:
                return sc
        raise UnknownTheme(f"no scenario for theme: {theme_id!r}")


def strategies_for_scenario(catalog: Catalog, theme_id: str) -> list[StrategyCategory]:
    """Matched strategy categories for a theme, in catalog order."""
    scenario = catalog.scenario_for_theme(theme_id)  # raises UnknownTheme
    matched = set(scenario.matched_strategy_ids)
    return [s for s in catalog.strategies if s.id in matched]


# ── parsing ───────────────────────────────────────────────────────────────


def _require(obj: dict, key: str, kind: type, locus: str):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", locus)
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise ParseError(f"field {key!r} must be {kind.__name__}", f"{locus}.{key}")
    if not isinstance(value, kind):
        raise ParseError(f"field {key!r} must be {kind.__name__}", f"{locus}.{key}")
    return value


def _str_list(obj: dict, key: str, locus: str) -> tuple[str, ...]:
    value = _require(obj, key, list, locus)
    if not all(isinstance(v, str) for v in value):
        raise ParseError(f"field {key!r} must be a list of strings", f"{locus}.{key}")
    return tuple(value)


def parse_catalog(text: str) -> Catalog:
    """Parse catalog JSON text. Raises ParseError with a locus on bad shape;
    the result is structurally sound but not yet validated."""
    if not text.strip():
        raise ParseError("empty catalog file")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", f"line {exc.lineno}") from exc
    if not isinstance(raw, dict):
        raise ParseError("catalog root must be an object")

    themes = []
    for i, t in enumerate(_require(raw, "themes", list, "catalog")):
        locus = f"themes[{i}]"
        themes.append(
            ScenarioTheme(
                id=_require(t, "id", str, locus),
                title=_require(t, "title", str, locus),
                description=_require(t, "description", str, locus),
                reactive_examples=_str_list(t, "reactive_examples", locus),
            )
        )

    problems = []
    for i, p in enumerate(_require(raw, "problems", list, "catalog")):
        locus = f"problems[{i}]"
        answer = _require(p, "canonical_answer", dict, locus)
        if not all(isinstance(k, str) and isinstance(v, int) for k, v in answer.items()):
            raise ParseError("canonical_answer must map names to integers", f"{locus}.canonical_answer")
        cons = _require(p, "constraints", dict, locus)
        problems.append(
            MathProblem(
                id=_require(p, "id", str, locus),
                statement=_require(p, "statement", str, locus),
                canonical_answer=tuple(answer.items()),
                total=_require(cons, "total", int, f"{locus}.constraints"),
                times=_require(cons, "times", int, f"{locus}.constraints"),
                many=_require(cons, "many", str, f"{locus}.constraints"),
                few=_require(cons, "few", str, f"{locus}.constraints"),
            )
        )

    strategies = []
    for i, s in enumerate(_require(raw, "strategies", list, "catalog")):
        locus = f"strategies[{i}]"
        strategies.append(
            StrategyCategory(
                id=_require(s, "id", str, locus),
                title=_require(s, "title", str, locus),
                instances=_str_list(s, "instances", locus),
            )
        )

    scenarios = []
    for i, sc in enumerate(_require(raw, "scenarios", list, "catalog")):
        locus = f"scenarios[{i}]"
        personas = []
        for j, per in enumerate(_require(sc, "personas", list, locus)):
            ploc = f"{locus}.personas[{j}]"
            personas.append(
                StudentPersona(
                    name=_require(per, "name", str, ploc),
                    age=_require(per, "age", int, ploc),
                    grade=_require(per, "grade", int, ploc),
                    characteristics=_str_list(per, "characteristics", ploc),
                    knowledge=_require(per, "knowledge", str, ploc),
                    initial_behavior=_require(per, "initial_behavior", str, ploc),
                )
            )
        init = _require(sc, "initial_utterance", dict, locus)
        scenarios.append(
            Scenario(
                theme_id=_require(sc, "theme_id", str, locus),
                problem_id=_require(sc, "problem_id", str, locus),
                personas=tuple(personas),
                matched_strategy_ids=_str_list(sc, "matched_strategy_ids", locus),
                initial_utterance=InitialUtterance(
                    speaker=_require(init, "speaker", str, f"{locus}.initial_utterance"),
                    text=_require(init, "text", str, f"{locus}.initial_utterance"),
                ),
            )
        )

    tutor_token = raw.get("tutor_token", TUTOR_TOKEN)
    if not isinstance(tutor_token, str) or not tutor_token.strip():
        raise ParseError("tutor_token must be a nonempty string", "catalog.tutor_token")

    return Catalog(
        themes=tuple(themes),
        problems=tuple(problems),
        strategies=tuple(strategies),
        scenarios=tuple(scenarios),
        tutor_token=tutor_token,
        version=raw.get("version", 1),
    )


# ── validation ────────────────────────────────────────────────────────────


def _solve_two_quantities(total: int, times: int) -> dict[str, int] | None:
    """Arithmetic oracle: enumerate the smaller quantity and return the unique
    split where many = times * few and many + few = total, if one exists."""
    solutions = [
        (times * few, few)
        for few in range(total + 1)
        if times * few + few == total
    ]
    if len(solutions) != 1:
        return None
    many, few = solutions[0]
    return {"many": many, "few": few}


def validate_catalog(catalog: Catalog) -> list[Violation]:
    """Check every invariant; violations are data, not failures."""
    out: list[Violation] = []

    theme_ids = [t.id for t in catalog.themes]
    if len(set(theme_ids)) != len(theme_ids):
        out.append(Violation("themes", "theme ids must be unique"))
    for t in catalog.themes:
        if not t.description.strip():
            out.append(Violation(t.id, "description must be nonempty"))
        if not t.title.strip():
            out.append(Violation(t.id, "title must be nonempty"))
        if len(t.reactive_examples) < 1:
            out.append(Violation(t.id, "needs at least one reactive example"))

    problem_ids = [p.id for p in catalog.problems]
    if len(set(problem_ids)) != len(problem_ids):
        out.append(Violation("problems", "problem ids must be unique"))
    for p in catalog.problems:
        if not p.statement.strip():
            out.append(Violation(p.id, "statement must be nonempty"))
        answer = p.answer()
        if set(answer) != {p.many, p.few}:
            out.append(Violation(p.id, "canonical_answer names must match constraints"))
            continue
        solved = _solve_two_quantities(p.total, p.times)
        if solved is None:
            out.append(Violation(p.id, "constraints have no unique integer solution"))
        elif answer[p.many] != solved["many"] or answer[p.few] != solved["few"]:
            out.append(Violation(p.id, "canonical_answer inconsistent with statement constraints"))

    if len(catalog.strategies) != STRATEGY_CATEGORY_COUNT:
        out.append(
            Violation(
                "strategies",
                f"category count != {STRATEGY_CATEGORY_COUNT} (got {len(catalog.strategies)})",
            )
        )
    strategy_ids = {s.id for s in catalog.strategies}
    if len(strategy_ids) != len(catalog.strategies):
        out.append(Violation("strategies", "strategy ids must be unique"))
    for s in catalog.strategies:
        if not s.title.strip():
            out.append(Violation(s.id, "title must be nonempty"))
        if len(s.instances) < 2:
            out.append(Violation(s.id, "needs at least 2 strategy instances"))

    seen_scenario_themes = set()
    for sc in catalog.scenarios:
        sid = f"scenario:{sc.theme_id}"
        if sc.theme_id not in theme_ids:
            out.append(Violation(sid, f"theme ref does not resolve: {sc.theme_id!r}"))
        if sc.theme_id in seen_scenario_themes:
            out.append(Violation(sid, "more than one scenario for the same theme"))
        seen_scenario_themes.add(sc.theme_id)
        if sc.problem_id not in problem_ids:
            out.append(Violation(sid, f"problem ref does not resolve: {sc.problem_id!r}"))

        if len(sc.personas) != PERSONAS_PER_SCENARIO:
            out.append(Violation(sid, f"personas count != {PERSONAS_PER_SCENARIO} (got {len(sc.personas)})"))
        names = sc.persona_names()
        if len(set(names)) != len(names):
            out.append(Violation(sid, "persona names must be pairwise distinct"))
        if catalog.tutor_token in names:
            out.append(Violation(sid, f"persona name collides with reserved token {catalog.tutor_token!r}"))
        for per in sc.personas:
            pid = f"{sid}/{per.name or '<unnamed>'}"
            lo_age, hi_age = PERSONA_AGE_RANGE
            if not lo_age <= per.age <= hi_age:
                out.append(Violation(pid, f"age must be in [{lo_age}, {hi_age}] (got {per.age})"))
            lo_g, hi_g = PERSONA_GRADE_RANGE
            if not lo_g <= per.grade <= hi_g:
                out.append(Violation(pid, f"grade must be in [{lo_g}, {hi_g}] (got {per.grade})"))
            if not per.name.strip():
                out.append(Violation(pid, "name must be nonempty"))
            if not per.characteristics or any(not c.strip() for c in per.characteristics):
                out.append(Violation(pid, "characteristics must be nonempty"))
            if not per.knowledge.strip():
                out.append(Violation(pid, "knowledge must be nonempty"))
            if not per.initial_behavior.strip():
                out.append(Violation(pid, "initial_behavior must be nonempty"))

        if not sc.matched_strategy_ids:
            out.append(Violation(sid, "matched_strategies must be nonempty"))
        for ref in sc.matched_strategy_ids:
            if ref not in strategy_ids:
                out.append(Violation(sid, f"matched strategy ref does not resolve: {ref!r}"))
        if sc.initial_utterance.speaker not in names:
            out.append(Violation(sid, "initial utterance speaker must be one of the scenario personas"))
        if not sc.initial_utterance.text.strip():
            out.append(Violation(sid, "initial utterance text must be nonempty"))

    return out


def load_catalog(path: str | Path) -> Catalog:
    """Load and validate a catalog file. Raises ParseError or ValidationError."""
    text = Path(path).read_text(encoding="utf-8")
    catalog = parse_catalog(text)
    violations = validate_catalog(catalog)
    if violations:
        raise ValidationError(violations)
    return catalog


def load_default_catalog() -> Catalog:
    """The catalog shipped with the package."""
    text = resources.files("tutorsim.data").joinpath("catalog.json").read_text(encoding="utf-8")
    catalog = parse_catalog(text)
    violations = validate_catalog(catalog)
    if violations:
        raise ValidationError(violations)
    return catalog


def serialize_catalog(catalog: Catalog) -> str:
    """Render a Catalog back to its JSON file format (round-trips with
    parse_catalog)."""
    raw = {
        "version": catalog.version,
        "tutor_token": catalog.tutor_token,
        "themes": [
            {
                "id": t.id,
                "title": t.title,
                "description": t.description,
                "reactive_examples": list(t.reactive_examples),
            }
            for t in catalog.themes
        ],
        "problems": [
            {
                "id": p.id,
                "statement": p.statement,
                "canonical_answer": dict(p.canonical_answer),
                "constraints": {"total": p.total, "times": p.times, "many": p.many, "few": p.few},
            }
            for p in catalog.problems
        ],
        "strategies": [
            {"id": s.id, "title": s.title, "instances": list(s.instances)}
            for s in catalog.strategies
        ],
        "scenarios": [
            {
                "theme_id": sc.theme_id,
                "problem_id": sc.problem_id,
                "matched_strategy_ids": list(sc.matched_strategy_ids),
                "initial_utterance": {
                    "speaker": sc.initial_utterance.speaker,
                    "text": sc.initial_utterance.text,
                },
                "personas": [
                    {
                        "name": per.name,
                        "age": per.age,
                        "grade": per.grade,
                        "characteristics": list(per.characteristics),
                        "knowledge": per.knowledge,
                        "initial_behavior": per.initial_behavior,
                    }
                    for per in sc.personas
                ],
            }
            for sc in catalog.scenarios
        ],
    }
    return json.dumps(raw, ensure_ascii=False, indent=2) + "\n"
