"""Prompt rendering: contracts, placeholder closure, golden-file equality."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import pytest

from golden_fixtures import RUBRIC_SAMPLE_TRANSCRIPT, canonical_window
from tutorsim.catalog import strategies_for_scenario
from tutorsim.prompts import (
    ASYNC_STAGES,
    EmptyWindow,
    PromptRenderer,
    UnboundPlaceholder,
    natural_join,
    scan_unbound,
)

GOLDEN = Path(__file__).resolve().parent / "golden"


class Line:
    def __init__(self, speaker, text):
        self.speaker = speaker
        self.text = text


def window_for(scenario):
    return [Line(s, t) for s, t in canonical_window(scenario)]


# ── student prompt ────────────────────────────────────────────────────────


def test_student_prompt_core_sentences(catalog, renderer):
    scenario = catalog.scenario_for_theme("varying-learning-paces")
    problem = catalog.problem(scenario.problem_id)
    lily = scenario.personas[0]
    text = renderer.render_student_prompt(lily, problem)
    assert "Your name is Lily" in text
    assert problem.statement in text
    assert "Your responses should be brief, natural" in text
    assert "politeness and respect" in text
    # The early-disengagement behavior goes into the agent prompt verbatim
    # even though the UI never shows it.
    assert lily.initial_behavior in text


def test_student_prompt_empty_characteristics_unbound(catalog, renderer):
    scenario = catalog.scenario_for_theme("varying-learning-paces")
    problem = catalog.problem(scenario.problem_id)
    persona = replace(scenario.personas[0], characteristics=())
    with pytest.raises(UnboundPlaceholder):
        renderer.render_student_prompt(persona, problem)


# ── director prompt ───────────────────────────────────────────────────────


def test_director_prompt_contents(catalog, renderer):
    scenario = catalog.scenario_for_theme("varying-learning-paces")
    theme = catalog.theme(scenario.theme_id)
    problem = catalog.problem(scenario.problem_id)
    text = renderer.render_director_prompt(catalog, scenario)
    assert theme.description in text
    for persona in scenario.personas:
        assert persona.name in text
        assert persona.initial_behavior in text  # director routes turns on it
    assert problem.statement in text
    assert "exactly one name" in text
    assert "Lily, James, Chloe, Tutor" in text


def test_director_prompt_has_no_dialogue(catalog, renderer):
    # The system prompt is built from the scenario only; tutor input never
    # leaks into it.
    scenario = catalog.scenario_for_theme("fatigue-and-focus")
    text = renderer.render_director_prompt(catalog, scenario)
    assert "The story so far" not in text


# ── feedback prompts ──────────────────────────────────────────────────────


def test_immediate_prompt_embeds_matched_titles(catalog, renderer):
    scenario = catalog.scenario_for_theme("lack-of-confidence")
    matched = strategies_for_scenario(catalog, scenario.theme_id)
    text = renderer.render_feedback_prompt("immediate", window_for(scenario), matched)
    for category in matched:
        assert category.title in text
    assert "Situation:" in text and "Recommendations:" in text


def test_async_prompt_names_four_stages(catalog, renderer):
    scenario = catalog.scenario_for_theme("lack-of-interest-and-engagement")
    matched = strategies_for_scenario(catalog, scenario.theme_id)
    text = renderer.render_feedback_prompt(
        "async", window_for(scenario), matched, student_names=scenario.persona_names()
    )
    for stage in ASYNC_STAGES:
        assert f"{stage}:" in text


def test_immediate_prompt_empty_window(catalog, renderer):
    matched = strategies_for_scenario(catalog, "fatigue-and-focus")
    with pytest.raises(EmptyWindow):
        renderer.render_feedback_prompt("immediate", [], matched)


# ── determinism and closure ───────────────────────────────────────────────


def test_rendering_is_deterministic(catalog, renderer):
    scenario = catalog.scenario_for_theme("varying-learning-paces")
    problem = catalog.problem(scenario.problem_id)
    first = renderer.render_student_prompt(scenario.personas[1], problem)
    second = PromptRenderer().render_student_prompt(scenario.personas[1], problem)
    assert first == second


def test_placeholder_closure_on_all_renders(catalog, renderer):
    for scenario in catalog.scenarios:
        problem = catalog.problem(scenario.problem_id)
        matched = strategies_for_scenario(catalog, scenario.theme_id)
        rendered = [renderer.render_director_prompt(catalog, scenario)]
        rendered += [
            renderer.render_student_prompt(p, problem) for p in scenario.personas
        ]
        rendered.append(
            renderer.render_feedback_prompt("immediate", window_for(scenario), matched)
        )
        rendered.append(
            renderer.render_feedback_prompt(
                "async", window_for(scenario), matched, student_names=scenario.persona_names()
            )
        )
        for text in rendered:
            assert scan_unbound(text) == set()


def test_content_with_bracketed_text_is_not_flagged():
    assert scan_unbound("Tutor: [HELLO] everyone") == set()
    assert scan_unbound("leftover [STUDENT NAME]") == {"STUDENT NAME"}


def test_natural_join():
    assert natural_join(["a"]) == "a"
    assert natural_join(["a", "b"]) == "a and b"
    assert natural_join(["a", "b", "c"]) == "a, b, and c"


# ── golden files ──────────────────────────────────────────────────────────


def golden(name: str) -> str:
    return (GOLDEN / name).read_text(encoding="utf-8")


def test_student_prompts_match_golden(catalog, renderer):
    for scenario in catalog.scenarios:
        problem = catalog.problem(scenario.problem_id)
        for persona in scenario.personas:
            expected = golden(f"student__{scenario.theme_id}__{persona.name}.txt")
            assert renderer.render_student_prompt(persona, problem) == expected


def test_director_prompts_match_golden(catalog, renderer):
    for scenario in catalog.scenarios:
        expected = golden(f"director__{scenario.theme_id}.txt")
        assert renderer.render_director_prompt(catalog, scenario) == expected


def test_feedback_prompts_match_golden(catalog, renderer):
    for scenario in catalog.scenarios:
        matched = strategies_for_scenario(catalog, scenario.theme_id)
        immediate = renderer.render_feedback_prompt(
            "immediate", window_for(scenario), matched
        )
        assert immediate == golden(f"immediate__{scenario.theme_id}.txt")
        async_text = renderer.render_feedback_prompt(
            "async", window_for(scenario), matched, student_names=scenario.persona_names()
        )
        assert async_text == golden(f"async__{scenario.theme_id}.txt")


def test_rubric_prompt_matches_golden(renderer):
    assert renderer.render_rubric_prompt(RUBRIC_SAMPLE_TRANSCRIPT) == golden("rubric__sample.txt")
