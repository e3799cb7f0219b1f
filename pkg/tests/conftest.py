"""Shared fixtures and scripted-session helpers."""

from __future__ import annotations

import json
import random

import pytest

from tutorsim.catalog import load_default_catalog, parse_catalog, serialize_catalog
from tutorsim.gateway import Script, ScriptEntry, ScriptedBackend
from tutorsim.orchestrator import SessionConfig, create_session, logical_clock
from tutorsim.prompts import PromptRenderer


@pytest.fixture(scope="session")
def catalog():
    return load_default_catalog()


@pytest.fixture(scope="session")
def renderer():
    return PromptRenderer()


def make_script(*pairs: tuple[str, str]) -> ScriptedBackend:
    return ScriptedBackend(Script(entries=tuple(ScriptEntry(t, r) for t, r in pairs)))


def make_session(
    catalog,
    theme_id="varying-learning-paces",
    problem_id="farmer-fruit-trees",
    backend=None,
    greeting=False,
    cap=3,
    repairs=1,
    session_id="s-test",
):
    config = SessionConfig(
        max_consecutive_student_turns=cap,
        greeting_rule_enabled=greeting,
        speaker_repair_attempts=repairs,
    )
    return create_session(
        catalog,
        theme_id,
        problem_id,
        config=config,
        backend=backend,
        session_id=session_id,
        clock=logical_clock(),
    )


def mutate_catalog(catalog, mutate) -> str:
    """Serialize the shipped catalog, apply `mutate` to the raw dict, and
    return the mutated JSON text."""
    raw = json.loads(serialize_catalog(catalog))
    mutate(raw)
    return json.dumps(raw)


class SeededBackend:
    """Deterministic pseudo-random backend for property tests: director picks
    are seeded draws over {persona names, tutor token, garbage}; student
    replies are counters. Same seed + same call sequence = same outputs."""

    name = "seeded"

    def __init__(self, seed: int, persona_names, tutor_token="Tutor", garbage_rate=0.15):
        self._rng = random.Random(seed)
        self._names = list(persona_names)
        self._tutor = tutor_token
        self._garbage_rate = garbage_rate
        self._counter = 0
        self.calls = []

    def complete(self, exchange):
        from tutorsim.gateway import ChatResult

        self.calls.append(exchange.tag)
        self._counter += 1
        if exchange.tag == "director":
            roll = self._rng.random()
            if roll < self._garbage_rate:
                text = f"maybe someone should speak ({self._counter})"
            elif roll < 0.55:
                text = self._rng.choice(self._names)
            else:
                text = self._tutor
        elif exchange.tag.startswith("student:"):
            name = exchange.tag.split(":", 1)[1]
            text = f"{name} reply {self._counter}"
        else:
            text = f"reply {self._counter}"
        return ChatResult(text=text, latency_ms=0.0, backend=self.name)
