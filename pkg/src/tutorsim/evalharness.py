"""Transcript scoring harness.

Scores exported session transcripts on four criteria (1-3 each) and compares
two blinded transcript corpora. Transcripts must be blinded: any file that
carries a condition marker is rejected before scoring, so the scoring path
cannot read which system produced a dialogue.

Three rater kinds: `heuristic` (deterministic, offline: scores from
observable transcript features), `model` (a chat backend prompted with the
shipped rubric template), and `human` (interactive entry).
"""

from __future__ import annotations

import hashlib
import json
import re
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import gateway
from .catalog import Catalog, UnknownTheme, strategies_for_scenario
from .gateway import Backend, ChatExchange, ChatMessage
from .prompts import PromptRenderer

CRITERIA = (
    ("use_strategies_appropriately", "Use Strategies Appropriately"),
    ("use_strategies_effectively", "Use Strategies Effectively"),
    ("students_more_engaged", "Students are More Engaged"),
    ("strategies_accessible", "Strategies Accessible for Students"),
)
CRITERION_KEYS = tuple(key for key, _ in CRITERIA)
SCORE_RANGE = (1, 3)


class EvalError(Exception):
    pass


class ParseFailure(EvalError):
    pass


class ScoreOutOfRange(EvalError):
    pass


class EmptyCorpus(EvalError):
    pass


class UnblindedTranscript(EvalError):
    pass


@dataclass(frozen=True)
class RubricScores:
    transcript_id: str
    scores: dict[str, int]
    rater: str
    rationale: dict[str, str]

    def __post_init__(self) -> None:
        lo, hi = SCORE_RANGE
        for key in CRITERION_KEYS:
            if key not in self.scores:
                raise ParseFailure(f"missing criterion {key!r}")
            if not lo <= self.scores[key] <= hi:
                raise ScoreOutOfRange(
                    f"{key} scored {self.scores[key]}, outside [{lo}, {hi}]"
                )


@dataclass(frozen=True)
class Transcript:
    transcript_id: str
    header: dict
    utterances: tuple[dict, ...]

    def text(self) -> str:
        return "\n".join(f"{u['speaker']}: {u['text']}" for u in self.utterances)

    def tutor_texts(self) -> list[str]:
        return [u["text"] for u in self.utterances if u.get("origin") == "tutor_input"]

    def student_texts(self) -> list[str]:
        return [u["text"] for u in self.utterances if u.get("origin") == "student_agent"]

    def persona_names(self) -> list[str]:
        seen: list[str] = []
        for u in self.utterances:
            if u.get("origin") in ("initial", "student_agent") and u["speaker"] not in seen:
                seen.append(u["speaker"])
        return seen


def parse_transcript(text: str, transcript_id: str) -> Transcript:
    """Parse a line-delimited transcript export. Rejects any record carrying
    a condition marker: scoring must stay blind."""
    header: dict = {}
    utterances: list[dict] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EvalError(f"{transcript_id}:{lineno}: bad record: {exc}") from exc
        if "condition" in record:
            raise UnblindedTranscript(
                f"{transcript_id}:{lineno}: transcript carries a condition marker; "
                "re-export blinded"
            )
        if record.get("type") == "header":
            header = record
        elif record.get("type") == "utterance":
            utterances.append(record)
    return Transcript(transcript_id=transcript_id, header=header, utterances=tuple(utterances))


def load_transcript(path: str | Path) -> Transcript:
    path = Path(path)
    return parse_transcript(path.read_text(encoding="utf-8"), path.stem)


# ── raters ────────────────────────────────────────────────────────────────


@dataclass
class RaterConfig:
    kind: str  # heuristic | model | human
    backend: Backend | None = None
    catalog: Catalog | None = None
    renderer: PromptRenderer = field(default_factory=PromptRenderer)
    input_fn: Callable[[str], str] = input


# Observable signals per shipped strategy category, matched against tutor
# messages. Unknown categories fall back to their title's content words.
STRATEGY_KEYWORDS: dict[str, tuple[str, ...]] = {
    "empathy-respect": ("i understand", "i hear you", "how you feel", "thanks for", "appreciate", "no worries", "it's okay"),
    "peer-interaction": ("each other", "together", "classmate", "pair up", "discuss with", "compare your"),
    "prompt-feedback": ("great", "good job", "well done", "nice work", "exactly", "that's right", "good try", "proud of"),
    "persistence": ("keep trying", "don't give up", "you can do", "almost there", "try again", "step by step", "one step"),
    "active-learning": ("let's try", "activity", "game", "draw", "imagine", "your turn", "can you explain", "what do you think"),
    "clear-goals": ("goal", "by the end", "today we will", "our plan", "first we", "then we"),
    "autonomy": ("you choose", "you decide", "which one would", "pick one", "your choice", "up to you"),
    "group-work": ("team", "group", "work together", "assign", "you two", "split up"),
    "time-constraint": ("minute", "timer", "time's up", "how much time", "seconds"),
    "behavioral-expectations": ("rule", "expect everyone", "respect", "take turns", "listen when", "one at a time"),
}


def _fallback_keywords(title: str) -> tuple[str, ...]:
    words = [w.lower() for w in re.findall(r"[A-Za-z']+", title) if len(w) > 3]
    return tuple(words)


def _mean_words(texts: Sequence[str]) -> float:
    if not texts:
        return 0.0
    return sum(len(t.split()) for t in texts) / len(texts)


def _heuristic_features(transcript: Transcript, catalog: Catalog | None) -> dict:
    tutor = transcript.tutor_texts()
    students = transcript.student_texts()
    tutor_blob = " ".join(tutor).lower()

    categories = []
    if catalog is not None:
        theme_id = transcript.header.get("theme_id")
        if theme_id:
            try:
                categories = strategies_for_scenario(catalog, theme_id)
            except UnknownTheme:
                categories = list(catalog.strategies)
        else:
            categories = list(catalog.strategies)
    hits = 0
    hit_titles = []
    for category in categories:
        keywords = STRATEGY_KEYWORDS.get(category.id) or _fallback_keywords(category.title)
        if any(k in tutor_blob for k in keywords):
            hits += 1
            hit_titles.append(category.title)

    names = transcript.persona_names()
    names_addressed = sum(1 for n in names if n.lower() in tutor_blob)
    questions = tutor_blob.count("?")

    half = len(students) // 2
    first, second = students[:half], students[half:]
    growth = _mean_words(second) - _mean_words(first) if students else 0.0

    sentences = [s for t in tutor for s in re.split(r"(?<=[.!?])\s+", t) if s.strip()]
    words_per_sentence = (
        sum(len(s.split()) for s in sentences) / len(sentences) if sentences else 0.0
    )

    return {
        "tutor_turns": len(tutor),
        "student_turns": len(students),
        "strategy_hits": hits,
        "hit_titles": hit_titles,
        "names_addressed": names_addressed,
        "questions": questions,
        "growth": growth,
        "words_per_sentence": words_per_sentence,
    }


def _heuristic_scores(transcript: Transcript, catalog: Catalog | None) -> tuple[dict[str, int], dict[str, str]]:
    f = _heuristic_features(transcript, catalog)
    scores: dict[str, int] = {}
    rationale: dict[str, str] = {}

    if f["tutor_turns"] == 0 or f["strategy_hits"] == 0:
        scores["use_strategies_appropriately"] = 1
    elif f["strategy_hits"] <= 2:
        scores["use_strategies_appropriately"] = 2
    else:
        scores["use_strategies_appropriately"] = 3
    rationale["use_strategies_appropriately"] = (
        f"{f['strategy_hits']} matched strategy categories observed in tutor turns"
        + (f" ({', '.join(f['hit_titles'])})" if f["hit_titles"] else "")
    )

    if f["tutor_turns"] == 0 or f["strategy_hits"] == 0:
        scores["use_strategies_effectively"] = 1
    elif f["growth"] > 0:
        scores["use_strategies_effectively"] = 3
    else:
        scores["use_strategies_effectively"] = 2
    rationale["use_strategies_effectively"] = (
        f"strategy use with student response growth of {f['growth']:.1f} words per turn"
    )

    if f["student_turns"] == 0 or f["growth"] <= 0:
        scores["students_more_engaged"] = 1
    elif f["growth"] <= 1.5:
        scores["students_more_engaged"] = 2
    else:
        scores["students_more_engaged"] = 3
    rationale["students_more_engaged"] = (
        f"{f['student_turns']} student turns; late-session responses grew by "
        f"{f['growth']:.1f} words on average"
    )

    if f["tutor_turns"] == 0:
        scores["strategies_accessible"] = 1
    elif f["words_per_sentence"] <= 14 and (f["questions"] >= 1 or f["names_addressed"] >= 1):
        scores["strategies_accessible"] = 3
    elif f["words_per_sentence"] <= 20:
        scores["strategies_accessible"] = 2
    else:
        scores["strategies_accessible"] = 1
    rationale["strategies_accessible"] = (
        f"{f['words_per_sentence']:.1f} words per tutor sentence, {f['questions']} questions, "
        f"{f['names_addressed']} students addressed by name"
    )

    return scores, rationale


_SCORE_LINE_RE_TEMPLATE = r"^\s*(?:-\s*)?{title}\s*:\s*([0-9]+)\s*(?:[-–—:]\s*(.*))?$"


def _parse_model_scores(raw: str) -> tuple[dict[str, int], dict[str, str]]:
    scores: dict[str, int] = {}
    rationale: dict[str, str] = {}
    for key, title in CRITERIA:
        pattern = re.compile(
            _SCORE_LINE_RE_TEMPLATE.format(title=re.escape(title)), re.IGNORECASE | re.MULTILINE
        )
        match = pattern.search(raw)
        if not match:
            raise ParseFailure(f"no score line for criterion {title!r}")
        scores[key] = int(match.group(1))
        rationale[key] = (match.group(2) or "").strip()
    lo, hi = SCORE_RANGE
    for key, value in scores.items():
        if not lo <= value <= hi:
            raise ScoreOutOfRange(f"{key} scored {value}, outside [{lo}, {hi}]")
    return scores, rationale


def _model_scores(
    transcript: Transcript, config: RaterConfig
) -> tuple[dict[str, int], dict[str, str]]:
    if config.backend is None:
        raise EvalError("model rater needs a backend")
    prompt = config.renderer.render_rubric_prompt(transcript.text() or "(empty session)")
    messages = [
        ChatMessage("system", prompt),
        ChatMessage("user", "Rate the transcript now."),
    ]
    exchange = ChatExchange(messages=tuple(messages), tag="rater", max_tokens=gateway.MAX_TOKENS_IMMEDIATE_FEEDBACK)
    raw = config.backend.complete(exchange).text
    try:
        return _parse_model_scores(raw)
    except (ParseFailure, ScoreOutOfRange):
        correction = (
            "Your reply did not follow the required format. Reply with exactly four "
            "lines, one per criterion, in the form '<Criterion name>: <score 1-3> - "
            "<rationale>'. The criteria are: "
            + "; ".join(title for _, title in CRITERIA)
        )
        retry = ChatExchange(
            messages=tuple(messages + [ChatMessage("assistant", raw), ChatMessage("user", correction)]),
            tag="rater",
            max_tokens=gateway.MAX_TOKENS_IMMEDIATE_FEEDBACK,
        )
        raw2 = config.backend.complete(retry).text
        return _parse_model_scores(raw2)


def _human_scores(
    transcript: Transcript, config: RaterConfig
) -> tuple[dict[str, int], dict[str, str]]:
    print(f"--- transcript {transcript.transcript_id} ---")
    print(transcript.text())
    scores: dict[str, int] = {}
    rationale: dict[str, str] = {}
    lo, hi = SCORE_RANGE
    for key, title in CRITERIA:
        for _ in range(3):
            raw = config.input_fn(f"{title} [{lo}-{hi}]: ").strip()
            if raw.isdigit() and lo <= int(raw) <= hi:
                scores[key] = int(raw)
                break
        else:
            raise ScoreOutOfRange(f"no valid score entered for {title!r}")
        rationale[key] = config.input_fn("rationale: ").strip()
    return scores, rationale


def score_transcript(transcript: Transcript | str | Path, rater_config: RaterConfig) -> RubricScores:
    if not isinstance(transcript, Transcript):
        transcript = load_transcript(transcript)
    if rater_config.kind == "heuristic":
        scores, rationale = _heuristic_scores(transcript, rater_config.catalog)
    elif rater_config.kind == "model":
        scores, rationale = _model_scores(transcript, rater_config)
    elif rater_config.kind == "human":
        scores, rationale = _human_scores(transcript, rater_config)
    else:
        raise EvalError(f"unknown rater kind {rater_config.kind!r}")
    return RubricScores(
        transcript_id=transcript.transcript_id,
        scores=scores,
        rater=rater_config.kind,
        rationale=rationale,
    )


# ── batch comparison ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class CriterionStats:
    a_mean: float
    a_sd: float
    b_mean: float
    b_sd: float
    diff_mean: float


@dataclass(frozen=True)
class CompareReport:
    label_a: str
    label_b: str
    stats: dict[str, CriterionStats]
    paired_diffs: dict[str, dict[str, int]]  # stem -> criterion -> (b - a)
    mapping: dict[str, str]  # anonymized id -> original provenance
    scores: dict[str, RubricScores]  # anonymized id -> scores

    def to_csv(self) -> str:
        lines = ["criterion,a_mean,a_sd,b_mean,b_sd,diff_mean"]
        for key, _ in CRITERIA:
            s = self.stats[key]
            lines.append(
                f"{key},{s.a_mean:.2f},{s.a_sd:.2f},{s.b_mean:.2f},{s.b_sd:.2f},{s.diff_mean:.2f}"
            )
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        titles = [title for _, title in CRITERIA]
        width = max(len(t) for t in titles) + 2
        head = "Measurement".ljust(24) + "".join(t.ljust(width) for t in titles)
        rows = [head, "-" * len(head)]
        for label, mean_attr, sd_attr in (
            (self.label_a, "a_mean", "a_sd"),
            (self.label_b, "b_mean", "b_sd"),
        ):
            means = [getattr(self.stats[k], mean_attr) for k, _ in CRITERIA]
            sds = [getattr(self.stats[k], sd_attr) for k, _ in CRITERIA]
            rows.append(f"{label[:16]:<16}{'Mean':<8}" + "".join(f"{m:<{width}.2f}" for m in means))
            rows.append(f"{'':<16}{'SD':<8}" + "".join(f"{s:<{width}.2f}" for s in sds))
        diffs = [self.stats[k].diff_mean for k, _ in CRITERIA]
        rows.append(f"{'Paired diff':<16}{'Mean':<8}" + "".join(f"{d:<{width}.2f}" for d in diffs))
        rows.append("")
        rows.append("Blinding mapping (revealed post-scoring):")
        for anon_id in sorted(self.mapping):
            rows.append(f"  {anon_id} -> {self.mapping[anon_id]}")
        return "\n".join(rows) + "\n"


def _corpus(dir_path: str | Path) -> list[tuple[str, str]]:
    files = sorted(Path(dir_path).glob("*.jsonl"))
    return [(f.stem, f.read_text(encoding="utf-8")) for f in files]


def _sd(values: Sequence[float]) -> float:
    if len(values) < 2:
        return 0.0
    return statistics.stdev(values)


def batch_compare(
    dir_a: str | Path, dir_b: str | Path, rater_config: RaterConfig
) -> CompareReport:
    """Score two blinded corpora and report per-criterion means, standard
    deviations, and paired differences (keyed by matching file stems). The
    provenance mapping is hidden during scoring and revealed only in the
    final report."""
    corpus_a = _corpus(dir_a)
    corpus_b = _corpus(dir_b)
    if not corpus_a or not corpus_b:
        raise EmptyCorpus("both directories must contain at least one transcript")

    entries = [("A", stem, content) for stem, content in corpus_a]
    entries += [("B", stem, content) for stem, content in corpus_b]
    # Deterministic shuffle: order by content digest so the scoring order
    # carries no provenance signal but identical corpora score identically.
    entries.sort(key=lambda e: (hashlib.sha256(e[2].encode("utf-8")).hexdigest(), e[1], e[0]))

    mapping: dict[str, str] = {}
    scores: dict[str, RubricScores] = {}
    by_side: dict[str, dict[str, RubricScores]] = {"A": {}, "B": {}}
    for i, (side, stem, content) in enumerate(entries, start=1):
        anon_id = f"T{i:03d}"
        transcript = parse_transcript(content, anon_id)  # rejects unblinded files
        result = score_transcript(transcript, rater_config)
        mapping[anon_id] = f"{side}/{stem}"
        scores[anon_id] = result
        by_side[side][stem] = result

    stats: dict[str, CriterionStats] = {}
    common = sorted(set(by_side["A"]) & set(by_side["B"]))
    paired: dict[str, dict[str, int]] = {stem: {} for stem in common}
    for key, _ in CRITERIA:
        a_values = [r.scores[key] for r in by_side["A"].values()]
        b_values = [r.scores[key] for r in by_side["B"].values()]
        diffs = [by_side["B"][stem].scores[key] - by_side["A"][stem].scores[key] for stem in common]
        for stem, diff in zip(common, diffs):
            paired[stem][key] = diff
        stats[key] = CriterionStats(
            a_mean=statistics.mean(a_values),
            a_sd=_sd(a_values),
            b_mean=statistics.mean(b_values),
            b_sd=_sd(b_values),
            diff_mean=statistics.mean(diffs) if diffs else 0.0,
        )

    return CompareReport(
        label_a=str(dir_a),
        label_b=str(dir_b),
        stats=stats,
        paired_diffs=paired,
        mapping=mapping,
        scores=scores,
    )
