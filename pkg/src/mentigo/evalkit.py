"""Simulated-student harness and session measurement instruments.

Three groups of tools live here:

* persona episodes — drive a full session from a scripted persona with an
  injected clock, and grade the run (state accuracy, mapping compliance);
* turn coding and engagement metrics — label student turns by speech type
  and cognitive level, and tally per-session conversation metrics with
  state/strategy frequency distributions;
* report scoring — the four-dimension rubric over learning reports.

Everything is deterministic under scripted backends; the rule-based coder is
deterministic always (its keyword tables ship in ``data/coding_rules.json``).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

from .clock import ManualClock
from .controller import AUTHOR_STUDENT, DialogueTurn
from .errors import (
    CodingFailed,
    MentigoError,
    ParseError,
    PayloadMalformed,
    ScoringFailed,
    SinkError,
    ValidationError,
)
from .gateway import Backend, CompletionRequest, CONTROLLER_TEMPERATURE
from .kb import KnowledgeBase, is_sentinel, strategies_for_state
from .session import LearningReport, Session, SessionStore, seeded_id_factory

SPEECH_TYPES = ("Positive", "Neutral", "Negative")
COGNITIVE_LEVELS = ("Remembering", "Understanding", "Applying", "Analyzing", "Evaluation", "Creation")

RUBRIC_DIMENSIONS = ("quality", "elaboration", "originality", "human_like")
RUBRIC_MIN, RUBRIC_MAX = 1, 5


# -- personas and episodes ----------------------------------------------------


@dataclass(frozen=True)
class PersonaTurn:
    utterance: str
    ground_truth_states: tuple[int, ...]
    delay_s: float = 0.0

    def __post_init__(self):
        if not self.utterance.strip():
            raise ValidationError("persona turn utterance must be non-empty")
        if self.delay_s < 0:
            raise ValidationError("persona turn delay must be >= 0")
        for sid in self.ground_truth_states:
            if not isinstance(sid, int) or not 1 <= sid <= 23:
                raise ValidationError(f"ground truth state {sid!r} is not a catalogued state")


@dataclass(frozen=True)
class PersonaScript:
    name: str
    turns: tuple[PersonaTurn, ...]

    def __post_init__(self):
        if not self.turns:
            raise ValidationError("a persona needs at least one turn")


def load_persona(path: str | Path) -> PersonaScript:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"persona {path}: invalid JSON at line {exc.lineno}") from exc
    try:
        turns = tuple(
            PersonaTurn(
                utterance=t["utterance"],
                ground_truth_states=tuple(t.get("ground_truth_states", [])),
                delay_s=float(t.get("delay_s", 0.0)),
            )
            for t in doc["turns"]
        )
        return PersonaScript(name=doc["name"], turns=turns)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"persona {path}: missing field {exc}") from exc


@dataclass
class EpisodeResult:
    session: Session
    state_accuracy: float
    mapping_compliance: float
    stages_reached: int
    rounds: int
    events: list = field(default_factory=list)

    @property
    def nudges(self) -> int:
        return sum(1 for e in self.events if e.kind == "nudge")


def run_episode(
    persona: PersonaScript,
    kb: KnowledgeBase,
    controller_backend: Backend,
    mentor_backend: Backend,
    *,
    clock: ManualClock | None = None,
    id_factory: Callable[[], str] | None = None,
    log_dir: str | Path | None = None,
    task_topic: str | None = None,
) -> EpisodeResult:
    """Drive one full session from a persona script.

    Turn delays feed the injected clock; a delay at or past the quiet
    threshold triggers the inactivity tick exactly as the live service would.
    The result carries the session's full event log.
    """
    clock = clock or ManualClock()
    store = SessionStore(
        kb,
        controller_backend,
        mentor_backend,
        clock=clock,
        id_factory=id_factory or seeded_id_factory(0),
        log_dir=log_dir,
    )
    session = store.create_session(task_topic or persona.name)

    hits = 0
    for turn in persona.turns:
        if turn.delay_s:
            clock.advance(turn.delay_s)
            store.tick(session.id)
        store.post_student_message(session.id, turn.utterance)
        decision = session.decisions[-1]
        if set(decision.active_states) & set(turn.ground_truth_states):
            hits += 1

    rounds = len(session.decisions)
    concrete = [d for d in session.decisions if not is_sentinel(d.focus_state)]
    compliant = sum(
        1 for d in concrete if d.chosen_strategy in strategies_for_state(kb, d.focus_state)
    )
    return EpisodeResult(
        session=session,
        state_accuracy=hits / rounds if rounds else 0.0,
        mapping_compliance=compliant / len(concrete) if concrete else 1.0,
        stages_reached=session.stage,
        rounds=rounds,
        events=store.events(session.id),
    )


# -- engagement metrics -------------------------------------------------------


@dataclass
class EngagementReport:
    duration_min: float
    rounds: int
    student_word_count: int
    state_freq: dict[int, int] = field(default_factory=dict)
    strategy_freq: dict[int, int] = field(default_factory=dict)


def compute_engagement(session: Session) -> EngagementReport:
    """Tally the conversation metrics for one session.

    Word counting is whitespace tokenization over student turns only. The
    state frequency map covers decisions with a catalogued focus state
    (sentinels are engine bookkeeping, not observed states); the strategy map
    covers every decision.
    """
    stamps = [t.timestamp for t in session.transcript]
    if session.report is not None:
        stamps.append(session.report.submitted_at)
    last = max(stamps) if stamps else session.created_at
    duration_min = (last - session.created_at).total_seconds() / 60.0

    student_turns = [t for t in session.transcript if t.author == AUTHOR_STUDENT]
    word_count = sum(len(t.text.split()) for t in student_turns)

    state_freq: dict[int, int] = {}
    strategy_freq: dict[int, int] = {}
    for decision in session.decisions:
        if not is_sentinel(decision.focus_state):
            state_freq[decision.focus_state] = state_freq.get(decision.focus_state, 0) + 1
        strategy_freq[decision.chosen_strategy] = strategy_freq.get(decision.chosen_strategy, 0) + 1

    return EngagementReport(
        duration_min=duration_min,
        rounds=len(student_turns),
        student_word_count=word_count,
        state_freq=state_freq,
        strategy_freq=strategy_freq,
    )


# -- turn coding ---------------------------------------------------------------


@dataclass(frozen=True)
class CodedTurn:
    turn_ref: tuple[str, int]
    speech_type: str
    cognitive_level: str

    def __post_init__(self):
        if self.speech_type not in SPEECH_TYPES:
            raise ValidationError(f"speech type {self.speech_type!r} outside the coding scheme")
        if self.cognitive_level not in COGNITIVE_LEVELS:
            raise ValidationError(f"cognitive level {self.cognitive_level!r} outside the coding scheme")


@lru_cache(maxsize=1)
def coding_rules() -> dict:
    path = resources.files("mentigo") / "data" / "coding_rules.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _rule_speech_type(text: str, rules: dict) -> str:
    lowered = text.lower()
    section = rules["speech_type"]
    if any(p in lowered for p in section["negative_patterns"]):
        return "Negative"
    if any(p in lowered for p in section["neutral_patterns"]):
        return "Neutral"
    if any(p in lowered for p in section["positive_patterns"]) or lowered.rstrip().endswith("?"):
        return "Positive"
    return "Neutral"


def _rule_cognitive_level(text: str, rules: dict) -> str:
    lowered = text.lower()
    section = rules["cognitive_level"]
    for level in section["order"]:
        if any(p in lowered for p in section["patterns"][level]):
            return level
    return "Remembering"


CoderMode = Union[str, Backend]


def code_turn(
    turn: DialogueTurn | str,
    mode: CoderMode = "rules",
    *,
    turn_ref: tuple[str, int] = ("", 0),
) -> CodedTurn:
    """Label one student turn with a speech type and a cognitive level.

    ``mode`` is the literal string ``"rules"`` for the deterministic keyword
    coder, or a completion backend that is asked with the coding rubric and
    constrained to the two label sets (one re-ask, then CodingFailed).
    """
    if isinstance(turn, DialogueTurn):
        if turn.author != AUTHOR_STUDENT:
            raise ValidationError("only student turns are coded")
        text = turn.text
    else:
        text = turn
    if not text.strip():
        raise ValidationError("cannot code an empty turn")

    if mode == "rules":
        rules = coding_rules()
        return CodedTurn(
            turn_ref=turn_ref,
            speech_type=_rule_speech_type(text, rules),
            cognitive_level=_rule_cognitive_level(text, rules),
        )
    return _backend_code_turn(text, mode, turn_ref)


def _coding_request(text: str, preamble: str = "") -> CompletionRequest:
    rules = coding_rules()
    speech_desc = "\n".join(
        f"- {name}: {desc}" for name, desc in rules["speech_type"]["descriptions"].items()
    )
    level_desc = "\n".join(
        f"- {name}: {desc}" for name, desc in rules["cognitive_level"]["descriptions"].items()
    )
    return CompletionRequest(
        system_text=(
            preamble
            + "Code the student utterance below on two dimensions.\n\n"
            + f"Speech type (pick one):\n{speech_desc}\n\n"
            + f"Cognitive level (pick one):\n{level_desc}\n\n"
            + 'Respond with exactly one JSON object: {"speech_type": "...", "cognitive_level": "..."}\n\n'
            + f"Student utterance: {text}"
        ),
        temperature=CONTROLLER_TEMPERATURE,
    )


def _backend_code_turn(text: str, backend: Backend, turn_ref: tuple[str, int]) -> CodedTurn:
    def attempt(preamble: str) -> CodedTurn:
        response = backend.complete(_coding_request(text, preamble))
        doc = json.loads(response.text.strip())
        return CodedTurn(
            turn_ref=turn_ref,
            speech_type=str(doc["speech_type"]),
            cognitive_level=str(doc["cognitive_level"]),
        )

    try:
        return attempt("")
    except (MentigoError, json.JSONDecodeError, KeyError, TypeError):
        pass
    try:
        return attempt("Your previous answer was not usable; follow the format exactly.\n\n")
    except (MentigoError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CodingFailed(f"turn coding failed after one re-ask: {exc}") from exc


# -- report scoring -------------------------------------------------------------


@dataclass(frozen=True)
class ReportScore:
    quality: int
    elaboration: int
    originality: int
    human_like: int
    total: int
    clamped_fields: tuple[str, ...] = ()

    def __post_init__(self):
        for name in RUBRIC_DIMENSIONS:
            value = getattr(self, name)
            if not RUBRIC_MIN <= value <= RUBRIC_MAX:
                raise ValidationError(f"rubric dimension {name} out of range: {value}")
        if self.total != self.quality + self.elaboration + self.originality + self.human_like:
            raise ValidationError("total must equal the sum of the four dimensions")


_RUBRIC_TEXT = (
    "Score the student's final implementation plan report on four dimensions, "
    "each as an integer from 1 (poor) to 5 (excellent):\n"
    "- quality: is the solution sound, relevant, and complete?\n"
    "- elaboration: how developed and detailed is the plan?\n"
    "- originality: how novel is the solution compared to the obvious approach?\n"
    "- human_like: does the writing read like the student's own natural expression?\n\n"
    'Respond with exactly one JSON object: {"quality": n, "elaboration": n, '
    '"originality": n, "human_like": n}'
)


def score_report(report: LearningReport, backend: Backend) -> ReportScore:
    """Score a complete learning report on the four-dimension rubric.

    Dimension scores come from the backend, clamped into 1..5 (clamps are
    flagged); the total is always computed here, never trusted from the
    backend."""
    missing = report.missing_fields()
    if missing:
        raise ValidationError([f"report field '{name}' is empty" for name in missing])

    body = (
        f"Background: {report.problem_background}\n"
        f"Solution concept: {report.solution_concept}\n"
        f"Implementation plan: {report.implementation_plan}\n"
        f"Anticipated challenges: {report.anticipated_challenges}"
    )

    def attempt(preamble: str) -> dict:
        request = CompletionRequest(
            system_text=preamble + _RUBRIC_TEXT + "\n\nReport to score:\n" + body,
            temperature=CONTROLLER_TEMPERATURE,
        )
        response = backend.complete(request)
        doc = json.loads(response.text.strip())
        if not isinstance(doc, dict):
            raise PayloadMalformed("rubric scores must be a JSON object")
        return doc

    try:
        doc = attempt("")
    except (MentigoError, json.JSONDecodeError):
        try:
            doc = attempt("Your previous answer was not usable; follow the format exactly.\n\n")
        except (MentigoError, json.JSONDecodeError) as exc:
            raise ScoringFailed(f"report scoring failed after one re-ask: {exc}") from exc

    values: dict[str, int] = {}
    clamped: list[str] = []
    for name in RUBRIC_DIMENSIONS:
        try:
            raw = int(doc[name])
        except (KeyError, TypeError, ValueError) as exc:
            raise ScoringFailed(f"rubric dimension '{name}' missing or not a number") from exc
        value = min(max(raw, RUBRIC_MIN), RUBRIC_MAX)
        if value != raw:
            clamped.append(name)
        values[name] = value
    return ReportScore(
        quality=values["quality"],
        elaboration=values["elaboration"],
        originality=values["originality"],
        human_like=values["human_like"],
        total=sum(values.values()),
        clamped_fields=tuple(clamped),
    )


# -- CSV export ------------------------------------------------------------------


def _freq_cell(freq: dict[int, int]) -> str:
    return json.dumps({str(k): freq[k] for k in sorted(freq)}, separators=(",", ":"))


def _parse_freq_cell(cell: str) -> dict[int, int]:
    return {int(k): int(v) for k, v in json.loads(cell).items()}


_CSV_SHAPES: dict[type, tuple[tuple[str, ...], Callable, Callable]] = {}


def _register_csv(kind: type, header: tuple[str, ...], to_row: Callable, from_row: Callable) -> None:
    _CSV_SHAPES[kind] = (header, to_row, from_row)


_register_csv(
    EngagementReport,
    ("duration_min", "rounds", "student_word_count", "state_freq", "strategy_freq"),
    lambda r: [f"{r.duration_min:.6f}", r.rounds, r.student_word_count, _freq_cell(r.state_freq), _freq_cell(r.strategy_freq)],
    lambda row: EngagementReport(
        duration_min=float(row[0]),
        rounds=int(row[1]),
        student_word_count=int(row[2]),
        state_freq=_parse_freq_cell(row[3]),
        strategy_freq=_parse_freq_cell(row[4]),
    ),
)

_register_csv(
    CodedTurn,
    ("session_id", "seq", "speech_type", "cognitive_level"),
    lambda r: [r.turn_ref[0], r.turn_ref[1], r.speech_type, r.cognitive_level],
    lambda row: CodedTurn(turn_ref=(row[0], int(row[1])), speech_type=row[2], cognitive_level=row[3]),
)

_register_csv(
    ReportScore,
    ("quality", "elaboration", "originality", "human_like", "total", "clamped_fields"),
    lambda r: [r.quality, r.elaboration, r.originality, r.human_like, r.total, ";".join(r.clamped_fields)],
    lambda row: ReportScore(
        quality=int(row[0]),
        elaboration=int(row[1]),
        originality=int(row[2]),
        human_like=int(row[3]),
        total=int(row[4]),
        clamped_fields=tuple(x for x in row[5].split(";") if x),
    ),
)

_register_csv(
    EpisodeResult,
    ("session_id", "rounds", "stages_reached", "state_accuracy", "mapping_compliance", "nudges"),
    lambda r: [r.session.id, r.rounds, r.stages_reached, f"{r.state_accuracy:.6f}", f"{r.mapping_compliance:.6f}", r.nudges],
    None,
)

Sink = Union[str, Path, io.TextIOBase]


def export_csv(records: Sequence, sink: Sink, kind: type | None = None) -> int:
    """Write a homogeneous record list as UTF-8 CSV (header + one row each).

    Returns the number of data rows written. The record type is inferred from
    the first element; an empty list writes the header only and needs an
    explicit ``kind``."""
    if records:
        inferred = type(records[0])
        if kind is not None and kind is not inferred:
            raise ValidationError(f"records are {inferred.__name__}, not {kind.__name__}")
        kind = inferred
        if any(type(r) is not kind for r in records):
            raise ValidationError("export_csv needs a homogeneous record list")
    elif kind is None:
        raise ValidationError("an empty export needs an explicit record kind for the header")
    return export_csv_for(kind, records, sink)


def export_csv_for(kind: type, records: Iterable, sink: Sink) -> int:
    if kind not in _CSV_SHAPES:
        raise ValidationError(f"no CSV shape registered for {kind.__name__}")
    header, to_row, _ = _CSV_SHAPES[kind]
    close_after = False
    if isinstance(sink, (str, Path)):
        try:
            fh = open(sink, "w", encoding="utf-8", newline="")
        except OSError as exc:
            raise SinkError(f"cannot open sink {sink}: {exc}") from exc
        close_after = True
    else:
        fh = sink
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        count = 0
        for record in records:
            writer.writerow(to_row(record))
            count += 1
        return count
    except OSError as exc:
        raise SinkError(f"cannot write to sink: {exc}") from exc
    finally:
        if close_after:
            fh.close()


def read_csv(kind: type, source: Union[str, Path, io.TextIOBase]) -> list:
    """Re-parse a CSV written by export_csv back into records."""
    if kind not in _CSV_SHAPES:
        raise ValidationError(f"no CSV shape registered for {kind.__name__}")
    header, _, from_row = _CSV_SHAPES[kind]
    if from_row is None:
        raise ValidationError(f"{kind.__name__} rows are write-only summaries")
    close_after = False
    if isinstance(source, (str, Path)):
        fh = open(source, encoding="utf-8", newline="")
        close_after = True
    else:
        fh = source
    try:
        reader = csv.reader(fh)
        seen_header = next(reader, None)
        if tuple(seen_header or ()) != header:
            raise ParseError(f"unexpected CSV header for {kind.__name__}: {seen_header}")
        return [from_row(row) for row in reader]
    finally:
        if close_after:
            fh.close()
