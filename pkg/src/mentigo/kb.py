"""Knowledge base: stages, student states, guidance strategies, and their mapping.

The knowledge base is pure data. It is loaded once from a JSON document,
validated against every structural invariant, and then treated as immutable —
hot reload means constructing a new value. All engine components consult it
through the small query helpers at the bottom of this module.

Document format (one UTF-8 JSON object):

    {
      "stages":     [{"id", "name", "definition", "completion_criteria", "stage_prompt"}, ...],
      "states":     [{"id", "category", "name", "definition", "strategies"}, ...],
      "strategies": [{"id", "category", "name", "definition", "exemplars"}, ...],
      "character_prompt": "...",
      "aliases":    {"<name variant>": <strategy id or null>, ...}
    }

A state's ``strategies`` list may hold integer ids or strategy names; names
are resolved through the canonical strategy names plus the alias table. The
alias table exists because the state mapping was catalogued with name
variants that differ from the canonical strategy names.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Union

from .errors import ParseError, UnknownState, ValidationError

# Sentinel pseudo-states. They are raised by the engine itself (stage
# advancement, inactivity) and are never produced by backend classification.
STAGE_START = "STAGE_START"
QUIET = "QUIET"
SENTINELS = (STAGE_START, QUIET)

# A state id is a real catalogued state (1..23) or one of the two sentinels.
StateId = Union[int, str]

STATE_COUNT = 23
STRATEGY_COUNT = 20
STAGE_COUNT = 6

STAGE_NAMES = (
    "Problem Discovery",
    "Information Collection",
    "Problem Definition",
    "Solution Ideation",
    "Solution Evaluation",
    "Solution Implementation",
)

STRATEGY_CATEGORIES = (
    "Task Planning and Execution Support",
    "Creative Thinking Stimulation",
    "Deep Thinking and Systematic Analysis",
    "Information Integration and Resource Support",
    "Emotional Support and Motivation Stimulation",
)

STATE_CATEGORY_COUNT = 8


@dataclass(frozen=True)
class StageSpec:
    id: int
    name: str
    definition: str
    completion_criteria: tuple[str, ...]
    stage_prompt: str


@dataclass(frozen=True)
class StateSpec:
    id: int
    category: str
    name: str
    definition: str
    strategy_ids: tuple[int, ...]


@dataclass(frozen=True)
class ExemplarDialogue:
    student_utterance: str
    mentor_utterance: str
    state_id: int
    strategy_id: int
    stage_id: int


@dataclass(frozen=True)
class StrategySpec:
    id: int
    category: str
    name: str
    definition: str
    exemplars: tuple[ExemplarDialogue, ...] = ()


@dataclass(frozen=True, eq=True)
class KnowledgeBase:
    stages: tuple[StageSpec, ...]
    states: tuple[StateSpec, ...]
    strategies: tuple[StrategySpec, ...]
    character_prompt: str
    # Name variant -> strategy id; None marks a variant with no counterpart.
    alias_table: dict[str, int | None] = field(default_factory=dict)

    def stage(self, stage_id: int) -> StageSpec:
        if not isinstance(stage_id, int) or not 1 <= stage_id <= STAGE_COUNT:
            raise ValidationError(f"no such stage: {stage_id!r}")
        return self.stages[stage_id - 1]

    def state(self, state_id: StateId) -> StateSpec:
        if not isinstance(state_id, int) or not 1 <= state_id <= STATE_COUNT:
            raise UnknownState(f"no such state: {state_id!r}")
        return self.states[state_id - 1]

    def strategy(self, strategy_id: int) -> StrategySpec:
        if not isinstance(strategy_id, int) or not 1 <= strategy_id <= STRATEGY_COUNT:
            raise ValidationError(f"no such strategy: {strategy_id!r}")
        return self.strategies[strategy_id - 1]


def is_sentinel(state_id: StateId) -> bool:
    return state_id in SENTINELS


def default_fixture_path() -> Path:
    """Path of the packaged knowledge-base fixture."""
    from importlib import resources

    return Path(str(resources.files("mentigo") / "data" / "kb" / "fixture.json"))


Source = Union[str, bytes, Path, BinaryIO, io.TextIOBase]


def _read_source(source: Source) -> str:
    if isinstance(source, Path):
        return source.read_text(encoding="utf-8")
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    if isinstance(data, bytes):
        return data.decode("utf-8")
    return data


def _require(obj: dict, key: str, kind: type, locus: str) -> Any:
    if key not in obj:
        raise ParseError(f"{locus}: missing field '{key}'")
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise ParseError(f"{locus}.{key}: expected integer, got boolean")
    if not isinstance(value, kind):
        raise ParseError(f"{locus}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _str_list(obj: dict, key: str, locus: str) -> list[str]:
    values = _require(obj, key, list, locus)
    for i, item in enumerate(values):
        if not isinstance(item, str):
            raise ParseError(f"{locus}.{key}[{i}]: expected string")
    return values


def load_knowledge_base(source: Source) -> KnowledgeBase:
    """Parse and validate a knowledge-base document.

    Raises ParseError with a field locus on malformed documents, and
    ValidationError listing *every* violated invariant on well-formed but
    inconsistent ones. Loading is pure: the same bytes always produce the
    same value.
    """
    text = _read_source(source)
    if not text.strip():
        raise ParseError("empty document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")

    for key in ("stages", "states", "strategies", "character_prompt", "aliases"):
        if key not in doc:
            raise ParseError(f"missing top-level key '{key}'")

    violations: list[str] = []

    # --- strategies first: states resolve names against them -------------
    strategies: list[StrategySpec] = []
    raw_strategies = _require(doc, "strategies", list, "document")
    for i, raw in enumerate(raw_strategies):
        locus = f"strategies[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{locus}: expected object")
        exemplars = []
        for j, ex in enumerate(raw.get("exemplars", [])):
            ex_locus = f"{locus}.exemplars[{j}]"
            if not isinstance(ex, dict):
                raise ParseError(f"{ex_locus}: expected object")
            exemplars.append(
                ExemplarDialogue(
                    student_utterance=_require(ex, "student_utterance", str, ex_locus),
                    mentor_utterance=_require(ex, "mentor_utterance", str, ex_locus),
                    state_id=_require(ex, "state_id", int, ex_locus),
                    strategy_id=_require(ex, "strategy_id", int, ex_locus),
                    stage_id=_require(ex, "stage_id", int, ex_locus),
                )
            )
        strategies.append(
            StrategySpec(
                id=_require(raw, "id", int, locus),
                category=_require(raw, "category", str, locus),
                name=_require(raw, "name", str, locus),
                definition=_require(raw, "definition", str, locus),
                exemplars=tuple(exemplars),
            )
        )

    name_to_id = {s.name: s.id for s in strategies}
    raw_aliases = _require(doc, "aliases", dict, "document")
    alias_table: dict[str, int | None] = {}
    for variant, target in raw_aliases.items():
        if target is not None and (isinstance(target, bool) or not isinstance(target, int)):
            raise ParseError(f"aliases['{variant}']: expected integer or null")
        alias_table[variant] = target

    def resolve_strategy_ref(ref: Any, locus: str) -> int | None:
        """Integer id, canonical name, or alias-table variant -> strategy id."""
        if isinstance(ref, bool):
            raise ParseError(f"{locus}: expected strategy id or name")
        if isinstance(ref, int):
            return ref
        if isinstance(ref, str):
            if ref in name_to_id:
                return name_to_id[ref]
            target = alias_table.get(ref)
            if target is not None:
                return target
            violations.append(f"{locus}: strategy name '{ref}' resolves to nothing")
            return None
        raise ParseError(f"{locus}: expected strategy id or name")

    # --- states -----------------------------------------------------------
    states: list[StateSpec] = []
    raw_states = _require(doc, "states", list, "document")
    for i, raw in enumerate(raw_states):
        locus = f"states[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{locus}: expected object")
        state_id = _require(raw, "id", int, locus)
        refs = _require(raw, "strategies", list, locus)
        resolved: list[int] = []
        for j, ref in enumerate(refs):
            sid = resolve_strategy_ref(ref, f"state {state_id} strategies[{j}]")
            # Variants may collapse onto the same strategy; keep first occurrence.
            if sid is not None and sid not in resolved:
                resolved.append(sid)
        states.append(
            StateSpec(
                id=state_id,
                category=_require(raw, "category", str, locus),
                name=_require(raw, "name", str, locus),
                definition=_require(raw, "definition", str, locus),
                strategy_ids=tuple(resolved),
            )
        )

    # --- stages -----------------------------------------------------------
    stages: list[StageSpec] = []
    raw_stages = _require(doc, "stages", list, "document")
    for i, raw in enumerate(raw_stages):
        locus = f"stages[{i}]"
        if not isinstance(raw, dict):
            raise ParseError(f"{locus}: expected object")
        stages.append(
            StageSpec(
                id=_require(raw, "id", int, locus),
                name=_require(raw, "name", str, locus),
                definition=_require(raw, "definition", str, locus),
                completion_criteria=tuple(_str_list(raw, "completion_criteria", locus)),
                stage_prompt=_require(raw, "stage_prompt", str, locus),
            )
        )

    character_prompt = _require(doc, "character_prompt", str, "document")

    kb = KnowledgeBase(
        stages=tuple(sorted(stages, key=lambda s: s.id)),
        states=tuple(sorted(states, key=lambda s: s.id)),
        strategies=tuple(sorted(strategies, key=lambda s: s.id)),
        character_prompt=character_prompt,
        alias_table=alias_table,
    )
    violations.extend(_collect_violations(kb))
    if violations:
        raise ValidationError(violations)
    return kb


def _collect_violations(kb: KnowledgeBase) -> list[str]:
    v: list[str] = []

    stage_ids = [s.id for s in kb.stages]
    if stage_ids != list(range(1, STAGE_COUNT + 1)):
        v.append(f"stages must be exactly ids 1..{STAGE_COUNT}, got {stage_ids}")
    else:
        for spec in kb.stages:
            expected = STAGE_NAMES[spec.id - 1]
            if spec.name != expected:
                v.append(f"stage {spec.id} must be named '{expected}', got '{spec.name}'")
            if not spec.definition.strip():
                v.append(f"stage {spec.id}: empty definition")
            if not spec.completion_criteria:
                v.append(f"stage {spec.id}: needs at least one completion criterion")
            if not spec.stage_prompt.strip():
                v.append(f"stage {spec.id}: empty stage prompt")

    state_ids = [s.id for s in kb.states]
    if state_ids != list(range(1, STATE_COUNT + 1)):
        v.append(f"states must be exactly ids 1..{STATE_COUNT}, got {state_ids}")
    state_categories = {s.category for s in kb.states}
    if state_ids == list(range(1, STATE_COUNT + 1)) and len(state_categories) != STATE_CATEGORY_COUNT:
        v.append(f"states must span exactly {STATE_CATEGORY_COUNT} categories, got {len(state_categories)}")
    for spec in kb.states:
        if not spec.strategy_ids:
            v.append(f"state {spec.id}: no mapped strategies")
        for sid in spec.strategy_ids:
            if not 1 <= sid <= STRATEGY_COUNT:
                v.append(f"state {spec.id}: strategy id {sid} out of range 1..{STRATEGY_COUNT}")

    strategy_ids = [s.id for s in kb.strategies]
    if strategy_ids != list(range(1, STRATEGY_COUNT + 1)):
        v.append(f"strategies must be exactly ids 1..{STRATEGY_COUNT}, got {strategy_ids}")
    strat_categories = {s.category for s in kb.strategies}
    if strat_categories != set(STRATEGY_CATEGORIES):
        v.append(
            "strategy categories must match the five canonical guidance categories, "
            f"got {sorted(strat_categories)}"
        )

    # Coverage: every strategy reachable from some state, except the fixed
    # stage-kickoff strategy which is allowed to exist for kickoffs alone.
    referenced = {sid for s in kb.states for sid in s.strategy_ids}
    for spec in kb.strategies:
        if spec.id not in referenced and spec.id != 1:
            v.append(f"strategy {spec.id} ({spec.name}) is referenced by no state")

    for spec in kb.strategies:
        for k, ex in enumerate(spec.exemplars):
            locus = f"strategy {spec.id} exemplar {k}"
            if not 1 <= ex.state_id <= STATE_COUNT:
                v.append(f"{locus}: unknown state {ex.state_id}")
            if not 1 <= ex.strategy_id <= STRATEGY_COUNT:
                v.append(f"{locus}: unknown strategy {ex.strategy_id}")
            if not 1 <= ex.stage_id <= STAGE_COUNT:
                v.append(f"{locus}: unknown stage {ex.stage_id}")

    if not kb.character_prompt.strip():
        v.append("character_prompt is empty")

    return v


def strategies_for_state(kb: KnowledgeBase, state: StateId) -> list[int]:
    """Mapped guidance strategies for one catalogued state, in catalogue order.

    Sentinels are not catalogued states and are rejected: the engine decides
    their strategy directly instead of consulting the mapping.
    """
    if is_sentinel(state):
        raise UnknownState(f"sentinel state {state} has no strategy mapping")
    return list(kb.state(state).strategy_ids)


def validate_alias_table(kb: KnowledgeBase) -> list[str]:
    """Every alias-table name variant that resolves to no known strategy."""
    known = {s.id for s in kb.strategies}
    unresolved = [
        variant
        for variant, target in kb.alias_table.items()
        if target is None or target not in known
    ]
    return sorted(unresolved)


def serialize_knowledge_base(kb: KnowledgeBase) -> str:
    """Inverse of load_knowledge_base: load(serialize(kb)) == kb."""
    doc = {
        "stages": [
            {
                "id": s.id,
                "name": s.name,
                "definition": s.definition,
                "completion_criteria": list(s.completion_criteria),
                "stage_prompt": s.stage_prompt,
            }
            for s in kb.stages
        ],
        "states": [
            {
                "id": s.id,
                "category": s.category,
                "name": s.name,
                "definition": s.definition,
                "strategies": list(s.strategy_ids),
            }
            for s in kb.states
        ],
        "strategies": [
            {
                "id": s.id,
                "category": s.category,
                "name": s.name,
                "definition": s.definition,
                "exemplars": [
                    {
                        "student_utterance": e.student_utterance,
                        "mentor_utterance": e.mentor_utterance,
                        "state_id": e.state_id,
                        "strategy_id": e.strategy_id,
                        "stage_id": e.stage_id,
                    }
                    for e in s.exemplars
                ],
            }
            for s in kb.strategies
        ],
        "character_prompt": kb.character_prompt,
        "aliases": dict(kb.alias_table),
    }
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"
