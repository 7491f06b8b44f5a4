"""Controller agent: stage decision, state determination, and strategy selection.

The controller never speaks to the student. After each dialogue round it runs
three structured-output calls against the completion backend and reduces them
to a single :class:`ControllerDecision`. Every backend failure has a
deterministic fallback, so a round always yields a decision:

* stage decision fails        -> do not advance (conservatism),
* state determination fails   -> the neutral progress state,
* strategy selection fails    -> focus by category precedence, first mapped
  strategy of that focus.

Backend answers are never trusted blindly: state lists are sanitized and a
chosen strategy outside the focus state's mapped list is clamped back onto it,
so mapping compliance holds even under adversarial outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from typing import NamedTuple

from . import kb as kbmod
from .errors import MentigoError, PayloadMalformed, ValidationError
from .gateway import (
    Backend,
    CompletionRequest,
    CONTROLLER_TEMPERATURE,
    ROLE_MENTOR,
    ROLE_STUDENT,
    ROLE_SYSTEM,
)
from .kb import QUIET, STAGE_START, KnowledgeBase, StateId, is_sentinel, strategies_for_state
from .templates import render_named

AUTHOR_STUDENT = "student"
AUTHOR_MENTOR = "mentor"
AUTHOR_SYSTEM_NUDGE = "system_nudge"

# Last N transcript turns shown to the backend; bounds token cost.
HISTORY_WINDOW = 12
# Backend may flag at most this many concurrent states.
MAX_ACTIVE_STATES = 3
# Inactivity threshold that raises the QUIET sentinel.
QUIET_THRESHOLD_S = 60.0
# Strategy accompanying a fresh stage (Task Follow-up and Allocation).
STAGE_KICKOFF_STRATEGY = 1
# Neutral state assumed when state determination fails (Normal Progress/Active Questioning).
NEUTRAL_FALLBACK_STATE = 23
# The catalogued state whose mapping stands in for the QUIET sentinel (Silent).
QUIET_PROXY_STATE = 1

# When strategy selection must fall back without a backend, emotional
# categories outrank confidence, which outranks task clarity, which outranks
# the remaining categories in catalogue order.
CATEGORY_PRECEDENCE = (
    "Fatigue/Burnout/Negative Emotions",
    "Lack of Motivation and Confidence",
    "Task/Goal Definition Unclear",
    "Time Management and Task Breakdown Difficulties",
    "Lack of Creative and Divergent Thinking",
    "Insufficient In-depth Thinking and Systematic Analysis",
    "Insufficient Information Collection and Integration Skills",
    "Evaluation and Decision-Making Difficulties",
)


@dataclass(frozen=True)
class DialogueTurn:
    author: str
    text: str
    timestamp: datetime

    def __post_init__(self):
        if self.author in (AUTHOR_STUDENT, AUTHOR_MENTOR) and not self.text:
            raise ValidationError(f"{self.author} turn must have text")


@dataclass(frozen=True)
class SessionContext:
    stage: int
    history: tuple[DialogueTurn, ...]
    task_topic: str
    last_student_input_at: datetime | None = None

    def __post_init__(self):
        stamps = [t.timestamp for t in self.history]
        if any(b < a for a, b in zip(stamps, stamps[1:])):
            raise ValidationError("history timestamps must be non-decreasing")


@dataclass(frozen=True)
class ControllerDecision:
    stage_before: int
    stage_after: int
    advanced: bool
    active_states: tuple[StateId, ...]
    focus_state: StateId
    chosen_strategy: int
    rationale: str
    completion_eligible: bool = False
    degraded: bool = False

    def validate(self, kb: KnowledgeBase) -> None:
        if self.stage_after not in (self.stage_before, self.stage_before + 1):
            raise ValidationError("stage may only stay or advance by one")
        if self.stage_before == kbmod.STAGE_COUNT and self.stage_after != self.stage_before:
            raise ValidationError("final stage is terminal")
        if self.advanced != (self.stage_after == self.stage_before + 1):
            raise ValidationError("advanced flag disagrees with stage delta")
        if self.advanced != (self.active_states == (STAGE_START,)):
            raise ValidationError("stage start sentinel must accompany exactly the advancing rounds")
        if not is_sentinel(self.focus_state):
            if self.chosen_strategy not in strategies_for_state(kb, self.focus_state):
                raise ValidationError(
                    f"strategy {self.chosen_strategy} is not mapped to state {self.focus_state}"
                )


@dataclass(frozen=True)
class ControllerPayload:
    advance: bool = False
    met_criteria: tuple[str, ...] = ()
    states: tuple[int, ...] = ()
    focus: int | None = None
    strategy: int | None = None
    rationale: str = ""


class StageOutcome(NamedTuple):
    advanced: bool
    stage_after: int
    completion_eligible: bool = False
    degraded: bool = False


def parse_controller_payload(text: str) -> ControllerPayload:
    """Strict parse of the controller's structured reply.

    Unknown extra fields are ignored for forward compatibility; a present
    field with the wrong type is malformed. Range checks on ids are the
    caller's job (sanitization and clamping), not the parser's.
    """
    body = text.strip()
    if body.startswith("```"):
        body = body.strip("`")
        if body.startswith("json"):
            body = body[4:]
        body = body.strip()
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as exc:
        raise PayloadMalformed(f"not a JSON object: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise PayloadMalformed("payload must be a JSON object")

    advance = doc.get("advance", False)
    if not isinstance(advance, bool):
        raise PayloadMalformed("'advance' must be a boolean")

    met = doc.get("met_criteria", [])
    if not isinstance(met, list) or any(not isinstance(x, str) for x in met):
        raise PayloadMalformed("'met_criteria' must be a list of strings")

    states = doc.get("states", [])
    if not isinstance(states, list) or any(
        isinstance(x, bool) or not isinstance(x, int) for x in states
    ):
        raise PayloadMalformed("'states' must be a list of integers")

    focus = doc.get("focus")
    if focus is not None and (isinstance(focus, bool) or not isinstance(focus, int)):
        raise PayloadMalformed("'focus' must be an integer")

    strategy = doc.get("strategy")
    if strategy is not None and (isinstance(strategy, bool) or not isinstance(strategy, int)):
        raise PayloadMalformed("'strategy' must be an integer")

    rationale = doc.get("rationale", "")
    if not isinstance(rationale, str):
        raise PayloadMalformed("'rationale' must be a string")

    return ControllerPayload(
        advance=advance,
        met_criteria=tuple(met),
        states=tuple(states),
        focus=focus,
        strategy=strategy,
        rationale=rationale,
    )


_REASK_PREAMBLE = (
    "Your previous reply could not be parsed as the required JSON object. "
    "Answer again with exactly one JSON object in the required shape and no other text.\n\n"
)


def _history_messages(ctx: SessionContext) -> tuple[tuple[str, str], ...]:
    window = ctx.history[-HISTORY_WINDOW:]
    role_map = {
        AUTHOR_STUDENT: ROLE_STUDENT,
        AUTHOR_MENTOR: ROLE_MENTOR,
        AUTHOR_SYSTEM_NUDGE: ROLE_SYSTEM,
    }
    return tuple((role_map[t.author], t.text) for t in window)


def _ask_structured(backend: Backend, request: CompletionRequest) -> ControllerPayload:
    """One structured call with a single error-correcting re-ask."""
    response = backend.complete(request)
    try:
        return parse_controller_payload(response.text)
    except PayloadMalformed:
        retry = CompletionRequest(
            system_text=_REASK_PREAMBLE + request.system_text,
            messages=request.messages,
            temperature=request.temperature,
            max_tokens=request.max_tokens,
        )
        response = backend.complete(retry)
        return parse_controller_payload(response.text)


def decide_stage(ctx: SessionContext, kb: KnowledgeBase, backend: Backend) -> StageOutcome:
    """Decide whether the session advances to the next stage.

    Advancement requires the backend to assert it, and — when the backend
    bothers to enumerate ``met_criteria`` — to assert every criterion of the
    current stage. The final stage never advances; an advance verdict there
    flags the session as eligible for completion instead. Any backend failure
    means no advance.
    """
    stage = kb.stage(ctx.stage)
    criteria = "\n".join(f"- {c}" for c in stage.completion_criteria)
    request = CompletionRequest(
        system_text=render_named(
            "controller/stage_decision.txt",
            {
                "task_topic": ctx.task_topic,
                "stage_ordinal": str(stage.id),
                "stage_name": stage.name,
                "stage_definition": stage.definition,
                "criteria": criteria,
            },
        ),
        messages=_history_messages(ctx),
        temperature=CONTROLLER_TEMPERATURE,
    )
    try:
        payload = _ask_structured(backend, request)
    except MentigoError:
        return StageOutcome(False, ctx.stage, degraded=True)

    asserted = payload.advance
    if asserted and payload.met_criteria:
        # A backend that lists met criteria but misses some contradicts itself.
        asserted = set(stage.completion_criteria) <= set(payload.met_criteria)

    if ctx.stage >= kbmod.STAGE_COUNT:
        return StageOutcome(False, ctx.stage, completion_eligible=asserted)
    if asserted:
        return StageOutcome(True, ctx.stage + 1)
    return StageOutcome(False, ctx.stage)


def determine_states(
    ctx: SessionContext, kb: KnowledgeBase, advanced: bool, backend: Backend
) -> list[StateId]:
    """Determine the student's active states for this round.

    An advancing round is, by definition, a stage start: no backend call is
    made. Otherwise the backend sees the full state catalogue and the recent
    history and returns up to three catalogued state ids; anything out of
    range is dropped, duplicates keep their first position, and an unusable
    answer (after one re-ask) degrades to the neutral progress state.
    """
    if advanced:
        return [STAGE_START]

    catalog = "\n".join(f"{s.id}. {s.name}: {s.definition}" for s in kb.states)
    stage = kb.stage(ctx.stage)
    request = CompletionRequest(
        system_text=render_named(
            "controller/state_determine.txt",
            {
                "task_topic": ctx.task_topic,
                "stage_ordinal": str(stage.id),
                "stage_name": stage.name,
                "state_catalog": catalog,
            },
        ),
        messages=_history_messages(ctx),
        temperature=CONTROLLER_TEMPERATURE,
    )
    try:
        payload = _ask_structured(backend, request)
        states = _sanitize_states(payload.states)
        if not states:
            retry = CompletionRequest(
                system_text=_REASK_PREAMBLE + request.system_text,
                messages=request.messages,
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
            states = _sanitize_states(parse_controller_payload(backend.complete(retry).text).states)
    except MentigoError:
        states = []
    return list(states) if states else [NEUTRAL_FALLBACK_STATE]


def _sanitize_states(raw: tuple[int, ...]) -> list[int]:
    seen: list[int] = []
    for sid in raw:
        if 1 <= sid <= kbmod.STATE_COUNT and sid not in seen:
            seen.append(sid)
        if len(seen) == MAX_ACTIVE_STATES:
            break
    return seen


def detect_quiet(
    last_student_input_at: datetime, now: datetime, threshold_s: float = QUIET_THRESHOLD_S
) -> bool:
    """True iff the student has been idle for at least the threshold."""
    gap = (now - last_student_input_at).total_seconds()
    if gap < 0:
        raise ValidationError("now precedes the last student input")
    return gap >= threshold_s


def fallback_focus(kb: KnowledgeBase, active_states: list[StateId]) -> int:
    """Deterministic focus pick: highest category precedence, ties by position."""
    catalogued = [s for s in active_states if not is_sentinel(s)]
    if not catalogued:
        return NEUTRAL_FALLBACK_STATE
    rank = {name: i for i, name in enumerate(CATEGORY_PRECEDENCE)}
    return min(
        catalogued,
        key=lambda sid: (rank[kb.state(sid).category], catalogued.index(sid)),
    )


def select_strategy(
    kb: KnowledgeBase,
    active_states: list[StateId],
    backend: Backend,
    *,
    ctx: SessionContext | None = None,
) -> tuple[StateId, int]:
    """Pick the focus state and its guidance strategy.

    Stage starts are forced to the kickoff strategy; the quiet sentinel
    borrows the Silent state's mapping. Otherwise the backend chooses among
    the active states, and its answer is clamped onto the mapping: a bad
    strategy becomes the focus state's first mapped strategy, a bad focus (or
    any backend failure) falls back to the category-precedence pick.
    """
    if not active_states:
        raise ValidationError("active_states must be non-empty")
    if active_states == [STAGE_START]:
        return (STAGE_START, STAGE_KICKOFF_STRATEGY)
    if QUIET in active_states:
        return (QUIET, strategies_for_state(kb, QUIET_PROXY_STATE)[0])

    catalogued: list[int] = [s for s in active_states if not is_sentinel(s)]
    candidates = "\n".join(
        f"state {sid} ({kb.state(sid).name}): "
        + ", ".join(f"{st} ({kb.strategy(st).name})" for st in strategies_for_state(kb, sid))
        for sid in catalogued
    )
    stage = kb.stage(ctx.stage) if ctx is not None else None
    request = CompletionRequest(
        system_text=render_named(
            "controller/strategy_select.txt",
            {
                "task_topic": ctx.task_topic if ctx else "",
                "stage_ordinal": str(stage.id) if stage else "-",
                "stage_name": stage.name if stage else "-",
                "candidates": candidates,
            },
        ),
        messages=_history_messages(ctx) if ctx else (),
        temperature=CONTROLLER_TEMPERATURE,
    )
    try:
        payload = _ask_structured(backend, request)
    except MentigoError:
        focus = fallback_focus(kb, catalogued)
        return (focus, strategies_for_state(kb, focus)[0])

    focus = payload.focus if payload.focus in catalogued else fallback_focus(kb, catalogued)
    mapped = strategies_for_state(kb, focus)
    strategy = payload.strategy if payload.strategy in mapped else mapped[0]
    return (focus, strategy)


def run_round(ctx: SessionContext, kb: KnowledgeBase, backend: Backend) -> ControllerDecision:
    """One full controller round: stage decision, states, strategy.

    Composes the three functions and their fallbacks into a decision that
    always satisfies the decision invariants (validated before returning).
    """
    outcome = decide_stage(ctx, kb, backend)
    after_ctx = SessionContext(
        stage=outcome.stage_after,
        history=ctx.history,
        task_topic=ctx.task_topic,
        last_student_input_at=ctx.last_student_input_at,
    )
    active = determine_states(after_ctx, kb, outcome.advanced, backend)
    focus, strategy = select_strategy(kb, active, backend, ctx=after_ctx)
    decision = ControllerDecision(
        stage_before=ctx.stage,
        stage_after=outcome.stage_after,
        advanced=outcome.advanced,
        active_states=tuple(active),
        focus_state=focus,
        chosen_strategy=strategy,
        rationale=_round_rationale(outcome, active, focus, strategy, kb),
        completion_eligible=outcome.completion_eligible,
        degraded=outcome.degraded,
    )
    decision.validate(kb)
    return decision


def _round_rationale(
    outcome: StageOutcome, active: list[StateId], focus: StateId, strategy: int, kb: KnowledgeBase
) -> str:
    if outcome.advanced:
        return f"all criteria met; advanced to stage {outcome.stage_after} and kicked it off"
    if outcome.completion_eligible:
        return "final stage criteria met; session is eligible for completion"
    focus_name = focus if is_sentinel(focus) else kb.state(focus).name
    return (
        f"staying in stage {outcome.stage_after}; focus on {focus_name} "
        f"with strategy {kb.strategy(strategy).name}"
    )
