"""Mentor agent: prompt assembly and empathetic reply generation.

The mentor is the only component that talks to the student. Each reply is
generated from a :class:`PromptBundle` that stitches together the persona
(character prompt), the current stage's supplement, the chosen strategy with
its exemplar dialogues, a window of recent history, and the controller's
rationale. Assembly is deterministic; only the backend call is not.

The mentor path never mutates controller state: it reads a decision, it does
not write one.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime

from .controller import (
    AUTHOR_MENTOR,
    AUTHOR_STUDENT,
    AUTHOR_SYSTEM_NUDGE,
    ControllerDecision,
    DialogueTurn,
    HISTORY_WINDOW,
)
from .errors import MentigoError, ValidationError
from .gateway import (
    Backend,
    CompletionRequest,
    MENTOR_TEMPERATURE,
    ROLE_MENTOR,
    ROLE_STUDENT,
    ROLE_SYSTEM,
)
from .kb import ExemplarDialogue, KnowledgeBase
from .templates import render_named

# At most this many exemplar dialogues ride along with a strategy.
EXEMPLAR_CAP = 3
# Strategy used for stage kickoffs, greetings, and nudges (Task Follow-up and Allocation).
KICKOFF_STRATEGY = 1
# Hard cap on a mentor reply; long lectures get cut at a sentence boundary.
REPLY_CHAR_CAP = 1200

_SENTENCE_END = re.compile(r"[.!?…](?=\s|$)")
_PLACEHOLDER = re.compile(r"\{\{[a-z0-9_]*\}\}")


@dataclass(frozen=True)
class PromptBundle:
    character_prompt: str
    stage_prompt: str
    strategy_block: str
    exemplars: tuple[ExemplarDialogue, ...]
    history_window: tuple[DialogueTurn, ...]
    decision_rationale: str
    stage_id: int
    strategy_id: int
    task_topic: str = ""

    def __post_init__(self):
        if not self.character_prompt.strip() or not self.stage_prompt.strip():
            raise ValidationError("bundle needs a character prompt and a stage prompt")
        for ex in self.exemplars:
            if ex.strategy_id != self.strategy_id:
                raise ValidationError("bundle exemplars must share the bundle's strategy")


@dataclass(frozen=True)
class MentorMessage:
    text: str
    stage: int
    strategy: int
    generated_at: datetime
    degraded: bool = False

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("mentor message must have text")
        if len(self.text) > REPLY_CHAR_CAP:
            raise ValidationError(f"mentor message exceeds {REPLY_CHAR_CAP} characters")
        if _PLACEHOLDER.search(self.text):
            raise ValidationError("mentor message leaks template placeholders")


def assemble_prompt(
    kb: KnowledgeBase,
    decision: ControllerDecision,
    history: tuple[DialogueTurn, ...] | list[DialogueTurn],
    task_topic: str = "",
) -> PromptBundle:
    """Deterministically build the mentor's input bundle for one decision.

    Exemplars are filtered to the chosen strategy, same-stage ones first, then
    capped. A strategy without exemplars simply yields an empty list.
    """
    decision.validate(kb)
    strategy = kb.strategy(decision.chosen_strategy)
    same_stage = [e for e in strategy.exemplars if e.stage_id == decision.stage_after]
    other = [e for e in strategy.exemplars if e.stage_id != decision.stage_after]
    exemplars = tuple((same_stage + other)[:EXEMPLAR_CAP])
    stage = kb.stage(decision.stage_after)
    return PromptBundle(
        character_prompt=kb.character_prompt,
        stage_prompt=stage.stage_prompt,
        strategy_block=f"{strategy.name}: {strategy.definition}",
        exemplars=exemplars,
        history_window=tuple(history[-HISTORY_WINDOW:]),
        decision_rationale=decision.rationale,
        stage_id=decision.stage_after,
        strategy_id=decision.chosen_strategy,
        task_topic=task_topic,
    )


def kickoff_bundle(
    kb: KnowledgeBase,
    stage_id: int,
    history: tuple[DialogueTurn, ...] | list[DialogueTurn],
    task_topic: str = "",
    rationale: str = "stage kickoff: orient the student in the new stage",
) -> PromptBundle:
    """Bundle for a stage-opening message (greeting or fresh stage), outside
    any controller round: fixed kickoff strategy, stage-start sentinel."""
    strategy = kb.strategy(KICKOFF_STRATEGY)
    stage = kb.stage(stage_id)
    same_stage = [e for e in strategy.exemplars if e.stage_id == stage_id]
    other = [e for e in strategy.exemplars if e.stage_id != stage_id]
    return PromptBundle(
        character_prompt=kb.character_prompt,
        stage_prompt=stage.stage_prompt,
        strategy_block=f"{strategy.name}: {strategy.definition}",
        exemplars=tuple((same_stage + other)[:EXEMPLAR_CAP]),
        history_window=tuple(history[-HISTORY_WINDOW:]),
        decision_rationale=rationale,
        stage_id=stage_id,
        strategy_id=KICKOFF_STRATEGY,
        task_topic=task_topic,
    )


def _stage_supplement(kb: KnowledgeBase, stage_id: int) -> str:
    stage = kb.stage(stage_id)
    return render_named(
        f"mentor/stage_{stage_id}.txt",
        {
            "stage_ordinal": str(stage.id),
            "stage_name": stage.name,
            "stage_definition": stage.definition,
            "stage_prompt": stage.stage_prompt,
        },
    )


def _exemplar_block(exemplars: tuple[ExemplarDialogue, ...]) -> str:
    if not exemplars:
        return ""
    lines = ["Example exchanges for this strategy:"]
    for ex in exemplars:
        lines.append(f'  Student: "{ex.student_utterance}"')
        lines.append(f'  Mentor: "{ex.mentor_utterance}"')
    return "\n".join(lines) + "\n"


def render_mentor_request(kb: KnowledgeBase, bundle: PromptBundle) -> CompletionRequest:
    strategy_name, _, strategy_definition = bundle.strategy_block.partition(": ")
    system_text = render_named(
        "mentor/character.txt",
        {
            "character_prompt": bundle.character_prompt,
            "task_topic": bundle.task_topic or "(not recorded)",
            "stage_supplement": _stage_supplement(kb, bundle.stage_id),
            "strategy_name": strategy_name,
            "strategy_definition": strategy_definition,
            "exemplars": _exemplar_block(bundle.exemplars),
            "rationale": bundle.decision_rationale or "(none)",
        },
    )
    role_map = {
        AUTHOR_STUDENT: ROLE_STUDENT,
        AUTHOR_MENTOR: ROLE_MENTOR,
        AUTHOR_SYSTEM_NUDGE: ROLE_SYSTEM,
    }
    messages = tuple((role_map[t.author], t.text) for t in bundle.history_window)
    return CompletionRequest(
        system_text=system_text,
        messages=messages,
        temperature=MENTOR_TEMPERATURE,
    )


def trim_reply(text: str, cap: int = REPLY_CHAR_CAP) -> str:
    """Whitespace-trim and cap at a sentence boundary where one exists."""
    text = text.strip()
    if len(text) <= cap:
        return text
    head = text[:cap]
    ends = [m.end() for m in _SENTENCE_END.finditer(head)]
    # Only cut at a sentence end when it keeps a meaningful amount of text.
    if ends and ends[-1] >= cap // 4:
        return head[: ends[-1]].rstrip()
    return head.rstrip()


def fallback_line(kb: KnowledgeBase, strategy_id: int) -> str:
    """Strategy-specific canned reply used when the backend is unavailable."""
    strategy = kb.strategy(strategy_id)
    return (
        f"Let's try something together: {strategy.definition} "
        "Tell me what you come up with!"
    )


def _scrub(text: str) -> str:
    """Strip placeholder residue; reject replies that are structured payloads."""
    text = _PLACEHOLDER.sub("", text).strip()
    if text.startswith("{") or text.startswith("["):
        try:
            import json

            json.loads(text)
            return ""  # a JSON payload is not a mentor reply
        except ValueError:
            pass
    return text


def generate_reply(
    kb: KnowledgeBase,
    bundle: PromptBundle,
    backend: Backend,
    *,
    now: datetime,
) -> MentorMessage:
    """Generate the mentor's reply for an assembled bundle.

    One backend call at mentor temperature. Output is trimmed and
    length-capped. If the backend fails (or produces nothing usable) the
    reply degrades to the strategy's canned fallback line, flagged so the
    session log records the degradation.
    """
    request = render_mentor_request(kb, bundle)
    try:
        response = backend.complete(request)
        text = _scrub(trim_reply(response.text))
        if not text:
            raise ValidationError("backend produced an empty reply")
        return MentorMessage(
            text=text, stage=bundle.stage_id, strategy=bundle.strategy_id, generated_at=now
        )
    except MentigoError:
        return MentorMessage(
            text=fallback_line(kb, bundle.strategy_id),
            stage=bundle.stage_id,
            strategy=bundle.strategy_id,
            generated_at=now,
            degraded=True,
        )


# Strategy a quiet nudge reports in its message metadata: the kickoff /
# task-follow-up strategy, matching the Silent state's first mapped strategy.
NUDGE_STRATEGY = KICKOFF_STRATEGY


def quiet_nudge(
    kb: KnowledgeBase,
    stage_id: int,
    backend: Backend | None,
    *,
    now: datetime,
    history: tuple[DialogueTurn, ...] = (),
    task_topic: str = "",
) -> MentorMessage:
    """Short proactive re-engagement message for a quiet student.

    The request carries the current stage's supplement so the nudge points at
    the stage task. Without a usable backend, a canned stage-aware line is
    used. Nudge cadence (one per quiet interval) is the session's job.
    """
    stage = kb.stage(stage_id)
    canned = (
        f"Still there? We're in the {stage.name} stage — no rush. "
        f"Want to tell me one small thought you have so far?"
    )
    if backend is None:
        return MentorMessage(
            text=canned, stage=stage_id, strategy=NUDGE_STRATEGY, generated_at=now, degraded=True
        )
    system_text = (
        f"{kb.character_prompt}\n\n"
        f"The task topic is: {task_topic or '(not recorded)'}\n\n"
        f"{_stage_supplement(kb, stage_id)}\n"
        "The student has gone quiet for over a minute. Write one short, warm "
        "nudge that re-engages them with the current stage task and asks one "
        "easy question. Do not scold them for the silence."
    )
    role_map = {
        AUTHOR_STUDENT: ROLE_STUDENT,
        AUTHOR_MENTOR: ROLE_MENTOR,
        AUTHOR_SYSTEM_NUDGE: ROLE_SYSTEM,
    }
    request = CompletionRequest(
        system_text=system_text,
        messages=tuple((role_map[t.author], t.text) for t in history[-HISTORY_WINDOW:]),
        temperature=MENTOR_TEMPERATURE,
    )
    try:
        response = backend.complete(request)
        text = _scrub(trim_reply(response.text))
        if not text:
            raise ValidationError("backend produced an empty nudge")
        return MentorMessage(text=text, stage=stage_id, strategy=NUDGE_STRATEGY, generated_at=now)
    except MentigoError:
        return MentorMessage(
            text=canned, stage=stage_id, strategy=NUDGE_STRATEGY, generated_at=now, degraded=True
        )
