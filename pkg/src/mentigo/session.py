"""Session lifecycle, event sourcing, and the inactivity clock.

Every state change of a session is captured as an append-only, gap-free
sequence of events; the live session object is just a fold over that
sequence, which :func:`replay` re-runs to reconstruct a session from its log
alone. One JSON object per line, millisecond UTC timestamps, and injectable
clock and id factory keep logs byte-stable under scripted backends.

Within one session all processing is serialized behind a per-session lock;
different sessions are independent.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable

from . import controller as ctl
from . import mentor as mnt
from .clock import Clock, SystemClock, format_instant, parse_instant
from .controller import ControllerDecision, DialogueTurn, SessionContext
from .errors import (
    CorruptLog,
    SessionNotActive,
    SessionNotFound,
    ValidationError,
    WrongStage,
)
from .gateway import Backend
from .kb import STAGE_COUNT, KnowledgeBase
from .mentor import MentorMessage, assemble_prompt, generate_reply, quiet_nudge

STATUS_ACTIVE = "active"
STATUS_COMPLETED = "completed"
STATUS_ABANDONED = "abandoned"

EV_CREATED = "created"
EV_STUDENT_MSG = "student_msg"
EV_DECISION = "decision"
EV_MENTOR_MSG = "mentor_msg"
EV_NUDGE = "nudge"
EV_REPORT_SUBMITTED = "report_submitted"
EV_COMPLETED = "completed"

EVENT_KINDS = (
    EV_CREATED,
    EV_STUDENT_MSG,
    EV_DECISION,
    EV_MENTOR_MSG,
    EV_NUDGE,
    EV_REPORT_SUBMITTED,
    EV_COMPLETED,
)

# Sessions idle longer than this are closed as abandoned.
ABANDON_AFTER_S = 24 * 3600


@dataclass(frozen=True)
class LearningReport:
    problem_background: str
    solution_concept: str
    implementation_plan: str
    anticipated_challenges: str
    submitted_at: datetime

    FIELDS = ("problem_background", "solution_concept", "implementation_plan", "anticipated_challenges")

    def missing_fields(self) -> list[str]:
        return [name for name in self.FIELDS if not getattr(self, name).strip()]


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    kind: str
    at: datetime
    payload: dict

    def to_line(self) -> str:
        record = {
            "seq": self.seq,
            "kind": self.kind,
            "at": format_instant(self.at),
            "payload": self.payload,
        }
        return json.dumps(record, ensure_ascii=False, separators=(",", ":"))

    @staticmethod
    def from_line(line: str) -> "SessionEvent":
        try:
            record = json.loads(line)
            return SessionEvent(
                seq=record["seq"],
                kind=record["kind"],
                at=parse_instant(record["at"]),
                payload=record["payload"],
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorruptLog(f"unreadable event line: {exc}") from exc


@dataclass
class Session:
    id: str
    task_topic: str
    created_at: datetime
    stage: int = 1
    status: str = STATUS_ACTIVE
    transcript: list[DialogueTurn] = field(default_factory=list)
    decisions: list[ControllerDecision] = field(default_factory=list)
    report: LearningReport | None = None
    completion_eligible: bool = False

    def view(self) -> dict:
        """JSON-safe projection used by the API and the CLI."""
        return {
            "id": self.id,
            "task_topic": self.task_topic,
            "created_at": format_instant(self.created_at),
            "stage": self.stage,
            "status": self.status,
            "completion_eligible": self.completion_eligible,
            "transcript": [
                {"author": t.author, "text": t.text, "at": format_instant(t.timestamp)}
                for t in self.transcript
            ],
            "decisions": [decision_payload(d) for d in self.decisions],
            "report": None
            if self.report is None
            else {
                "problem_background": self.report.problem_background,
                "solution_concept": self.report.solution_concept,
                "implementation_plan": self.report.implementation_plan,
                "anticipated_challenges": self.report.anticipated_challenges,
                "submitted_at": format_instant(self.report.submitted_at),
            },
        }


def decision_payload(d: ControllerDecision) -> dict:
    return {
        "stage_before": d.stage_before,
        "stage_after": d.stage_after,
        "advanced": d.advanced,
        "active_states": list(d.active_states),
        "focus_state": d.focus_state,
        "chosen_strategy": d.chosen_strategy,
        "rationale": d.rationale,
        "completion_eligible": d.completion_eligible,
        "degraded": d.degraded,
    }


def decision_from_payload(p: dict) -> ControllerDecision:
    return ControllerDecision(
        stage_before=p["stage_before"],
        stage_after=p["stage_after"],
        advanced=p["advanced"],
        active_states=tuple(p["active_states"]),
        focus_state=p["focus_state"],
        chosen_strategy=p["chosen_strategy"],
        rationale=p["rationale"],
        completion_eligible=p.get("completion_eligible", False),
        degraded=p.get("degraded", False),
    )


def _default_id_factory() -> str:
    return uuid.uuid4().hex[:16]


def seeded_id_factory(seed: int) -> Callable[[], str]:
    """Deterministic session ids for reproducible simulations."""
    counter = {"n": 0}

    def make() -> str:
        counter["n"] += 1
        return f"sess-{seed:08x}-{counter['n']:04d}"

    return make


@dataclass
class _LiveSession:
    session: Session
    events: list[SessionEvent] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_student_input_at: datetime | None = None
    last_activity_at: datetime | None = None
    nudged_since_student: bool = False


class SessionStore:
    """Owns every live session and drives the controller/mentor round trip.

    ``controller_backend`` and ``mentor_backend`` may be the same object; they
    are separate because the two agents run at different temperatures and, in
    scripted runs, off different scripts.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        controller_backend: Backend,
        mentor_backend: Backend,
        *,
        clock: Clock | None = None,
        id_factory: Callable[[], str] | None = None,
        log_dir: str | Path | None = None,
    ):
        self.kb = kb
        self.controller_backend = controller_backend
        self.mentor_backend = mentor_backend
        self.clock = clock or SystemClock()
        self.id_factory = id_factory or _default_id_factory
        self.log_dir = Path(log_dir) if log_dir else None
        self._sessions: dict[str, _LiveSession] = {}
        self._registry_lock = threading.Lock()
        self._listeners: list[Callable[[str, SessionEvent], None]] = []

    # -- event plumbing ----------------------------------------------------

    def subscribe(self, listener: Callable[[str, SessionEvent], None]) -> None:
        """Register a callback fired after each appended event (used by the API stream)."""
        self._listeners.append(listener)

    def _append(self, live: _LiveSession, kind: str, payload: dict, at: datetime) -> SessionEvent:
        event = SessionEvent(seq=len(live.events) + 1, kind=kind, at=at, payload=payload)
        live.events.append(event)
        live.last_activity_at = at
        if self.log_dir is not None:
            path = self.log_dir / f"{live.session.id}.events.jsonl"
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(event.to_line() + "\n")
        for listener in self._listeners:
            listener(live.session.id, event)
        return event

    def events(self, session_id: str) -> list[SessionEvent]:
        return list(self._live(session_id).events)

    # -- lookups -----------------------------------------------------------

    def _live(self, session_id: str) -> _LiveSession:
        live = self._sessions.get(session_id)
        if live is None:
            raise SessionNotFound(f"no session {session_id!r}")
        return live

    def get(self, session_id: str) -> Session:
        return self._live(session_id).session

    def session_ids(self) -> list[str]:
        return list(self._sessions)

    # -- operations ----------------------------------------------------------

    def create_session(self, task_topic: str) -> Session:
        """Open a session at stage 1 and greet the student."""
        if not task_topic.strip():
            raise ValidationError("task topic must be non-empty")
        now = self.clock.now()
        session = Session(id=self.id_factory(), task_topic=task_topic, created_at=now)
        live = _LiveSession(session=session, last_activity_at=now)
        with self._registry_lock:
            self._sessions[session.id] = live
        with live.lock:
            self._append(
                live,
                EV_CREATED,
                {"session_id": session.id, "task_topic": task_topic, "stage": 1},
                now,
            )
            greeting = self._greeting(session, now)
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_MENTOR, greeting.text, greeting.generated_at)
            )
            self._append(live, EV_MENTOR_MSG, _mentor_payload(greeting), now)
        return session

    def _greeting(self, session: Session, now: datetime) -> MentorMessage:
        # The greeting is a stage-1 kickoff; it is not a controller round and
        # therefore records no decision.
        bundle = mnt.kickoff_bundle(
            self.kb,
            1,
            [],
            task_topic=session.task_topic,
            rationale="session opening: introduce stage 1 and the task",
        )
        return generate_reply(self.kb, bundle, self.mentor_backend, now=now)

    def post_student_message(self, session_id: str, text: str) -> tuple[MentorMessage, ControllerDecision]:
        """Run one full dialogue round for a student message.

        The student turn is always kept: backend trouble degrades the reply,
        it never drops the turn. A second message for the same session queues
        behind the first on the session lock.
        """
        if not text.strip():
            raise ValidationError("student message must be non-empty")
        live = self._live(session_id)
        with live.lock:
            session = live.session
            if session.status != STATUS_ACTIVE:
                raise SessionNotActive(f"session {session_id} is {session.status}")
            now = self.clock.now()
            session.transcript.append(DialogueTurn(ctl.AUTHOR_STUDENT, text, now))
            live.last_student_input_at = now
            live.nudged_since_student = False
            self._append(live, EV_STUDENT_MSG, {"text": text}, now)

            ctx = SessionContext(
                stage=session.stage,
                history=tuple(session.transcript),
                task_topic=session.task_topic,
                last_student_input_at=live.last_student_input_at,
            )
            decision = ctl.run_round(ctx, self.kb, self.controller_backend)
            session.stage = decision.stage_after
            if decision.completion_eligible:
                session.completion_eligible = True
            session.decisions.append(decision)
            self._append(live, EV_DECISION, decision_payload(decision), now)

            bundle = assemble_prompt(
                self.kb, decision, tuple(session.transcript), task_topic=session.task_topic
            )
            message = generate_reply(self.kb, bundle, self.mentor_backend, now=self.clock.now())
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_MENTOR, message.text, message.generated_at)
            )
            self._append(live, EV_MENTOR_MSG, _mentor_payload(message), message.generated_at)
            return message, decision

    def tick(self, session_id: str, now: datetime | None = None) -> MentorMessage | None:
        """Inactivity heartbeat: nudge a quiet student, at most once per interval."""
        live = self._live(session_id)
        with live.lock:
            session = live.session
            if session.status != STATUS_ACTIVE:
                return None
            now = now or self.clock.now()
            idle_from = live.last_student_input_at or live.last_activity_at
            if idle_from is None:
                return None
            if (now - idle_from).total_seconds() > ABANDON_AFTER_S:
                session.status = STATUS_ABANDONED
                return None
            if live.nudged_since_student:
                return None
            if not ctl.detect_quiet(idle_from, now):
                return None
            message = quiet_nudge(
                self.kb,
                session.stage,
                self.mentor_backend,
                now=now,
                history=tuple(session.transcript),
                task_topic=session.task_topic,
            )
            live.nudged_since_student = True
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_SYSTEM_NUDGE, message.text, now)
            )
            self._append(live, EV_NUDGE, _mentor_payload(message), now)
            return message

    def submit_report(self, session_id: str, report: LearningReport) -> Session:
        """Attach the final implementation plan report; completes an eligible session."""
        live = self._live(session_id)
        with live.lock:
            session = live.session
            if session.status != STATUS_ACTIVE:
                raise SessionNotActive(f"session {session_id} is {session.status}")
            if session.stage < STAGE_COUNT:
                raise WrongStage(
                    f"the report belongs to stage {STAGE_COUNT}; session is at stage {session.stage}"
                )
            missing = report.missing_fields()
            if missing:
                raise ValidationError([f"report field '{name}' is empty" for name in missing])
            now = self.clock.now()
            stamped = replace(report, submitted_at=now)
            session.report = stamped
            self._append(
                live,
                EV_REPORT_SUBMITTED,
                {
                    "problem_background": stamped.problem_background,
                    "solution_concept": stamped.solution_concept,
                    "implementation_plan": stamped.implementation_plan,
                    "anticipated_challenges": stamped.anticipated_challenges,
                },
                now,
            )
            if session.completion_eligible:
                session.status = STATUS_COMPLETED
                self._append(live, EV_COMPLETED, {}, now)
            return session


def _mentor_payload(message: MentorMessage) -> dict:
    return {
        "text": message.text,
        "stage": message.stage,
        "strategy": message.strategy,
        "degraded": message.degraded,
    }


# -- replay -----------------------------------------------------------------


def replay(events: Iterable[SessionEvent]) -> Session:
    """Rebuild a session from its event log alone.

    The log must start with a ``created`` event and carry gap-free sequence
    numbers from 1. Anything else is a corrupt log. Abandonment is an
    operational status, not an event, so a replayed session is ``active``
    unless the log says it completed.
    """
    session: Session | None = None
    expected_seq = 1
    for event in events:
        if event.seq != expected_seq:
            raise CorruptLog(f"CorruptLog at seq {event.seq}: expected seq {expected_seq}")
        expected_seq += 1
        if event.kind not in EVENT_KINDS:
            raise CorruptLog(f"CorruptLog at seq {event.seq}: unknown kind '{event.kind}'")
        if session is None:
            if event.kind != EV_CREATED:
                raise CorruptLog(f"CorruptLog at seq {event.seq}: log must start with 'created'")
            session = Session(
                id=event.payload["session_id"],
                task_topic=event.payload["task_topic"],
                created_at=event.at,
                stage=event.payload.get("stage", 1),
            )
            continue
        if event.kind == EV_CREATED:
            raise CorruptLog(f"CorruptLog at seq {event.seq}: duplicate 'created'")
        if event.kind == EV_STUDENT_MSG:
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_STUDENT, event.payload["text"], event.at)
            )
        elif event.kind == EV_DECISION:
            decision = decision_from_payload(event.payload)
            if decision.stage_before != session.stage:
                raise CorruptLog(
                    f"CorruptLog at seq {event.seq}: decision starts at stage "
                    f"{decision.stage_before} but session is at {session.stage}"
                )
            session.stage = decision.stage_after
            if decision.completion_eligible:
                session.completion_eligible = True
            session.decisions.append(decision)
        elif event.kind == EV_MENTOR_MSG:
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_MENTOR, event.payload["text"], event.at)
            )
        elif event.kind == EV_NUDGE:
            session.transcript.append(
                DialogueTurn(ctl.AUTHOR_SYSTEM_NUDGE, event.payload["text"], event.at)
            )
        elif event.kind == EV_REPORT_SUBMITTED:
            session.report = LearningReport(
                problem_background=event.payload["problem_background"],
                solution_concept=event.payload["solution_concept"],
                implementation_plan=event.payload["implementation_plan"],
                anticipated_challenges=event.payload["anticipated_challenges"],
                submitted_at=event.at,
            )
        elif event.kind == EV_COMPLETED:
            session.status = STATUS_COMPLETED
    if session is None:
        raise CorruptLog("CorruptLog at seq 1: empty log has no 'created' event")
    student_turns = sum(1 for t in session.transcript if t.author == ctl.AUTHOR_STUDENT)
    if len(session.decisions) != student_turns:
        raise CorruptLog(
            f"log ends with {student_turns} student turns but {len(session.decisions)} decisions"
        )
    return session


def read_event_log(path: str | Path) -> list[SessionEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(SessionEvent.from_line(line))
    return events


def write_event_log(path: str | Path, events: Iterable[SessionEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_line() + "\n")
