"""HTTP and WebSocket API over the session store.

Thin layer: all behaviour lives in :mod:`mentigo.session`. The WebSocket
stream pushes each session event ``{seq, kind, at, payload}`` in order and
supports resuming from a client-supplied sequence number, which is what lets
the browser client reconnect without duplicating messages.
"""

from __future__ import annotations

import asyncio
import json
import threading
from datetime import datetime, timezone
from typing import Callable

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .clock import format_instant
from .errors import (
    SessionNotActive,
    SessionNotFound,
    ValidationError,
    WrongStage,
)
from .mentor import MentorMessage
from .session import LearningReport, SessionEvent, SessionStore, decision_payload

STREAM_POLL_S = 0.05
TICK_INTERVAL_S = 1.0


def start_ticker(store: SessionStore, interval_s: float = TICK_INTERVAL_S) -> Callable[[], None]:
    """Run the inactivity clock over every session in a daemon thread.

    Returns a stop function. The thread calls ``store.tick`` per session, which
    is what emits quiet nudges while the service is up."""
    stop = threading.Event()

    def loop() -> None:
        while not stop.wait(interval_s):
            for session_id in store.session_ids():
                try:
                    store.tick(session_id)
                except Exception:  # one broken session must not kill the clock
                    continue

    thread = threading.Thread(target=loop, name="mentigo-ticker", daemon=True)
    thread.start()
    return stop.set


class CreateSessionBody(BaseModel):
    topic: str


class MessageBody(BaseModel):
    text: str


class ReportBody(BaseModel):
    problem_background: str = ""
    solution_concept: str = ""
    implementation_plan: str = ""
    anticipated_challenges: str = ""


def _event_record(event: SessionEvent) -> dict:
    return {
        "seq": event.seq,
        "kind": event.kind,
        "at": format_instant(event.at),
        "payload": event.payload,
    }


def _mentor_record(message: MentorMessage) -> dict:
    return {
        "text": message.text,
        "stage": message.stage,
        "strategy": message.strategy,
        "degraded": message.degraded,
        "generated_at": format_instant(message.generated_at),
    }


def create_app(store: SessionStore) -> FastAPI:
    app = FastAPI(title="mentigo", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.store = store

    @app.exception_handler(SessionNotFound)
    async def _not_found(_, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(SessionNotActive)
    async def _not_active(_, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.exception_handler(WrongStage)
    async def _wrong_stage(_, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        try:
            session = store.create_session(body.topic)
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        return session.view()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return store.get(session_id).view()

    @app.post("/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        try:
            message, decision = store.post_student_message(session_id, body.text)
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        return {
            "mentor_message": _mentor_record(message),
            "decision": decision_payload(decision),
        }

    @app.post("/sessions/{session_id}/report")
    def post_report(session_id: str, body: ReportBody):
        report = LearningReport(
            problem_background=body.problem_background,
            solution_concept=body.solution_concept,
            implementation_plan=body.implementation_plan,
            anticipated_challenges=body.anticipated_challenges,
            submitted_at=datetime.now(timezone.utc),
        )
        # Per-field errors keyed by field name so clients can render them inline.
        missing = report.missing_fields()
        if missing:
            return JSONResponse(
                status_code=400,
                content={"errors": {name: "must not be empty" for name in missing}},
            )
        session = store.submit_report(session_id, report)
        return session.view()

    @app.get("/sessions/{session_id}/events")
    def get_events(session_id: str):
        return {"events": [_event_record(e) for e in store.events(session_id)]}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        await websocket.accept()
        try:
            store.get(session_id)
        except SessionNotFound:
            await websocket.close(code=4404)
            return
        try:
            from_seq = int(websocket.query_params.get("from_seq", "0"))
        except ValueError:
            from_seq = 0
        last_sent = from_seq
        try:
            while True:
                events = store.events(session_id)
                while last_sent < len(events):
                    event = events[last_sent]
                    await websocket.send_text(json.dumps(_event_record(event)))
                    last_sent = event.seq
                await asyncio.sleep(STREAM_POLL_S)
        except WebSocketDisconnect:
            return

    return app
