"""HTTP and WebSocket API surface."""

from __future__ import annotations

import json
from datetime import datetime, timezone

import pytest
from fastapi.testclient import TestClient

from mentigo.clock import ManualClock
from mentigo.gateway import BackendConfig, ScriptEntry, ScriptedBackend
from mentigo.kb import default_fixture_path, load_knowledge_base
from mentigo.service import create_app
from mentigo.session import SessionStore, seeded_id_factory

T0 = datetime(2026, 1, 1, tzinfo=timezone.utc)


@pytest.fixture()
def harness():
    kb = load_knowledge_base(default_fixture_path())
    clock = ManualClock(T0)
    backend = ScriptedBackend(
        BackendConfig(
            kind="scripted",
            script=(
                ScriptEntry("stage decision", '{"advance": false}'),
                ScriptEntry("state determination", '{"states": [2]}'),
                ScriptEntry("strategy selection", '{"focus": 2, "strategy": 8}'),
                ScriptEntry("stage decision", '{"advance": true}'),
            ),
            default_response="Welcome! What problem have you spotted so far?",
        )
    )
    store = SessionStore(kb, backend, backend, clock=clock, id_factory=seeded_id_factory(11))
    client = TestClient(create_app(store))
    return client, store, clock


def test_health(harness):
    client, _, _ = harness
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_create_and_get_session(harness):
    client, _, _ = harness
    created = client.post("/sessions", json={"topic": "Low-Carbon Campus"})
    assert created.status_code == 201
    view = created.json()
    assert view["stage"] == 1
    assert view["status"] == "active"
    assert len(view["transcript"]) == 1

    fetched = client.get(f"/sessions/{view['id']}")
    assert fetched.status_code == 200
    assert fetched.json() == view


def test_create_session_empty_topic_400(harness):
    client, _, _ = harness
    response = client.post("/sessions", json={"topic": "  "})
    assert response.status_code == 400


def test_message_round_trip(harness):
    client, _, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    response = client.post(f"/sessions/{session_id}/messages", json={"text": "I found a problem"})
    assert response.status_code == 200
    body = response.json()
    assert body["decision"]["active_states"] == [2]
    assert body["decision"]["chosen_strategy"] == 8
    assert body["mentor_message"]["text"]


def test_message_unknown_session_404(harness):
    client, _, _ = harness
    response = client.post("/sessions/ghost/messages", json={"text": "hi"})
    assert response.status_code == 404


def test_report_validation_errors_are_per_field(harness):
    client, _, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    response = client.post(
        f"/sessions/{session_id}/report",
        json={
            "problem_background": "bg",
            "solution_concept": "",
            "implementation_plan": "plan",
            "anticipated_challenges": "",
        },
    )
    assert response.status_code == 400
    errors = response.json()["errors"]
    assert set(errors) == {"solution_concept", "anticipated_challenges"}


def test_report_wrong_stage_409(harness):
    client, _, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    response = client.post(
        f"/sessions/{session_id}/report",
        json={
            "problem_background": "bg",
            "solution_concept": "c",
            "implementation_plan": "p",
            "anticipated_challenges": "ch",
        },
    )
    assert response.status_code == 409


def test_events_endpoint_matches_store(harness):
    client, store, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    client.post(f"/sessions/{session_id}/messages", json={"text": "hello"})
    listed = client.get(f"/sessions/{session_id}/events").json()["events"]
    assert [e["kind"] for e in listed] == [e.kind for e in store.events(session_id)]
    assert [e["seq"] for e in listed] == list(range(1, len(listed) + 1))


def test_websocket_streams_events_in_order(harness):
    client, store, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    with client.websocket_connect(f"/sessions/{session_id}/stream") as ws:
        first = json.loads(ws.receive_text())
        second = json.loads(ws.receive_text())
        assert (first["seq"], first["kind"]) == (1, "created")
        assert (second["seq"], second["kind"]) == (2, "mentor_msg")
        client.post(f"/sessions/{session_id}/messages", json={"text": "streaming test"})
        third = json.loads(ws.receive_text())
        assert (third["seq"], third["kind"]) == (3, "student_msg")
        fourth = json.loads(ws.receive_text())
        assert fourth["kind"] == "decision"


def test_websocket_resumes_from_seq(harness):
    client, _, _ = harness
    session_id = client.post("/sessions", json={"topic": "t"}).json()["id"]
    client.post(f"/sessions/{session_id}/messages", json={"text": "before drop"})
    # reconnect claiming we already saw seq 1..3
    with client.websocket_connect(f"/sessions/{session_id}/stream?from_seq=3") as ws:
        event = json.loads(ws.receive_text())
        assert event["seq"] == 4


def test_websocket_unknown_session_closes(harness):
    client, _, _ = harness
    with pytest.raises(Exception):
        with client.websocket_connect("/sessions/ghost/stream") as ws:
            ws.receive_text()


def test_background_ticker_emits_nudges():
    import time as _time

    from mentigo.service import start_ticker

    kb = load_knowledge_base(default_fixture_path())
    clock = ManualClock(T0)
    backend = ScriptedBackend(
        BackendConfig(kind="scripted", default_response="Anyone home? What's your first thought?")
    )
    store = SessionStore(kb, backend, backend, clock=clock, id_factory=seeded_id_factory(21))
    session = store.create_session("ticker test")
    store.post_student_message(session.id, "hello")
    stop = start_ticker(store, interval_s=0.01)
    try:
        clock.advance(61)
        deadline = _time.monotonic() + 2.0
        while _time.monotonic() < deadline:
            if any(e.kind == "nudge" for e in store.events(session.id)):
                break
            _time.sleep(0.01)
    finally:
        stop()
    kinds = [e.kind for e in store.events(session.id)]
    assert kinds.count("nudge") == 1
