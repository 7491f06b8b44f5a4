"""Completion gateway: scripted determinism, live retries, call logging."""

from __future__ import annotations

import json
import threading

import httpx
import pytest

from mentigo.errors import BackendRefused, BackendTimeout, ScriptExhausted, ValidationError
from mentigo.gateway import (
    BackendConfig,
    CompletionRequest,
    CompletionResponse,
    LiveBackend,
    ScriptEntry,
    ScriptedBackend,
    complete,
    load_script_config,
)


def req(text: str = "hello", system: str = "sys") -> CompletionRequest:
    return CompletionRequest(system_text=system, messages=(("student", text),))


# -- request/response invariants ---------------------------------------------


def test_request_needs_content():
    with pytest.raises(ValidationError):
        CompletionRequest(system_text="", messages=())


def test_request_rejects_bad_values():
    with pytest.raises(ValidationError):
        CompletionRequest(system_text="x", max_tokens=0)
    with pytest.raises(ValidationError):
        CompletionRequest(system_text="x", temperature=-0.1)
    with pytest.raises(ValidationError):
        CompletionRequest(system_text="x", messages=(("teacher", "hi"),))


def test_complete_response_must_have_text():
    with pytest.raises(ValidationError):
        CompletionResponse(text="", finish_reason="complete")
    CompletionResponse(text="", finish_reason="truncated")  # allowed


# -- scripted backend -----------------------------------------------------------


def test_default_path_and_call_log():
    backend = ScriptedBackend(BackendConfig(kind="scripted", default_response="OK"))
    response = complete(backend, req("anything"))
    assert response.text == "OK"
    assert len(backend.call_log) == 1
    logged_request, logged_response = backend.call_log[0]
    assert logged_request == req("anything")  # byte-for-byte reproduction
    assert logged_response.text == "OK"


def test_first_matching_entry_fires_and_is_consumed():
    backend = ScriptedBackend(
        BackendConfig(
            kind="scripted",
            script=(
                ScriptEntry("stage decision", "first"),
                ScriptEntry("stage decision", "second"),
            ),
            default_response="default",
        )
    )
    assert backend.complete(req(system="a stage decision prompt")).text == "first"
    assert backend.complete(req(system="a stage decision prompt")).text == "second"
    assert backend.complete(req(system="a stage decision prompt")).text == "default"


def test_matcher_sees_messages_too():
    backend = ScriptedBackend(
        BackendConfig(
            kind="scripted",
            script=(ScriptEntry("magic-token", "hit"),),
            default_response="miss",
        )
    )
    assert backend.complete(req("contains magic-token here")).text == "hit"


def test_script_exhausted_without_default():
    backend = ScriptedBackend(
        BackendConfig(kind="scripted", script=(ScriptEntry("never-matches", "x"),))
    )
    with pytest.raises(ScriptExhausted):
        backend.complete(req("hello"))


def test_scripted_determinism():
    def run() -> list[str]:
        backend = ScriptedBackend(
            BackendConfig(
                kind="scripted",
                script=(ScriptEntry("a", "1"), ScriptEntry("b", "2"), ScriptEntry("a", "3")),
                default_response="d",
            )
        )
        inputs = ["a", "b", "a", "c", "a"]
        return [backend.complete(req(text)).text for text in inputs]

    assert run() == run() == ["1", "2", "3", "d", "d"]


def test_scripted_config_requires_content():
    with pytest.raises(ValidationError):
        BackendConfig(kind="scripted")


def test_gateway_never_mutates_requests():
    backend = ScriptedBackend(BackendConfig(kind="scripted", default_response="OK"))
    request = req("precious payload")
    backend.complete(request)
    assert request == req("precious payload")
    assert backend.call_log[0][0].rendered() == request.rendered()


def test_concurrent_consumption_is_serialized():
    entries = tuple(ScriptEntry("x", str(i)) for i in range(50))
    backend = ScriptedBackend(BackendConfig(kind="scripted", script=entries, default_response="d"))
    results: list[str] = []
    lock = threading.Lock()

    def worker():
        response = backend.complete(req("x"))
        with lock:
            results.append(response.text)

    threads = [threading.Thread(target=worker) for _ in range(50)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results, key=int) == [str(i) for i in range(50)]


def test_load_script_config(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(
        json.dumps({"entries": [{"match": "m", "response": "r"}], "default": "d"}),
        encoding="utf-8",
    )
    config = load_script_config(path)
    assert config.script == (ScriptEntry("m", "r"),)
    assert config.default_response == "d"


def test_complete_with_config_keeps_consumption_state():
    config = BackendConfig(
        kind="scripted",
        script=(ScriptEntry("x", "only-once"),),
        default_response="later",
    )
    assert complete(config, req("x")).text == "only-once"
    assert complete(config, req("x")).text == "later"


# -- live backend ------------------------------------------------------------------


def _live(transport: httpx.MockTransport, max_retries: int = 2) -> LiveBackend:
    config = BackendConfig(
        kind="live",
        endpoint_url="http://test/v1/chat/completions",
        model_name="test-model",
        max_retries=max_retries,
    )
    return LiveBackend(config, transport=transport, sleep=lambda _s: None)


def _ok_body(text: str = "hi there") -> dict:
    return {"choices": [{"message": {"content": text}, "finish_reason": "stop"}]}


def test_live_success_and_wire_shape(monkeypatch):
    monkeypatch.setenv("MENTIGO_API_KEY", "secret-key")
    seen: dict = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json=_ok_body())

    backend = _live(httpx.MockTransport(handler))
    response = backend.complete(req("hello", system="be brief"))
    assert response.text == "hi there"
    assert response.finish_reason == "complete"
    assert seen["auth"] == "Bearer secret-key"
    assert seen["body"]["model"] == "test-model"
    assert seen["body"]["messages"][0] == {"role": "system", "content": "be brief"}
    assert seen["body"]["messages"][1] == {"role": "user", "content": "hello"}
    assert len(backend.call_log) == 1


def test_live_persistent_503_times_out_after_all_attempts():
    attempts = {"n": 0}

    def handler(_request: httpx.Request) -> httpx.Response:
        attempts["n"] += 1
        return httpx.Response(503)

    backend = _live(httpx.MockTransport(handler), max_retries=2)
    with pytest.raises(BackendTimeout):
        backend.complete(req())
    assert attempts["n"] == 3  # retries + 1


def test_live_429_is_retried_then_succeeds():
    attempts = {"n": 0}

    def handler(_request: httpx.Request) -> httpx.Response:
        attempts["n"] += 1
        if attempts["n"] < 3:
            return httpx.Response(429)
        return httpx.Response(200, json=_ok_body("finally"))

    backend = _live(httpx.MockTransport(handler), max_retries=2)
    assert backend.complete(req()).text == "finally"
    assert attempts["n"] == 3


def test_live_other_4xx_refused_without_retry():
    attempts = {"n": 0}

    def handler(_request: httpx.Request) -> httpx.Response:
        attempts["n"] += 1
        return httpx.Response(401, text="bad key")

    backend = _live(httpx.MockTransport(handler), max_retries=5)
    with pytest.raises(BackendRefused):
        backend.complete(req())
    assert attempts["n"] == 1


def test_live_transport_errors_are_retried():
    attempts = {"n": 0}

    def handler(_request: httpx.Request) -> httpx.Response:
        attempts["n"] += 1
        if attempts["n"] == 1:
            raise httpx.ConnectError("nope")
        return httpx.Response(200, json=_ok_body())

    backend = _live(httpx.MockTransport(handler), max_retries=1)
    assert backend.complete(req()).text == "hi there"
    assert attempts["n"] == 2


def test_live_backoff_schedule_is_exponential():
    sleeps: list[float] = []

    def handler(_request: httpx.Request) -> httpx.Response:
        return httpx.Response(503)

    config = BackendConfig(
        kind="live",
        endpoint_url="http://test/v1/chat/completions",
        model_name="m",
        max_retries=3,
    )
    import random

    backend = LiveBackend(
        config,
        transport=httpx.MockTransport(handler),
        sleep=sleeps.append,
        rng=random.Random(0),
    )
    with pytest.raises(BackendTimeout):
        backend.complete(req())
    assert len(sleeps) == 3
    # jitter in [0.5x, 1.5x) of 0.5, 1.0, 2.0
    assert 0.25 <= sleeps[0] < 0.75
    assert 0.5 <= sleeps[1] < 1.5
    assert 1.0 <= sleeps[2] < 3.0
