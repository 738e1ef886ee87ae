"""Backend contract tests: scripted rule table, replay fixtures, remote wire."""

from __future__ import annotations

import json
import threading

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outreach.backends import (
    BackendUnavailable,
    ChatMessage,
    FixtureExhausted,
    RemoteBackend,
    ReplayBackend,
    Role,
    SCRIPTED_GREETING_ACK,
    SCRIPTED_OPENING,
    ScriptedBackend,
    request_hash,
)
from outreach.domain import FlagKind

from conftest import make_item


def _history(*texts: str) -> list[ChatMessage]:
    msgs = [ChatMessage(role=Role.SYSTEM, content="sys")]
    for i, text in enumerate(texts):
        role = Role.ASSISTANT if i % 2 == 0 else Role.USER
        msgs.append(ChatMessage(role=role, content=text))
    return msgs


class TestScripted:
    def test_opening_on_bare_system(self):
        assert ScriptedBackend().generate_reply(_history()) == SCRIPTED_OPENING

    def test_greeting_ack_verbatim(self):
        history = _history("greeting line", "hello")
        assert ScriptedBackend().generate_reply(history) == SCRIPTED_GREETING_ACK

    def test_identical_inputs_identical_outputs(self):
        history = _history("greeting line", "how are you?")
        first = ScriptedBackend().generate_reply(history)
        second = ScriptedBackend().generate_reply(history)
        assert first == second
        assert first.encode() == second.encode()

    def test_requires_single_leading_system(self):
        with pytest.raises(ValueError):
            ScriptedBackend().generate_reply([ChatMessage(role=Role.USER, content="hi")])

    def test_extract_delegates_to_parser(self):
        assert ScriptedBackend().extract_item_answer(make_item(), "a solid 3") == 3

    def test_message_content_must_be_nonempty(self):
        with pytest.raises(ValueError):
            ChatMessage(role=Role.USER, content="")


class TestReplay:
    def _fixture(self, tmp_path, responses):
        path = tmp_path / "fixture.jsonl"
        lines = [json.dumps({"request_hash": f"h{i}", "response": r}) for i, r in enumerate(responses)]
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_replay_in_order_then_exhausted(self, tmp_path):
        path = self._fixture(tmp_path, ["first", "second"])
        backend = ReplayBackend(path)
        history = _history()
        assert backend.generate_reply(history) == "first"
        assert backend.generate_reply(history) == "second"
        with pytest.raises(FixtureExhausted):
            backend.generate_reply(history)

    def test_deterministic_across_instances(self, tmp_path):
        path = self._fixture(tmp_path, ["a", "b", "c"])
        runs = []
        for _ in range(2):
            backend = ReplayBackend(path)
            runs.append([backend.generate_reply(_history()) for _ in range(3)])
        assert runs[0] == runs[1]

    def test_missing_fixture(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ReplayBackend(tmp_path / "nope.jsonl")

    def test_concurrent_callers_share_cursor(self, tmp_path):
        path = self._fixture(tmp_path, [str(i) for i in range(40)])
        backend = ReplayBackend(path)
        seen: list[str] = []
        lock = threading.Lock()

        def worker():
            for _ in range(10):
                reply = backend.generate_reply(_history())
                with lock:
                    seen.append(reply)

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(seen, key=int) == [str(i) for i in range(40)]
        assert len(set(seen)) == 40  # no response served twice


def _remote(handler, **kwargs) -> RemoteBackend:
    transport = httpx.MockTransport(handler)
    return RemoteBackend("http://model.test", "m1", transport=transport, **kwargs)


class TestRemote:
    def test_wire_protocol_shape(self):
        captured = {}

        def handler(request: httpx.Request) -> httpx.Response:
            captured["url"] = str(request.url)
            captured["body"] = json.loads(request.content)
            return httpx.Response(200, json={"content": "ok"})

        backend = _remote(handler)
        reply = backend.generate_reply(_history("opener", "hi"))
        assert reply == "ok"
        assert captured["url"] == "http://model.test/chat"
        assert captured["body"]["model"] == "m1"
        assert captured["body"]["messages"][0] == {"role": "system", "content": "sys"}
        assert "temperature" in captured["body"]

    def test_unavailable_after_retries(self):
        calls = {"n": 0}

        def handler(request: httpx.Request) -> httpx.Response:
            calls["n"] += 1
            return httpx.Response(503, text="down")

        backend = _remote(handler, retries=2)
        with pytest.raises(BackendUnavailable):
            backend.generate_reply(_history())
        assert calls["n"] == 3  # initial + 2 retries

    def test_out_of_range_extraction_rejected(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"content": "definitely a 7"})

        backend = _remote(handler)
        assert backend.extract_item_answer(make_item(), "whatever") is None

    @settings(max_examples=60, deadline=None)
    @given(st.text(max_size=40))
    def test_adversarial_remote_never_bypasses_validation(self, garbage):
        """Whatever the model replies, answers are in range or absent."""

        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"content": garbage or "x"})

        backend = _remote(handler)
        item = make_item(scale_min=1, scale_max=5)
        got = backend.extract_item_answer(item, "some patient utterance")
        assert got is None or 1 <= got <= 5

    def test_classify_escalation_parses_keyword(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"content": "emergency"})

        hit = _remote(handler).classify_escalation("something dire")
        assert hit is not None and hit.kind is FlagKind.EMERGENCY

    def test_classify_escalation_garbage_is_none(self):
        def handler(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json={"content": "beep boop"})

        assert _remote(handler).classify_escalation("hello") is None


def test_request_hash_stable():
    h1 = request_hash(_history("a", "b"))
    h2 = request_hash(_history("a", "b"))
    assert h1 == h2 and len(h1) == 64
