"""Uniform interface over language-model capabilities.

Three interchangeable backends sit behind one contract: a deterministic
scripted backend (rule table, for tests and simulation), a replay backend
that serves recorded responses from a JSON-lines fixture, and a remote
backend speaking a plain chat-completion wire protocol so any hosted model
can plug in. Whatever the backend, validated paths (answer extraction,
escalation) never trust raw model output.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from abc import ABC, abstractmethod
from enum import Enum
from pathlib import Path
from typing import Optional

import httpx

from pydantic import field_validator

from .domain import Entity, FlagKind, InstrumentItem, canonical_json
from .instruments import parse_answer


class Role(str, Enum):
    SYSTEM = "system"
    ASSISTANT = "assistant"
    USER = "user"


class ChatMessage(Entity):
    role: Role
    content: str

    @field_validator("content")
    @classmethod
    def _non_empty(cls, v: str) -> str:
        if not v:
            raise ValueError("message content must be non-empty")
        return v


class BackendKind(str, Enum):
    SCRIPTED = "scripted"
    REPLAY = "replay"
    REMOTE = "remote"


class EscalationHit(Entity):
    kind: FlagKind
    reason: str


class BackendUnavailable(Exception):
    """The backend could not produce a reply after its configured retries."""


class FixtureExhausted(Exception):
    """A replay backend ran past the end of its recorded fixture."""


def request_hash(history: list[ChatMessage]) -> str:
    payload = canonical_json([m.model_dump(mode="json") for m in history])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _check_history(history: list[ChatMessage]) -> None:
    systems = [m for m in history if m.role is Role.SYSTEM]
    if len(systems) != 1 or history[0].role is not Role.SYSTEM:
        raise ValueError("history must start with exactly one system message")


class Backend(ABC):
    """Capability contract shared by all backends."""

    @abstractmethod
    def generate_reply(self, history: list[ChatMessage]) -> str:
        """Produce the next assistant utterance for a conversation."""

    def extract_item_answer(self, item: InstrumentItem, utterance: str) -> Optional[int]:
        """Recognize an ordinal answer; defaults to the deterministic parser."""
        return parse_answer(item, utterance)

    def classify_escalation(self, utterance: str) -> Optional[EscalationHit]:
        """Backend's own escalation signal; the keyword fallback is applied
        on top of this by the dialogue engine and can only add flags."""
        return None


# Rule table for the scripted backend. Replies are a pure function of
# (history length, last user text); the first matching row wins.
GREETING_WORDS = ("hello", "hi", "hey", "good morning", "good afternoon", "good evening")

SCRIPTED_OPENING = (
    "Hello! This is the automated check-in call from your care team. "
    "How are you feeling today?"
)
SCRIPTED_GREETING_ACK = "Thanks for picking up, it's good to hear from you."
SCRIPTED_QUESTION_ACK = (
    "That's a fair question; your care team can go into specifics, "
    "but let's keep going for now."
)
SCRIPTED_DEFAULT_ACK = "Thanks for sharing that."


class ScriptedBackend(Backend):
    """Deterministic rule-table backend; referentially transparent."""

    def generate_reply(self, history: list[ChatMessage]) -> str:
        _check_history(history)
        if len(history) == 1:
            return SCRIPTED_OPENING
        last_user = next((m.content for m in reversed(history) if m.role is Role.USER), "")
        lowered = last_user.lower()
        if any(re.search(r"(?<!\w)" + re.escape(w) + r"(?!\w)", lowered) for w in GREETING_WORDS):
            return SCRIPTED_GREETING_ACK
        if last_user.rstrip().endswith("?"):
            return SCRIPTED_QUESTION_ACK
        return SCRIPTED_DEFAULT_ACK


class ReplayBackend(Backend):
    """Serves recorded responses in order from a JSON-lines fixture.

    Each fixture line is {"request_hash": ..., "response": ...}; the hash
    is informational (written by recorders), replay is strictly sequential.
    """

    def __init__(self, fixture_path: str | Path):
        self._path = Path(fixture_path)
        if not self._path.exists():
            raise FileNotFoundError(f"replay fixture not found: {self._path}")
        self._responses: list[str] = []
        for line in self._path.read_text("utf-8").splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            self._responses.append(entry["response"])
        self._cursor = 0
        self._lock = threading.Lock()

    def generate_reply(self, history: list[ChatMessage]) -> str:
        _check_history(history)
        with self._lock:
            if self._cursor >= len(self._responses):
                raise FixtureExhausted(
                    f"fixture {self._path} has only {len(self._responses)} responses"
                )
            response = self._responses[self._cursor]
            self._cursor += 1
        return response

    def rewind(self) -> None:
        with self._lock:
            self._cursor = 0


class RemoteBackend(Backend):
    """JSON-over-HTTP chat-completion client: POST {base_url}/chat.

    Request body {"model", "messages", "temperature"}; response {"content"}.
    Answers and escalations derived from the model are re-validated before
    use; garbage output degrades to "no answer", never to a bad value.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        timeout_ms: int = 10_000,
        retries: int = 2,
        max_inflight: int = 4,
        temperature: float = 0.2,
        transport: httpx.BaseTransport | None = None,
    ):
        if not base_url:
            raise ValueError("remote backend requires a base_url")
        self._base_url = base_url.rstrip("/")
        self._model = model
        self._retries = retries
        self._temperature = temperature
        self._inflight = threading.Semaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout_ms / 1000.0, transport=transport)

    def _post_chat(self, messages: list[dict[str, str]]) -> str:
        body = {"model": self._model, "messages": messages, "temperature": self._temperature}
        last_error: Exception | None = None
        for _ in range(self._retries + 1):
            try:
                with self._inflight:
                    resp = self._client.post(f"{self._base_url}/chat", json=body)
                resp.raise_for_status()
                content = resp.json().get("content")
                if isinstance(content, str) and content:
                    return content
                last_error = ValueError("remote reply missing 'content'")
            except (httpx.HTTPError, ValueError, json.JSONDecodeError) as exc:
                last_error = exc
        raise BackendUnavailable(str(last_error))

    def generate_reply(self, history: list[ChatMessage]) -> str:
        _check_history(history)
        return self._post_chat([m.model_dump(mode="json") for m in history])

    def extract_item_answer(self, item: InstrumentItem, utterance: str) -> Optional[int]:
        prompt = (
            "A patient was asked to rate the following on a scale of "
            f"{item.scale_min} to {item.scale_max}: {item.prompt}\n"
            f"The patient said: {utterance!r}\n"
            "Reply with the single integer they chose, or the word none."
        )
        messages = [
            {"role": "system", "content": "You extract one ordinal answer from an utterance."},
            {"role": "user", "content": prompt},
        ]
        try:
            reply = self._post_chat(messages)
        except BackendUnavailable:
            return parse_answer(item, utterance)
        match = re.search(r"-?\d+", reply)
        if not match:
            return None
        value = int(match.group())
        # Out-of-range model output is rejected outright, never clamped.
        if item.scale_min <= value <= item.scale_max:
            return value
        return None

    def classify_escalation(self, utterance: str) -> Optional[EscalationHit]:
        messages = [
            {
                "role": "system",
                "content": (
                    "Classify a patient utterance. Reply with exactly one word: "
                    "emergency, callback, or none."
                ),
            },
            {"role": "user", "content": utterance},
        ]
        try:
            reply = self._post_chat(messages).strip().lower()
        except BackendUnavailable:
            return None
        if reply.startswith("emergency"):
            return EscalationHit(kind=FlagKind.EMERGENCY, reason=utterance)
        if reply.startswith("callback"):
            return EscalationHit(kind=FlagKind.CALLBACK_REQUEST, reason=utterance)
        return None

    def close(self) -> None:
        self._client.close()
