"""Voice/SMS channel abstraction.

A session-oriented interface over message providers: a fully in-memory
simulated channel for tests and local runs, and a webhook-backed channel
speaking the documented provider wire protocol. Voice is modeled as text
turns (the transcription); SMS bodies are segmented using the concatenated-
SMS limits real providers enforce (160 single / 153 per part).
"""

from __future__ import annotations

import itertools
import threading
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Callable, Optional

import httpx

from .domain import E164_RE, Entity, Modality, UtcInstant

SMS_SINGLE_LIMIT = 160
SMS_PART_LIMIT = 153


class InvalidContact(Exception):
    """Contact is not E.164-shaped."""


class SessionClosed(Exception):
    """Delivery attempted on a closed session."""


class UnknownSession(Exception):
    """Inbound payload references no known open session."""


class MalformedPayload(Exception):
    """Inbound payload violates the wire schema."""


class ProviderError(Exception):
    """The upstream provider rejected an operation."""

    def __init__(self, code: int, body: str = ""):
        self.code = code
        self.body = body
        super().__init__(f"provider error {code}: {body[:200]}")


class SessionState(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


class ChannelMessage(Entity):
    text: str
    at: UtcInstant


class ChannelSession(Entity):
    session_id: str
    contact: str
    modality: Modality
    state: SessionState = SessionState.OPEN
    outbox: list[ChannelMessage] = []
    inbox: list[ChannelMessage] = []


class DeliveryReceipt(Entity):
    session_id: str
    segments: int


def split_sms(text: str) -> list[str]:
    """Segment an SMS body. Bodies up to 160 chars ride in one segment;
    longer bodies split into parts of at most 153 chars, cut at the last
    whitespace inside the window (hard cut when there is none). Segments
    partition the text, so joining them in order reproduces it exactly.
    """
    if len(text) <= SMS_SINGLE_LIMIT:
        return [text]
    parts: list[str] = []
    rest = text
    while len(rest) > SMS_PART_LIMIT:
        window = rest[:SMS_PART_LIMIT]
        cut = SMS_PART_LIMIT
        for i in range(len(window) - 1, -1, -1):
            if window[i].isspace():
                cut = i + 1
                break
        parts.append(rest[:cut])
        rest = rest[cut:]
    parts.append(rest)
    return parts


class ChannelGateway:
    """Session bookkeeping shared by all channel implementations."""

    def __init__(self, clock: Callable[[], datetime]):
        self._clock = clock
        self._lock = threading.RLock()
        self._sessions: dict[str, ChannelSession] = {}
        self._ids = itertools.count(1)

    # -- provider hooks -------------------------------------------------
    def _provider_open(self, contact: str, modality: Modality) -> None:
        """Ask the provider to establish the session; raise ProviderError."""

    def _provider_send(self, session: ChannelSession, segments: list[str]) -> None:
        """Hand segments to the provider; raise ProviderError."""

    # -- session interface ----------------------------------------------
    def open_session(self, contact: str, modality: Modality) -> str:
        if not E164_RE.match(contact):
            raise InvalidContact(contact)
        with self._lock:
            self._provider_open(contact, modality)
            session_id = f"ch-{next(self._ids):06d}"
            self._sessions[session_id] = ChannelSession(
                session_id=session_id, contact=contact, modality=modality
            )
            return session_id

    def deliver(self, session_id: str, text: str) -> DeliveryReceipt:
        with self._lock:
            session = self._get(session_id)
            if session.state is SessionState.CLOSED:
                raise SessionClosed(session_id)
            segments = split_sms(text) if session.modality is Modality.SMS else [text]
            self._provider_send(session, segments)
            at = self._monotone(session.outbox)
            outbox = list(session.outbox)
            for i, segment in enumerate(segments):
                outbox.append(ChannelMessage(text=segment, at=at + timedelta(microseconds=i)))
            session.outbox = outbox
            return DeliveryReceipt(session_id=session_id, segments=len(segments))

    def record_inbound(self, session_id: str, text: str) -> None:
        with self._lock:
            session = self._get(session_id)
            session.inbox = [
                *session.inbox,
                ChannelMessage(text=text, at=self._monotone(session.inbox)),
            ]

    def close_session(self, session_id: str) -> None:
        with self._lock:
            self._get(session_id).state = SessionState.CLOSED

    def session(self, session_id: str) -> ChannelSession:
        with self._lock:
            return self._get(session_id)

    def latest_open_for(self, contact: str) -> Optional[ChannelSession]:
        with self._lock:
            candidates = [
                s
                for s in self._sessions.values()
                if s.contact == contact and s.state is SessionState.OPEN
            ]
            return candidates[-1] if candidates else None

    def _get(self, session_id: str) -> ChannelSession:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise UnknownSession(session_id) from None

    def _monotone(self, log: list[ChannelMessage]) -> datetime:
        now = self._clock()
        if log and now <= log[-1].at:
            return log[-1].at + timedelta(microseconds=1)
        return now


class SimulatedChannel(ChannelGateway):
    """In-memory channel; always succeeds unless a contact is marked
    no-answer, which surfaces as a 503 so scheduler retry paths can be
    exercised."""

    def __init__(self, clock: Callable[[], datetime]):
        super().__init__(clock)
        self.no_answer_contacts: set[str] = set()

    def _provider_open(self, contact: str, modality: Modality) -> None:
        if contact in self.no_answer_contacts:
            raise ProviderError(503, "no answer")


class WebhookChannel(ChannelGateway):
    """Outbound adapter for real providers: POSTs session opens and message
    segments to a provider base URL and maps 4xx/5xx to ProviderError."""

    def __init__(
        self,
        clock: Callable[[], datetime],
        provider_url: str,
        *,
        transport: httpx.BaseTransport | None = None,
        timeout_seconds: float = 10.0,
    ):
        super().__init__(clock)
        self._provider_url = provider_url.rstrip("/")
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport)

    def _post(self, path: str, payload: dict[str, Any]) -> None:
        try:
            response = self._client.post(f"{self._provider_url}{path}", json=payload)
        except httpx.HTTPError as exc:
            raise ProviderError(599, str(exc)) from exc
        if response.status_code >= 400:
            raise ProviderError(response.status_code, response.text)

    def _provider_open(self, contact: str, modality: Modality) -> None:
        self._post("/sessions", {"contact": contact, "modality": modality.value})

    def _provider_send(self, session: ChannelSession, segments: list[str]) -> None:
        for segment in segments:
            self._post(
                "/messages",
                {"session_id": session.session_id, "contact": session.contact, "text": segment},
            )


class InboundRouter:
    """Routes provider webhook payloads to the dialogue engine exactly once.

    Duplicate deliveries are dropped by provider message id; payloads that
    resolve to no session land in a dead-letter log for operators.
    """

    def __init__(
        self,
        gateway: ChannelGateway,
        turn_handler: Callable[[str, str], str],
    ):
        self._gateway = gateway
        self._turn_handler = turn_handler
        self._seen_message_ids: set[str] = set()
        self._lock = threading.Lock()
        self.dead_letters: list[dict[str, Any]] = []

    def receive_inbound(self, payload: dict[str, Any]) -> Optional[str]:
        """Returns the assistant reply, or None for an ignored duplicate."""
        if not isinstance(payload, dict):
            raise MalformedPayload("payload must be a JSON object")
        message_id = payload.get("provider_message_id")
        text = payload.get("text")
        if not message_id or not isinstance(message_id, str):
            raise MalformedPayload("provider_message_id is required")
        if not text or not isinstance(text, str):
            raise MalformedPayload("text must be a non-empty string")
        with self._lock:
            if message_id in self._seen_message_ids:
                return None
            self._seen_message_ids.add(message_id)
        session_id = payload.get("session_id")
        if not session_id:
            contact = payload.get("contact")
            session = self._gateway.latest_open_for(contact) if contact else None
            if session is None:
                self.dead_letters.append(payload)
                raise UnknownSession(str(contact))
            session_id = session.session_id
        try:
            self._gateway.record_inbound(session_id, text)
        except UnknownSession:
            self.dead_letters.append(payload)
            raise
        return self._turn_handler(session_id, text)
