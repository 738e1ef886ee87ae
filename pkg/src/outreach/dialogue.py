"""Per-session conversation state machine.

Opens the call from a profile-conditioned system prompt, interleaves casual
chat with instrument items, records validated answers, detects escalations,
and ends the session. Escalation checking runs before anything else on every
patient turn and is backed by a deterministic keyword list that no backend
can override: a backend may add flags, never remove them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Union

from .backends import Backend, ChatMessage, EscalationHit, Role
from .domain import (
    CallSchedule,
    Entity,
    EscalationFlag,
    FlagKind,
    Instrument,
    InstrumentItem,
    Patient,
    PatientProfile,
    ScheduleStatus,
    Speaker,
    Transcript,
    to_rfc3339,
)
from .instruments import AnswerSheet
from .resources import data_json, data_text

REASK_LIMIT = 2

PROFILE_MARKER_OPEN = "<<PROFILE>>"
PROFILE_MARKER_CLOSE = "<<END PROFILE>>"
TASK_MARKER_OPEN = "<<TASK>>"
TASK_MARKER_CLOSE = "<<END TASK>>"

SAFETY_MESSAGE = (
    "I'm concerned about what you just told me. If this is an emergency, please "
    "hang up and call 911 or your local emergency number right away. I am "
    "alerting your care team now so a clinician can follow up with you."
)
WRAPUP_PROMPT = (
    "That's everything I needed to ask today. Is there anything else you'd "
    "like me to pass along to your care team?"
)
CLOSING_MESSAGE = (
    "Thank you for talking with me today. Your care team will review our "
    "conversation. Take care!"
)
SKIP_ACK = "No worries, we can skip that one for now."
INSTRUMENT_BRIDGE = (
    "Before we move on to the next set of questions, how have things been "
    "going otherwise?"
)
WELLNESS_QUESTION = "How have you been feeling overall since we last spoke?"

# The shipped keyword file is the authoritative default; it is editable
# config, not code.
_DEFAULT_KEYWORDS = data_json("escalation_keywords.json")
DEFAULT_EMERGENCY_KEYWORDS: list[str] = _DEFAULT_KEYWORDS["emergency"]
DEFAULT_CALLBACK_KEYWORDS: list[str] = _DEFAULT_KEYWORDS["callback"]


class TemplateError(Exception):
    """A required template variable or marker is missing."""


class SessionAlreadyEnded(Exception):
    """handle_turn was called on a session whose dialogue already ended."""


class DialoguePhase(str, Enum):
    GREETING = "greeting"
    ITEM_PENDING = "item_pending"
    FREE_CHAT = "free_chat"
    WRAPUP = "wrapup"
    ENDED = "ended"


class DialogueState(Entity):
    session_id: str
    schedule_id: str
    phase: DialoguePhase = DialoguePhase.GREETING
    queue: list[tuple[str, str]] = []  # (instrument_id, item_id), unanswered
    reask_count: dict[str, int] = {}  # "<instrument_id>/<item_id>" -> re-asks
    sheets: dict[str, AnswerSheet] = {}
    flags: list[EscalationFlag] = []

    def emergency_flagged(self) -> bool:
        return any(f.kind is FlagKind.EMERGENCY for f in self.flags)

    def callback_requested(self) -> bool:
        return any(f.kind is FlagKind.CALLBACK_REQUEST for f in self.flags)


class AnswerRecorded(Entity):
    instrument_id: str
    item_id: str
    value: int
    turn_index: int


class ItemSkipped(Entity):
    instrument_id: str
    item_id: str


class FlagRaised(Entity):
    flag: EscalationFlag


class SessionEnded(Entity):
    reason: str  # "completed" | "emergency" | "aborted"


DialogueEvent = Union[AnswerRecorded, ItemSkipped, FlagRaised, SessionEnded]


class EscalationKeywords(Entity):
    """Deterministic escalation phrase lists; the safety floor under every
    backend. Shipped as editable config, matched case-insensitively."""

    emergency: list[str] = DEFAULT_EMERGENCY_KEYWORDS
    callback: list[str] = DEFAULT_CALLBACK_KEYWORDS

    @classmethod
    def from_file(cls, path: str | Path) -> "EscalationKeywords":
        return cls.model_validate(json.loads(Path(path).read_text("utf-8")))

    def classify(self, utterance: str) -> list[EscalationHit]:
        normalized = utterance.lower().replace("’", "'")
        hits: list[EscalationHit] = []
        for phrase in self.emergency:
            if phrase.lower() in normalized:
                hits.append(
                    EscalationHit(kind=FlagKind.EMERGENCY, reason=f"matched {phrase!r}")
                )
                break
        for phrase in self.callback:
            if phrase.lower() in normalized:
                hits.append(
                    EscalationHit(kind=FlagKind.CALLBACK_REQUEST, reason=f"matched {phrase!r}")
                )
                break
        return hits


def _render_profile_block(profile: PatientProfile) -> str:
    demo = profile.demographics
    age = "unknown" if demo.age is None else str(demo.age)
    lines = [
        f"age: {age}",
        f"preferred language: {demo.preferred_language}",
        f"health literacy: {demo.health_literacy.value}",
    ]
    for note in profile.clinical:
        lines.append(f"{note.kind.value}: {note.text}")
    inter = profile.interaction
    lines.append(f"tone preference: {inter.tone_preference}")
    if inter.topics_discussed:
        lines.append("topics discussed: " + "; ".join(inter.topics_discussed))
    if inter.last_contact is not None:
        lines.append(f"last contact: {to_rfc3339(inter.last_contact)}")
    return "\n".join(lines)


def _render_task_block(instruments: list[Instrument]) -> str:
    if not instruments:
        return (
            "No instruments are assigned. Conduct a short wellness check: ask "
            "open-ended follow-up questions about how the patient is feeling, "
            "their symptoms, and their quality of life."
        )
    lines = [
        "Administer the following instruments in order, one item at a time, "
        "phrasing each item as a natural conversational question:"
    ]
    for instrument in instruments:
        lines.append(f"Instrument {instrument.id} ({instrument.title}):")
        for i, item in enumerate(instrument.items, start=1):
            lines.append(
                f"  {i}. [{item.id}] {item.prompt} "
                f"(scale {item.scale_min}-{item.scale_max})"
            )
    return "\n".join(lines)


def assemble_system_prompt(
    profile: PatientProfile,
    schedule: CallSchedule,
    instruments: list[Instrument],
    template: str,
) -> str:
    """Deterministic render of the per-call system prompt.

    The template must consume the profile and task blocks; both end up
    delimited by the fixed markers so downstream tooling can locate them.
    """
    try:
        rendered = template.format(
            profile_block=_render_profile_block(profile),
            task_block=_render_task_block(instruments),
            schedule_id=schedule.id,
        )
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"missing template variable: {exc}") from None
    for marker in (
        PROFILE_MARKER_OPEN,
        PROFILE_MARKER_CLOSE,
        TASK_MARKER_OPEN,
        TASK_MARKER_CLOSE,
    ):
        if marker not in rendered:
            raise TemplateError(f"template is missing required marker {marker}")
    return rendered


# Versioned alongside the repo; see data/prompts/system_prompt.txt.
DEFAULT_PROMPT_TEMPLATE = data_text("prompts", "system_prompt.txt")


@dataclass
class CallSession:
    """One live conversation: dialogue state plus its transcript and the
    chat history fed to the backend. Owned by a single session worker."""

    schedule: CallSchedule
    patient: Patient
    instruments: list[Instrument]
    state: DialogueState
    transcript: Transcript
    history: list[ChatMessage] = field(default_factory=list)

    def handle_turn_count(self) -> int:
        return sum(1 for t in self.transcript.turns if t.speaker is Speaker.PATIENT)


class DialogueEngine:
    """Drives CallSessions against a backend, one patient turn at a time."""

    def __init__(
        self,
        backend: Backend,
        *,
        keywords: EscalationKeywords | None = None,
        prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
    ):
        self.backend = backend
        self.keywords = keywords or EscalationKeywords()
        self.prompt_template = prompt_template

    def start_conversation(
        self,
        schedule: CallSchedule,
        patient: Patient,
        instruments: list[Instrument],
        *,
        session_id: str,
        now: datetime,
    ) -> tuple[CallSession, str]:
        """Open a session: full item queue, system prompt, opening utterance."""
        if schedule.status is not ScheduleStatus.IN_PROGRESS:
            raise ValueError(f"schedule {schedule.id} is not in progress")
        system_prompt = assemble_system_prompt(
            patient.profile, schedule, instruments, self.prompt_template
        )
        history = [ChatMessage(role=Role.SYSTEM, content=system_prompt)]
        opening = self.backend.generate_reply(history)
        history.append(ChatMessage(role=Role.ASSISTANT, content=opening))
        state = DialogueState(
            session_id=session_id,
            schedule_id=schedule.id,
            phase=DialoguePhase.GREETING,
            queue=[(ins.id, item.id) for ins in instruments for item in ins.items],
            sheets={ins.id: AnswerSheet(instrument_id=ins.id) for ins in instruments},
        )
        transcript = Transcript(
            session_id=session_id,
            schedule_id=schedule.id,
            modality=patient.preferred_modality,
            started_at=now,
        )
        transcript.add_turn(Speaker.ASSISTANT, opening, now)
        session = CallSession(
            schedule=schedule,
            patient=patient,
            instruments=instruments,
            state=state,
            transcript=transcript,
            history=history,
        )
        return session, opening

    def _item(self, session: CallSession, instrument_id: str, item_id: str) -> InstrumentItem:
        for instrument in session.instruments:
            if instrument.id == instrument_id:
                for item in instrument.items:
                    if item.id == item_id:
                        return item
        raise KeyError(f"{instrument_id}/{item_id} not in session instruments")

    @staticmethod
    def _ask(item: InstrumentItem) -> str:
        return f"On a scale of {item.scale_min} to {item.scale_max}, {item.prompt}"

    @staticmethod
    def _reask(item: InstrumentItem) -> str:
        return (
            f"Sorry, I didn't quite catch that. Could you give me a number from "
            f"{item.scale_min} to {item.scale_max}? {item.prompt}"
        )

    def _raise_flags(
        self, session: CallSession, utterance: str, turn_index: int
    ) -> tuple[list[DialogueEvent], bool]:
        """Union of keyword fallback and backend classification, one flag per
        kind. The fallback can add a flag; nothing can suppress it."""
        hits = list(self.keywords.classify(utterance))
        try:
            backend_hit = self.backend.classify_escalation(utterance)
        except Exception:
            backend_hit = None  # a misbehaving backend must not mask the fallback
        if backend_hit is not None and backend_hit.kind not in {h.kind for h in hits}:
            hits.append(backend_hit)
        events: list[DialogueEvent] = []
        emergency = False
        for hit in sorted(hits, key=lambda h: h.kind is not FlagKind.EMERGENCY):
            flag = EscalationFlag(
                id=(
                    f"{session.schedule.id}-a{session.schedule.attempt}"
                    f"-t{turn_index}-{hit.kind.value}"
                ),
                schedule_id=session.schedule.id,
                kind=hit.kind,
                turn_index=turn_index,
                reason=hit.reason,
            )
            session.state.flags = [*session.state.flags, flag]
            events.append(FlagRaised(flag=flag))
            if hit.kind is FlagKind.EMERGENCY:
                emergency = True
        return events, emergency

    def _advance_queue(
        self, session: CallSession, prefix: str, prev_instrument: str | None = None
    ) -> str:
        """Pick the next utterance after an item was resolved: next item ask,
        a free-chat bridge at instrument boundaries, or the wrap-up prompt."""
        state = session.state
        if not state.queue:
            state.phase = DialoguePhase.WRAPUP
            return f"{prefix} {WRAPUP_PROMPT}".strip()
        next_instrument, next_item = state.queue[0]
        if prev_instrument is not None and next_instrument != prev_instrument:
            state.phase = DialoguePhase.FREE_CHAT
            return f"{prefix} {INSTRUMENT_BRIDGE}".strip()
        state.phase = DialoguePhase.ITEM_PENDING
        return f"{prefix} {self._ask(self._item(session, next_instrument, next_item))}".strip()

    def handle_turn(
        self, session: CallSession, patient_utterance: str, *, now: datetime
    ) -> tuple[str, list[DialogueEvent]]:
        """Process one patient turn; returns the assistant reply and every
        state-changing fact as events."""
        state = session.state
        if state.phase is DialoguePhase.ENDED:
            raise SessionAlreadyEnded(state.session_id)
        turn_index = session.transcript.add_turn(Speaker.PATIENT, patient_utterance, now)
        session.history.append(ChatMessage(role=Role.USER, content=patient_utterance))

        events, emergency = self._raise_flags(session, patient_utterance, turn_index)
        if emergency:
            if state.phase is DialoguePhase.WRAPUP:
                # Already winding down: deliver the safety message and end,
                # so repeated emergencies can never hold a session open.
                assistant = self._close(session, events, SAFETY_MESSAGE)
            else:
                state.phase = DialoguePhase.WRAPUP
                assistant = SAFETY_MESSAGE
        elif state.phase is DialoguePhase.ITEM_PENDING:
            assistant = self._handle_item_turn(session, patient_utterance, turn_index, events)
        elif state.phase in (DialoguePhase.GREETING, DialoguePhase.FREE_CHAT):
            reply = self.backend.generate_reply(session.history)
            if state.queue:
                assistant = self._advance_queue(session, reply)
            elif state.phase is DialoguePhase.GREETING:
                state.phase = DialoguePhase.FREE_CHAT
                assistant = f"{reply} {WELLNESS_QUESTION}"
            else:
                assistant = self._close(session, events, f"{reply} {CLOSING_MESSAGE}")
        else:  # WRAPUP
            assistant = self._close(session, events, CLOSING_MESSAGE)

        session.transcript.add_turn(Speaker.ASSISTANT, assistant, now)
        session.history.append(ChatMessage(role=Role.ASSISTANT, content=assistant))
        if state.phase is DialoguePhase.ENDED and session.transcript.ended_at is None:
            session.transcript.ended_at = max(now, session.transcript.turns[-1].at)
        return assistant, events

    def _handle_item_turn(
        self,
        session: CallSession,
        utterance: str,
        turn_index: int,
        events: list[DialogueEvent],
    ) -> str:
        state = session.state
        instrument_id, item_id = state.queue[0]
        item = self._item(session, instrument_id, item_id)
        value = self.backend.extract_item_answer(item, utterance)
        if value is not None and item.scale_min <= value <= item.scale_max:
            state.sheets[instrument_id].record(item, value, turn_index)
            state.queue = state.queue[1:]
            events.append(
                AnswerRecorded(
                    instrument_id=instrument_id,
                    item_id=item_id,
                    value=value,
                    turn_index=turn_index,
                )
            )
            return self._advance_queue(session, "Got it.", prev_instrument=instrument_id)
        key = f"{instrument_id}/{item_id}"
        count = state.reask_count.get(key, 0) + 1
        state.reask_count = {**state.reask_count, key: count}
        if count > REASK_LIMIT:
            state.queue = state.queue[1:]
            events.append(ItemSkipped(instrument_id=instrument_id, item_id=item_id))
            return self._advance_queue(session, SKIP_ACK, prev_instrument=instrument_id)
        return self._reask(item)

    def _close(
        self, session: CallSession, events: list[DialogueEvent], message: str
    ) -> str:
        state = session.state
        state.phase = DialoguePhase.ENDED
        reason = "emergency" if state.emergency_flagged() else "completed"
        events.append(SessionEnded(reason=reason))
        return message

    def end_session(
        self, session: CallSession, *, now: datetime
    ) -> tuple[str, list[DialogueEvent]]:
        """Administrative close (no patient turn): emit the closing utterance,
        mark the dialogue ended, and stamp the transcript's end time."""
        state = session.state
        if state.phase is DialoguePhase.ENDED:
            raise SessionAlreadyEnded(state.session_id)
        events: list[DialogueEvent] = []
        closing = self._close(session, events, CLOSING_MESSAGE)
        session.transcript.add_turn(Speaker.ASSISTANT, closing, now)
        session.history.append(ChatMessage(role=Role.ASSISTANT, content=closing))
        session.transcript.ended_at = max(now, session.transcript.turns[-1].at)
        return closing, events

    def abort_session(self, session: CallSession, *, now: datetime) -> None:
        """Close a session that ended without a conversation (e.g. timeout)."""
        session.state.phase = DialoguePhase.ENDED
        last_at = session.transcript.turns[-1].at if session.transcript.turns else now
        session.transcript.ended_at = max(now, last_at)
