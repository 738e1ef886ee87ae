"""Orchestration layer binding store, scheduler, channels, and dialogue.

One service instance owns the live sessions: the scheduler starts due calls
through the channel gateway, inbound patient turns route to the dialogue
engine exactly once, and finished sessions are summarized and recorded.
Everything takes its time from one injectable clock.
"""

from __future__ import annotations

import threading
from datetime import datetime, timedelta
from typing import Any, Callable, Optional

from .backends import Backend
from .config import AppConfig, build_backend, build_registry, load_prompt_template
from .dialogue import (
    CallSession,
    DialogueEngine,
    DialoguePhase,
    EscalationKeywords,
    FlagRaised,
    SessionEnded,
)
from .domain import (
    CallSchedule,
    CallSummary,
    EscalationFlag,
    Patient,
    ScheduleStatus,
    Speaker,
    Transcript,
    utcnow,
    validate_patient,
)
from .gateway import ChannelGateway, InboundRouter, SimulatedChannel, UnknownSession
from .instruments import InstrumentRegistry
from .scheduler import Outcome, Scheduler, SchedulerConfig, TickReport
from .store import Store
from .summarizer import summarize_call


class SimulationIncomplete(Exception):
    """A simulated call script ran out before the conversation finished."""

    def __init__(self, schedule: CallSchedule):
        self.schedule = schedule
        super().__init__(
            f"script exhausted with call unfinished; schedule {schedule.id} "
            f"is now {schedule.status.value}"
        )


class SimClock:
    """Settable clock for tests and simulations."""

    def __init__(self, start: datetime):
        self._now = start
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> datetime:
        with self._lock:
            self._now += timedelta(seconds=seconds)
            return self._now

    def set(self, now: datetime) -> None:
        with self._lock:
            self._now = now


class OutreachService:
    """Facade the API, CLI, and tests drive."""

    def __init__(
        self,
        store: Store,
        registry: InstrumentRegistry,
        backend: Backend,
        *,
        scheduler_config: SchedulerConfig | None = None,
        keywords: EscalationKeywords | None = None,
        prompt_template: str | None = None,
        channel: ChannelGateway | None = None,
        clock: Callable[[], datetime] = utcnow,
        summary_backend: Backend | None = None,
    ):
        self.clock = clock
        self.store = store
        self.registry = registry
        self.backend = backend
        self.summary_backend = summary_backend
        self.channel = channel if channel is not None else SimulatedChannel(clock)
        engine_kwargs: dict[str, Any] = {"keywords": keywords}
        if prompt_template is not None:
            engine_kwargs["prompt_template"] = prompt_template
        self.engine = DialogueEngine(backend, **engine_kwargs)
        self._lock = threading.RLock()
        self.scheduler = Scheduler(
            store,
            registry,
            scheduler_config,
            on_start=self._start_call,
            on_timeout=self._timeout_call,
            lock=self._lock,
        )
        self.router = InboundRouter(self.channel, self.handle_patient_turn)
        self._sessions: dict[str, CallSession] = {}
        self._session_by_schedule: dict[str, str] = {}

    @classmethod
    def from_config(cls, config: AppConfig, *, store: Store | None = None) -> "OutreachService":
        if store is None:
            path = None if config.store_path == "memory" else config.store_path
            store = Store(path, recover=True)
        keywords = (
            EscalationKeywords.from_file(config.keywords_path)
            if config.keywords_path
            else None
        )
        return cls(
            store,
            build_registry(config),
            build_backend(config.backend),
            scheduler_config=config.scheduler,
            keywords=keywords,
            prompt_template=load_prompt_template(config),
        )

    def now(self) -> datetime:
        return self.clock()

    def close(self) -> None:
        """Release the store's writer lock; the service is done after this."""
        self.store.close()

    # -- patients ----------------------------------------------------------
    def create_patient(self, candidate: dict[str, Any]) -> Patient:
        patient = validate_patient(candidate)
        self.store.upsert_patient(patient, self.now())
        return patient

    def update_patient(self, patient_id: str, candidate: dict[str, Any]) -> Patient:
        if self.store.patient(patient_id) is None:
            raise KeyError(patient_id)
        candidate = {**candidate, "id": patient_id}
        patient = validate_patient(candidate)
        self.store.upsert_patient(patient, self.now())
        return patient

    def patients(self) -> list[Patient]:
        return sorted(self.store.views.patients.values(), key=lambda p: p.id)

    # -- scheduling ----------------------------------------------------------
    def schedule_call(
        self,
        patient_id: str,
        scheduled_at: datetime,
        instrument_ids: list[str],
        *,
        max_attempts: Optional[int] = None,
    ) -> CallSchedule:
        return self.scheduler.schedule_call(
            patient_id, scheduled_at, instrument_ids, self.now(), max_attempts=max_attempts
        )

    def cancel_call(self, schedule_id: str) -> CallSchedule:
        return self.scheduler.cancel(schedule_id, self.now())

    def tick(self, now: datetime | None = None) -> TickReport:
        return self.scheduler.tick(now if now is not None else self.now())

    # -- session lifecycle (scheduler callbacks) -----------------------------
    def _start_call(self, schedule: CallSchedule) -> None:
        patient = self.store.patient(schedule.patient_id)
        if patient is None:
            raise UnknownSession(schedule.patient_id)
        now = self.now()
        instruments = [self.registry.get(i) for i in schedule.instrument_ids]
        session_id = self.channel.open_session(patient.phone, patient.preferred_modality)
        session, opening = self.engine.start_conversation(
            schedule, patient, instruments, session_id=session_id, now=now
        )
        with self._lock:
            self._sessions[session_id] = session
            self._session_by_schedule[schedule.id] = session_id
        self.store.open_session(session_id, schedule.id, patient.preferred_modality, now)
        opening_turn = session.transcript.turns[0]
        self.store.add_turn(
            session_id, schedule.id, Speaker.ASSISTANT, opening_turn.text, opening_turn.at
        )
        self.channel.deliver(session_id, opening)

    def _timeout_call(self, schedule: CallSchedule) -> None:
        with self._lock:
            session_id = self._session_by_schedule.pop(schedule.id, None)
            session = self._sessions.pop(session_id, None) if session_id else None
        if session is None or session_id is None:
            return
        now = self.now()
        self.engine.abort_session(session, now=now)
        assert session.transcript.ended_at is not None
        self.store.close_transcript(session_id, session.transcript.ended_at)
        self.channel.close_session(session_id)

    # -- inbound turns ---------------------------------------------------------
    def handle_patient_turn(self, session_id: str, text: str) -> str:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is None:
                raise UnknownSession(session_id)
            now = self.now()
            reply, events = self.engine.handle_turn(session, text, now=now)
            patient_turn = session.transcript.turns[-2]
            assistant_turn = session.transcript.turns[-1]
            schedule_id = session.schedule.id
            self.store.add_turn(
                session_id, schedule_id, Speaker.PATIENT, patient_turn.text, patient_turn.at
            )
            self.store.add_turn(
                session_id, schedule_id, Speaker.ASSISTANT, assistant_turn.text, assistant_turn.at
            )
            for event in events:
                if isinstance(event, FlagRaised):
                    self.store.raise_flag(event.flag, now)
            self.channel.deliver(session_id, reply)
            if any(isinstance(event, SessionEnded) for event in events):
                self._finalize_session(session_id, session)
            return reply

    def _finalize_session(self, session_id: str, session: CallSession) -> None:
        now = self.now()
        summary = summarize_call(
            session.transcript,
            session.state,
            session.instruments,
            backend=self.summary_backend,
        )
        assert session.transcript.ended_at is not None
        self.store.close_transcript(session_id, session.transcript.ended_at)
        self.store.record_summary(summary, now)
        self.scheduler.record_outcome(session.schedule.id, Outcome.SUCCESS, now)
        self.channel.close_session(session_id)
        with self._lock:
            self._sessions.pop(session_id, None)
            self._session_by_schedule.pop(session.schedule.id, None)

    # -- desk-scale end-to-end driver -------------------------------------------
    def simulate_call(self, schedule_id: str, script: list[str]) -> CallSummary:
        """Drive one call with scripted patient utterances and return its
        summary. Scripts that end before the conversation can finish count
        as a failed call (timeout semantics) and schedule a retry."""
        schedule = self.store.schedule(schedule_id)
        if schedule is None:
            raise KeyError(schedule_id)
        if schedule.status is ScheduleStatus.SCHEDULED:
            schedule = self.scheduler.start_call(schedule_id, self.now())
        elif schedule.status is not ScheduleStatus.IN_PROGRESS:
            raise SimulationIncomplete(schedule)
        session_id = self._session_by_schedule.get(schedule_id)
        session = self._sessions.get(session_id) if session_id else None
        if session is None or session_id is None:
            raise UnknownSession(schedule_id)

        for index, utterance in enumerate(script):
            if session.state.phase is DialoguePhase.ENDED:
                break
            self.router.receive_inbound(
                {
                    "provider_message_id": f"sim-{schedule_id}-a{schedule.attempt}-{index}",
                    "session_id": session_id,
                    "text": utterance,
                }
            )

        if session.state.phase is DialoguePhase.ENDED:
            summary = self.store.summary(schedule_id)
            assert summary is not None
            return summary
        if session.state.phase is DialoguePhase.WRAPUP or (
            session.state.phase is DialoguePhase.FREE_CHAT and not session.state.queue
        ):
            # Everything asked and answered; close the line gracefully.
            now = self.now()
            closing, _ = self.engine.end_session(session, now=now)
            closing_turn = session.transcript.turns[-1]
            self.store.add_turn(
                session_id, schedule_id, Speaker.ASSISTANT, closing_turn.text, closing_turn.at
            )
            self.channel.deliver(session_id, closing)
            self._finalize_session(session_id, session)
            summary = self.store.summary(schedule_id)
            assert summary is not None
            return summary

        # Patient went silent mid-conversation: same handling as a timeout.
        self._timeout_call(schedule)
        updated = self.scheduler.record_outcome(schedule_id, Outcome.FAILURE, self.now())
        raise SimulationIncomplete(updated)

    # -- reads / misc -------------------------------------------------------------
    def transcript(self, schedule_id: str) -> Optional[Transcript]:
        return self.store.transcript_for_schedule(schedule_id)

    def summary(self, schedule_id: str) -> Optional[CallSummary]:
        return self.store.summary(schedule_id)

    def flags(self, acknowledged: bool | None = None) -> list[EscalationFlag]:
        return self.store.flags(acknowledged)

    def ack_flag(self, flag_id: str) -> EscalationFlag:
        self.store.ack_flag(flag_id, self.now())
        return self.store.views.flags[flag_id]

    def seed_demo(self) -> dict[str, Any]:
        """Create demo patients and one due call so the system is drivable."""
        now = self.now()
        alice = self.create_patient(
            {
                "id": "p-ada",
                "display_name": "Ada Brown",
                "phone": "+15550100001",
                "preferred_modality": "voice",
                "timezone": "America/New_York",
                "profile": {
                    "demographics": {
                        "age": 72,
                        "preferred_language": "English",
                        "health_literacy": "medium",
                    },
                    "clinical": [
                        {"kind": "diagnosis", "text": "Crohn's disease, dx 2015"},
                        {"kind": "medication", "text": "adalimumab 40mg biweekly"},
                    ],
                    "interaction": {
                        "tone_preference": "warm",
                        "topics_discussed": ["sleep", "garden"],
                    },
                },
            }
        )
        brian = self.create_patient(
            {
                "id": "p-brian",
                "display_name": "Brian Okafor",
                "phone": "+15550100002",
                "preferred_modality": "sms",
                "timezone": "America/Chicago",
                "profile": {
                    "demographics": {
                        "age": 58,
                        "preferred_language": "English",
                        "health_literacy": "high",
                    },
                    "clinical": [{"kind": "diagnosis", "text": "Crohn's disease, dx 2019"}],
                    "interaction": {"tone_preference": "direct", "topics_discussed": []},
                },
            }
        )
        schedule = self.schedule_call(alice.id, now, ["qol3"])
        later = self.schedule_call(brian.id, now + timedelta(hours=4), ["qol3"])
        return {
            "patients": [alice.id, brian.id],
            "schedule_id": schedule.id,
            "upcoming_schedule_id": later.id,
        }
