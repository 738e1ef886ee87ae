"""Call-schedule lifecycle driver.

Runs against an injectable clock: starts due calls, applies a fixed retry
backoff, times out stuck sessions, and reports each tick's work. All status
movement is validated against the domain transition table; lifecycle logic
compares UTC instants only (patient timezones are display concerns).
"""

from __future__ import annotations

import itertools
import threading
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Optional

from pydantic import field_validator

from .domain import CallSchedule, Entity, ScheduleStatus, UtcInstant, can_transition
from .instruments import InstrumentRegistry
from .store import Store


class UnknownPatient(Exception):
    def __init__(self, patient_id: str):
        self.patient_id = patient_id
        super().__init__(f"unknown patient: {patient_id!r}")


class InvalidState(Exception):
    """The requested transition is not legal from the schedule's status."""


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class SchedulerConfig(Entity):
    retry_backoff_seconds: int = 3600
    call_timeout_seconds: int = 900
    max_attempts_default: int = 3

    @field_validator("retry_backoff_seconds", "call_timeout_seconds", "max_attempts_default")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("scheduler config values must be positive")
        return v


class RetryNotice(Entity):
    schedule_id: str
    next_attempt_at: UtcInstant


class TickReport(Entity):
    started: list[str] = []
    retried: list[RetryNotice] = []
    failed: list[str] = []
    timed_out: list[str] = []

    def is_empty(self) -> bool:
        return not (self.started or self.retried or self.failed or self.timed_out)


class Scheduler:
    """Drives schedules held in the store; callbacks hand sessions to the
    channel/dialogue layer. tick and record_outcome serialize on one lock."""

    def __init__(
        self,
        store: Store,
        registry: InstrumentRegistry,
        config: SchedulerConfig | None = None,
        *,
        on_start: Callable[[CallSchedule], None] | None = None,
        on_timeout: Callable[[CallSchedule], None] | None = None,
        lock: threading.RLock | None = None,
    ):
        self.store = store
        self.registry = registry
        self.config = config or SchedulerConfig()
        self.on_start = on_start or (lambda schedule: None)
        self.on_timeout = on_timeout or (lambda schedule: None)
        # Callers embedding the scheduler (the orchestration service) share
        # one reentrant lock so tick->on_start and turn->record_outcome can
        # never interleave into a lock-order inversion.
        self._lock = lock if lock is not None else threading.RLock()
        existing = [
            int(s.id.split("-")[-1])
            for s in store.schedules()
            if s.id.startswith("call-") and s.id.split("-")[-1].isdigit()
        ]
        self._ids = itertools.count(max(existing, default=0) + 1)

    def schedule_call(
        self,
        patient_id: str,
        scheduled_at: datetime,
        instrument_ids: list[str],
        now: datetime,
        *,
        max_attempts: Optional[int] = None,
    ) -> CallSchedule:
        """Create a schedule; past-due times clamp to now (call right away)."""
        with self._lock:
            if self.store.patient(patient_id) is None:
                raise UnknownPatient(patient_id)
            for instrument_id in instrument_ids:
                self.registry.get(instrument_id)  # raises UnknownInstrument
            schedule = CallSchedule(
                id=f"call-{next(self._ids):06d}",
                patient_id=patient_id,
                scheduled_at=max(scheduled_at, now),
                instrument_ids=list(instrument_ids),
                status=ScheduleStatus.SCHEDULED,
                attempt=1,
                max_attempts=(
                    self.config.max_attempts_default if max_attempts is None else max_attempts
                ),
            )
            self.store.create_schedule(schedule, now)
            return schedule

    def tick(self, now: datetime) -> TickReport:
        """One pass of the ticker: time out overdue sessions, then start due
        calls. Channel failures are folded into the report, never raised.
        Calling twice with unchanged state yields an empty second report."""
        with self._lock:
            started: list[str] = []
            retried: list[RetryNotice] = []
            failed: list[str] = []
            timed_out: list[str] = []

            timeout = timedelta(seconds=self.config.call_timeout_seconds)
            for schedule in self.store.schedules(status=ScheduleStatus.IN_PROGRESS):
                since = self.store.views.in_progress_since.get(schedule.id)
                if since is None or now - since <= timeout:
                    continue
                timed_out.append(schedule.id)
                try:
                    self.on_timeout(schedule)
                except Exception:
                    pass  # cleanup failures must not wedge the ticker
                updated = self._record_outcome_locked(schedule.id, Outcome.FAILURE, now)
                self._note_failure(updated, retried, failed)

            for schedule in self.store.schedules(status=ScheduleStatus.SCHEDULED):
                if schedule.due_at() > now:
                    continue
                updated = self._transition(
                    schedule, ScheduleStatus.IN_PROGRESS, now, clear_next_attempt=True
                )
                try:
                    self.on_start(updated)
                except Exception:
                    after = self._record_outcome_locked(updated.id, Outcome.FAILURE, now)
                    self._note_failure(after, retried, failed)
                else:
                    started.append(updated.id)

            return TickReport(
                started=started, retried=retried, failed=failed, timed_out=timed_out
            )

    def record_outcome(self, schedule_id: str, outcome: Outcome, now: datetime) -> CallSchedule:
        """Resolve an in-progress call: success completes it, failure retries
        with backoff until attempts run out, then fails terminally."""
        with self._lock:
            return self._record_outcome_locked(schedule_id, outcome, now)

    def start_call(self, schedule_id: str, now: datetime) -> CallSchedule:
        """Start one scheduled call immediately (the "call now" path).
        Start failures are recorded as a call failure, then re-raised."""
        with self._lock:
            schedule = self._require(schedule_id)
            if schedule.status is not ScheduleStatus.SCHEDULED:
                raise InvalidState(
                    f"schedule {schedule_id} is {schedule.status.value}, not startable"
                )
            updated = self._transition(
                schedule, ScheduleStatus.IN_PROGRESS, now, clear_next_attempt=True
            )
            try:
                self.on_start(updated)
            except Exception:
                self._record_outcome_locked(updated.id, Outcome.FAILURE, now)
                raise
            return updated

    def cancel(self, schedule_id: str, now: datetime) -> CallSchedule:
        with self._lock:
            schedule = self._require(schedule_id)
            return self._transition(schedule, ScheduleStatus.CANCELED, now)

    def upcoming(self, now: datetime, limit: int = 50) -> list[CallSchedule]:
        due = self.store.schedules(status=ScheduleStatus.SCHEDULED)
        return due[:limit]

    # ----------------------------------------------------------------------
    def _require(self, schedule_id: str) -> CallSchedule:
        schedule = self.store.schedule(schedule_id)
        if schedule is None:
            raise InvalidState(f"no such schedule: {schedule_id!r}")
        return schedule

    def _record_outcome_locked(
        self, schedule_id: str, outcome: Outcome, now: datetime
    ) -> CallSchedule:
        schedule = self._require(schedule_id)
        if schedule.status is not ScheduleStatus.IN_PROGRESS:
            raise InvalidState(
                f"schedule {schedule_id} is {schedule.status.value}, not in progress"
            )
        if outcome is Outcome.SUCCESS:
            return self._transition(
                schedule, ScheduleStatus.COMPLETED, now, clear_next_attempt=True
            )
        if schedule.attempt < schedule.max_attempts:
            backoff = timedelta(seconds=self.config.retry_backoff_seconds)
            return self._transition(
                schedule,
                ScheduleStatus.SCHEDULED,
                now,
                attempt=schedule.attempt + 1,
                next_attempt_at=now + backoff,
            )
        return self._transition(schedule, ScheduleStatus.FAILED, now, clear_next_attempt=True)

    def _transition(
        self,
        schedule: CallSchedule,
        to_status: ScheduleStatus,
        now: datetime,
        *,
        attempt: Optional[int] = None,
        next_attempt_at: Optional[datetime] = None,
        clear_next_attempt: bool = False,
    ) -> CallSchedule:
        new_attempt = attempt if attempt is not None else schedule.attempt
        if not can_transition(schedule.status, to_status, schedule.attempt, schedule.max_attempts):
            raise InvalidState(
                f"illegal transition {schedule.status.value} -> {to_status.value} "
                f"(attempt {schedule.attempt}/{schedule.max_attempts})"
            )
        updates: dict = {"status": to_status, "attempt": new_attempt}
        if next_attempt_at is not None:
            updates["next_attempt_at"] = next_attempt_at
        elif clear_next_attempt:
            updates["next_attempt_at"] = None
        updated = CallSchedule.model_validate({**schedule.model_dump(), **updates})
        self.store.change_schedule(updated, now)
        return updated

    @staticmethod
    def _note_failure(
        updated: CallSchedule, retried: list[RetryNotice], failed: list[str]
    ) -> None:
        if updated.status is ScheduleStatus.SCHEDULED:
            assert updated.next_attempt_at is not None
            retried.append(
                RetryNotice(schedule_id=updated.id, next_attempt_at=updated.next_attempt_at)
            )
        else:
            failed.append(updated.id)
