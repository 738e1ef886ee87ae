"""Shared domain entities and lifecycle rules.

Pure value types with no I/O. Everything here serializes to the canonical
entity encoding: UTF-8 JSON objects with snake_case keys and RFC 3339 UTC
timestamps, used uniformly by the store, the API, and fixtures.
"""

from __future__ import annotations

import json
import re
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Annotated, Any, Optional
from zoneinfo import available_timezones

from pydantic import BaseModel, ConfigDict, PlainSerializer, field_validator, model_validator

E164_RE = re.compile(r"^\+[0-9]{8,15}$")

AGE_MIN = 0
AGE_MAX = 130

# Minimum separation enforced between transcript turn timestamps.
_TICK = timedelta(microseconds=1)

# Snapshot of recognized IANA zone names; zoneinfo ships the full database.
KNOWN_TIMEZONES = frozenset(available_timezones())


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def to_rfc3339(dt: datetime) -> str:
    """Render a timestamp as an RFC 3339 UTC string (trailing ``Z``)."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_rfc3339(text: str) -> datetime:
    return datetime.fromisoformat(text.replace("Z", "+00:00")).astimezone(timezone.utc)


# Timestamps serialize as RFC 3339 UTC strings with a trailing Z everywhere.
UtcInstant = Annotated[
    datetime, PlainSerializer(to_rfc3339, return_type=str, when_used="json")
]


class Entity(BaseModel):
    """Base for all domain values: strict fields, timestamps as UTC strings."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    def to_canonical_dict(self) -> dict[str, Any]:
        return json.loads(self.to_canonical_json())

    def to_canonical_json(self) -> str:
        """Deterministic canonical encoding: sorted keys, compact separators."""
        payload = self.model_dump(mode="json")
        return canonical_json(payload)


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class Modality(str, Enum):
    VOICE = "voice"
    SMS = "sms"


class HealthLiteracy(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class ClinicalKind(str, Enum):
    DIAGNOSIS = "diagnosis"
    MEDICATION = "medication"
    LAB_REPORT = "lab_report"


class ScheduleStatus(str, Enum):
    SCHEDULED = "scheduled"
    IN_PROGRESS = "in_progress"
    COMPLETED = "completed"
    FAILED = "failed"
    CANCELED = "canceled"


class Speaker(str, Enum):
    ASSISTANT = "assistant"
    PATIENT = "patient"


class FlagKind(str, Enum):
    EMERGENCY = "emergency"
    CALLBACK_REQUEST = "callback_request"


class ScoringRule(str, Enum):
    SUM = "sum"


class Demographics(Entity):
    age: Optional[int] = None
    preferred_language: str = "English"
    health_literacy: HealthLiteracy = HealthLiteracy.MEDIUM

    @field_validator("age")
    @classmethod
    def _age_in_range(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and not (AGE_MIN <= v <= AGE_MAX):
            raise ValueError(f"age must be within [{AGE_MIN}, {AGE_MAX}]")
        return v


class ClinicalNote(Entity):
    kind: ClinicalKind
    text: str


class InteractionProfile(Entity):
    tone_preference: str = "warm"
    topics_discussed: list[str] = []
    last_contact: Optional[UtcInstant] = None


class PatientProfile(Entity):
    demographics: Demographics = Demographics()
    clinical: list[ClinicalNote] = []
    interaction: InteractionProfile = InteractionProfile()


class Patient(Entity):
    id: str
    display_name: str
    phone: str
    preferred_modality: Modality
    timezone: str
    profile: PatientProfile = PatientProfile()

    @field_validator("phone")
    @classmethod
    def _phone_e164(cls, v: str) -> str:
        if not E164_RE.match(v):
            raise ValueError("phone must be E.164: leading '+' and 8-15 digits")
        return v

    @field_validator("timezone")
    @classmethod
    def _tz_known(cls, v: str) -> str:
        if v not in KNOWN_TIMEZONES:
            raise ValueError(f"unrecognized IANA timezone: {v!r}")
        return v


class ValidationIssue(Entity):
    code: str
    field: str
    message: str


class PatientValidationError(Exception):
    """Raised by validate_patient; carries one issue per violated field."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = issues
        super().__init__("; ".join(f"{i.code}({i.field})" for i in issues))


_ISSUE_CODES = (
    ("phone", "MalformedPhone"),
    ("timezone", "UnknownTimezone"),
    ("age", "AgeOutOfRange"),
)


def validate_patient(candidate: dict[str, Any] | Patient) -> Patient:
    """Validate a patient-shaped record, reporting every violated field.

    Returns the validated Patient unchanged when all invariants hold.
    Raises PatientValidationError listing MalformedPhone / UnknownTimezone /
    AgeOutOfRange (one entry per offending field) otherwise.
    """
    data = candidate.model_dump(mode="json") if isinstance(candidate, Patient) else candidate
    try:
        return Patient.model_validate(data)
    except Exception as exc:  # pydantic.ValidationError
        issues: list[ValidationIssue] = []
        for err in getattr(exc, "errors", lambda: [])():
            loc = ".".join(str(part) for part in err.get("loc", ()))
            leaf = str(err.get("loc", ("?",))[-1])
            code = next((c for f, c in _ISSUE_CODES if f == leaf), "InvalidField")
            issues.append(ValidationIssue(code=code, field=loc or leaf, message=err.get("msg", "")))
        if not issues:
            issues.append(ValidationIssue(code="InvalidField", field="?", message=str(exc)))
        raise PatientValidationError(issues) from None


class InstrumentItem(Entity):
    id: str
    prompt: str
    scale_min: int
    scale_max: int
    labels: dict[int, str] = {}

    @model_validator(mode="after")
    def _check_scale(self) -> "InstrumentItem":
        if self.scale_min >= self.scale_max:
            raise ValueError("scale_min must be strictly below scale_max")
        for key in self.labels:
            if not (self.scale_min <= key <= self.scale_max):
                raise ValueError(f"label key {key} outside [{self.scale_min}, {self.scale_max}]")
        return self


class Instrument(Entity):
    id: str
    title: str
    items: list[InstrumentItem]
    scoring: ScoringRule = ScoringRule.SUM

    @model_validator(mode="after")
    def _check_items(self) -> "Instrument":
        if not self.items:
            raise ValueError("instrument must define at least one item")
        ids = [item.id for item in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("item ids must be unique within an instrument")
        return self


# Legal status transitions. Retry (in_progress -> scheduled) additionally
# requires attempt < max_attempts; terminal failure requires attempt == max.
_EDGES = {
    (ScheduleStatus.SCHEDULED, ScheduleStatus.IN_PROGRESS),
    (ScheduleStatus.IN_PROGRESS, ScheduleStatus.COMPLETED),
    (ScheduleStatus.IN_PROGRESS, ScheduleStatus.SCHEDULED),
    (ScheduleStatus.IN_PROGRESS, ScheduleStatus.FAILED),
    (ScheduleStatus.SCHEDULED, ScheduleStatus.CANCELED),
}

TERMINAL_STATUSES = frozenset(
    {ScheduleStatus.COMPLETED, ScheduleStatus.FAILED, ScheduleStatus.CANCELED}
)


def can_transition(
    from_status: ScheduleStatus,
    to_status: ScheduleStatus,
    attempt: int,
    max_attempts: int,
) -> bool:
    """Whether a schedule may move from one status to another.

    Total over all status pairs. Retry and terminal-failure edges depend on
    where the attempt counter sits relative to max_attempts.
    """
    if (from_status, to_status) not in _EDGES:
        return False
    if from_status is ScheduleStatus.IN_PROGRESS and to_status is ScheduleStatus.SCHEDULED:
        return attempt < max_attempts
    if from_status is ScheduleStatus.IN_PROGRESS and to_status is ScheduleStatus.FAILED:
        return attempt == max_attempts
    return True


class CallSchedule(Entity):
    id: str
    patient_id: str
    scheduled_at: UtcInstant
    instrument_ids: list[str] = []
    status: ScheduleStatus = ScheduleStatus.SCHEDULED
    attempt: int = 1
    max_attempts: int = 3
    next_attempt_at: Optional[UtcInstant] = None

    @model_validator(mode="after")
    def _check_attempts(self) -> "CallSchedule":
        if self.attempt < 1 or self.max_attempts < 1:
            raise ValueError("attempt and max_attempts must be >= 1")
        if self.attempt > self.max_attempts:
            raise ValueError("attempt must never exceed max_attempts")
        return self

    def due_at(self) -> datetime:
        """Effective due instant: the retry time when one is pending."""
        return self.next_attempt_at or self.scheduled_at

    def is_terminal(self) -> bool:
        return self.status in TERMINAL_STATUSES


class Turn(Entity):
    speaker: Speaker
    text: str
    at: UtcInstant


class Transcript(Entity):
    session_id: str
    schedule_id: str
    modality: Modality
    turns: list[Turn] = []
    started_at: UtcInstant
    ended_at: Optional[UtcInstant] = None

    @model_validator(mode="after")
    def _check_order(self) -> "Transcript":
        if self.turns and self.turns[0].speaker is not Speaker.ASSISTANT:
            raise ValueError("first transcript turn must come from the assistant")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if cur.at <= prev.at:
                raise ValueError("turns must be strictly ordered by timestamp")
        if self.ended_at is not None and self.ended_at < self.started_at:
            raise ValueError("ended_at must not precede started_at")
        return self

    def add_turn(self, speaker: Speaker, text: str, at: datetime) -> int:
        """Append a turn, nudging the timestamp forward when the clock has
        not advanced past the previous turn. Returns the new turn's index."""
        if self.turns:
            floor = self.turns[-1].at
            if at <= floor:
                at = floor + _TICK
        turns = list(self.turns)
        turns.append(Turn(speaker=speaker, text=text, at=at))
        self.turns = turns
        return len(turns) - 1


class InstrumentResult(Entity):
    instrument_id: str
    score: Optional[int] = None
    completeness: float
    reasoning: str

    @model_validator(mode="after")
    def _score_iff_complete(self) -> "InstrumentResult":
        if not (0.0 <= self.completeness <= 1.0):
            raise ValueError("completeness must lie in [0, 1]")
        if (self.score is not None) != (self.completeness == 1.0):
            raise ValueError("score must be present exactly when completeness is 1")
        return self


class EmergencyStatus(Entity):
    flagged: bool = False
    reason: Optional[str] = None


class CallSummary(Entity):
    schedule_id: str
    duration_seconds: int
    instrument_results: list[InstrumentResult] = []
    emergency: EmergencyStatus = EmergencyStatus()
    callback_requested: bool = False
    overview: str

    @field_validator("duration_seconds")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("duration_seconds must be >= 0")
        return v


class EscalationFlag(Entity):
    id: str
    schedule_id: str
    kind: FlagKind
    turn_index: int
    reason: str
    acknowledged: bool = False
