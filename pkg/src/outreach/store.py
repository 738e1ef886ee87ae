"""Append-only event log with in-memory materialized views.

Every write becomes one canonical-JSON line, fsync'd before the append is
acknowledged; all entity views (patients, schedules, transcripts, summaries,
flags) are deterministic folds over the log, so replaying the full log
reconstructs byte-identical state. This keeps chat history tamper-evident
and makes crash recovery a plain re-read.
"""

from __future__ import annotations

import errno
import fcntl
import os
import threading
from datetime import datetime
from pathlib import Path
from typing import Any, Optional

from .domain import (
    CallSchedule,
    CallSummary,
    Entity,
    EscalationFlag,
    Modality,
    Patient,
    ScheduleStatus,
    Speaker,
    Transcript,
    UtcInstant,
    canonical_json,
    parse_rfc3339,
    to_rfc3339,
)


class StorageFull(Exception):
    """The underlying volume rejected an append."""


class StoreLocked(Exception):
    """Another process holds the event log; it is strictly single-writer."""


class CorruptLog(Exception):
    """The log ends in (or contains) an unreadable record.

    Carries the last valid sequence number and the intact prefix so callers
    can surface precise diagnostics or recover to the valid prefix.
    """

    def __init__(self, last_valid_seq: int, valid_records: list["EventRecord"], detail: str):
        self.last_valid_seq = last_valid_seq
        self.valid_records = valid_records
        super().__init__(f"corrupt log after seq {last_valid_seq}: {detail}")


class EventRecord(Entity):
    seq: int
    at: UtcInstant
    kind: str
    payload: Any


class EventLog:
    """Durable JSON-lines event log; in-memory when no path is given."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path is not None else None
        self._memory: list[bytes] = []
        self._fd: Optional[int] = None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._fd = os.open(self._path, os.O_APPEND | os.O_CREAT | os.O_WRONLY, 0o644)
            try:
                fcntl.flock(self._fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except OSError:
                os.close(self._fd)
                self._fd = None
                raise StoreLocked(
                    f"{self._path} is held by another process; stop it or point "
                    "this command at a different store"
                ) from None

    def append_line(self, line: bytes) -> None:
        if self._fd is not None:
            try:
                os.write(self._fd, line)
                os.fsync(self._fd)
            except OSError as exc:
                if exc.errno == errno.ENOSPC:
                    raise StorageFull(str(exc)) from exc
                raise
        else:
            self._memory.append(line)

    def read_raw(self) -> bytes:
        if self._path is not None:
            return self._path.read_bytes() if self._path.exists() else b""
        return b"".join(self._memory)

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)  # releases the writer lock
            self._fd = None

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


def decode_log(raw: bytes) -> list[EventRecord]:
    """Parse a raw log, raising CorruptLog at the first unreadable record."""
    import json

    records: list[EventRecord] = []
    last_seq = 0
    pos = 0
    while pos < len(raw):
        nl = raw.find(b"\n", pos)
        if nl == -1:
            raise CorruptLog(last_seq, records, "truncated record without terminator")
        line = raw[pos:nl]
        pos = nl + 1
        try:
            data = json.loads(line.decode("utf-8"))
            record = EventRecord(
                seq=data["seq"],
                at=parse_rfc3339(data["at"]),
                kind=data["kind"],
                payload=data["payload"],
            )
        except Exception as exc:
            raise CorruptLog(last_seq, records, f"unreadable record: {exc}") from None
        if record.seq != last_seq + 1:
            raise CorruptLog(last_seq, records, f"sequence gap: got {record.seq}")
        records.append(record)
        last_seq = record.seq
    return records


class Views:
    """Materialized entity views; a pure fold over event records."""

    def __init__(self) -> None:
        self.patients: dict[str, Patient] = {}
        self.schedules: dict[str, CallSchedule] = {}
        self.transcripts: dict[str, Transcript] = {}  # by session_id
        self.sessions_by_schedule: dict[str, list[str]] = {}
        self.summaries: dict[str, CallSummary] = {}  # by schedule_id
        self.flags: dict[str, EscalationFlag] = {}
        self.in_progress_since: dict[str, datetime] = {}

    def apply(self, record: EventRecord) -> None:
        kind, payload = record.kind, record.payload
        if kind == "patient_upserted":
            patient = Patient.model_validate(payload)
            self.patients[patient.id] = patient
        elif kind == "schedule_created":
            schedule = CallSchedule.model_validate(payload)
            self.schedules[schedule.id] = schedule
        elif kind == "schedule_status_changed":
            schedule = CallSchedule.model_validate(payload)
            self.schedules[schedule.id] = schedule
            if schedule.status is ScheduleStatus.IN_PROGRESS:
                self.in_progress_since[schedule.id] = record.at
            else:
                self.in_progress_since.pop(schedule.id, None)
        elif kind == "session_opened":
            transcript = Transcript(
                session_id=payload["session_id"],
                schedule_id=payload["schedule_id"],
                modality=Modality(payload["modality"]),
                started_at=parse_rfc3339(payload["started_at"]),
            )
            self.transcripts[transcript.session_id] = transcript
            self.sessions_by_schedule.setdefault(transcript.schedule_id, []).append(
                transcript.session_id
            )
        elif kind == "turn_added":
            transcript = self.transcripts[payload["session_id"]]
            transcript.add_turn(
                Speaker(payload["speaker"]), payload["text"], parse_rfc3339(payload["at"])
            )
        elif kind == "transcript_closed":
            transcript = self.transcripts[payload["session_id"]]
            transcript.ended_at = parse_rfc3339(payload["ended_at"])
        elif kind == "summary_recorded":
            summary = CallSummary.model_validate(payload)
            self.summaries[summary.schedule_id] = summary
        elif kind == "flag_raised":
            flag = EscalationFlag.model_validate(payload)
            self.flags[flag.id] = flag
        elif kind == "flag_acknowledged":
            flag = self.flags[payload["flag_id"]]
            self.flags[flag.id] = flag.model_copy(update={"acknowledged": True})
        # Unknown kinds are preserved in the log but fold to nothing, which
        # keeps replay forward-compatible.

    def snapshot(self) -> dict[str, Any]:
        """Canonical dict of every view, for field-for-field comparison."""
        return {
            "patients": {k: v.to_canonical_dict() for k, v in self.patients.items()},
            "schedules": {k: v.to_canonical_dict() for k, v in self.schedules.items()},
            "transcripts": {k: v.to_canonical_dict() for k, v in self.transcripts.items()},
            "summaries": {k: v.to_canonical_dict() for k, v in self.summaries.items()},
            "flags": {k: v.to_canonical_dict() for k, v in self.flags.items()},
        }


class Store:
    """Facade over the log and its views; all writes funnel through append."""

    def __init__(self, path: str | Path | None = None, *, recover: bool = False):
        self._lock = threading.RLock()
        self._log = EventLog(path)
        self.views = Views()
        self._last_seq = 0
        raw = self._log.read_raw()
        if raw:
            try:
                records = decode_log(raw)
            except CorruptLog as exc:
                if not recover:
                    raise
                records = exc.valid_records
                self._truncate_to(records, path)
            for record in records:
                self.views.apply(record)
            self._last_seq = records[-1].seq if records else 0

    def _truncate_to(self, records: list[EventRecord], path: str | Path | None) -> None:
        if path is None:
            return
        self._log.close()
        keep = b"".join(_encode(r) for r in records)
        Path(path).write_bytes(keep)
        self._log = EventLog(path)

    def append(self, kind: str, payload: Any, at: datetime) -> int:
        """Atomically append one event; durable before the seq is returned."""
        with self._lock:
            record = EventRecord(seq=self._last_seq + 1, at=at, kind=kind, payload=payload)
            self._log.append_line(_encode(record))
            self.views.apply(record)
            self._last_seq = record.seq
            return record.seq

    @property
    def last_seq(self) -> int:
        return self._last_seq

    def close(self) -> None:
        self._log.close()

    # -- write helpers ----------------------------------------------------
    def upsert_patient(self, patient: Patient, at: datetime) -> int:
        return self.append("patient_upserted", patient.to_canonical_dict(), at)

    def create_schedule(self, schedule: CallSchedule, at: datetime) -> int:
        return self.append("schedule_created", schedule.to_canonical_dict(), at)

    def change_schedule(self, schedule: CallSchedule, at: datetime) -> int:
        return self.append("schedule_status_changed", schedule.to_canonical_dict(), at)

    def open_session(
        self, session_id: str, schedule_id: str, modality: Modality, started_at: datetime
    ) -> int:
        return self.append(
            "session_opened",
            {
                "session_id": session_id,
                "schedule_id": schedule_id,
                "modality": modality.value,
                "started_at": to_rfc3339(started_at),
            },
            started_at,
        )

    def add_turn(
        self, session_id: str, schedule_id: str, speaker: Speaker, text: str, at: datetime
    ) -> int:
        return self.append(
            "turn_added",
            {
                "session_id": session_id,
                "schedule_id": schedule_id,
                "speaker": speaker.value,
                "text": text,
                "at": to_rfc3339(at),
            },
            at,
        )

    def close_transcript(self, session_id: str, ended_at: datetime) -> int:
        return self.append(
            "transcript_closed",
            {"session_id": session_id, "ended_at": to_rfc3339(ended_at)},
            ended_at,
        )

    def record_summary(self, summary: CallSummary, at: datetime) -> int:
        return self.append("summary_recorded", summary.to_canonical_dict(), at)

    def raise_flag(self, flag: EscalationFlag, at: datetime) -> int:
        return self.append("flag_raised", flag.to_canonical_dict(), at)

    def ack_flag(self, flag_id: str, at: datetime) -> int:
        if flag_id not in self.views.flags:
            raise KeyError(flag_id)
        return self.append("flag_acknowledged", {"flag_id": flag_id}, at)

    # -- read helpers ------------------------------------------------------
    def patient(self, patient_id: str) -> Optional[Patient]:
        with self._lock:
            return self.views.patients.get(patient_id)

    def schedule(self, schedule_id: str) -> Optional[CallSchedule]:
        with self._lock:
            return self.views.schedules.get(schedule_id)

    def schedules(
        self,
        status: ScheduleStatus | None = None,
        patient_id: str | None = None,
    ) -> list[CallSchedule]:
        with self._lock:
            found = [
                s
                for s in self.views.schedules.values()
                if (status is None or s.status is status)
                and (patient_id is None or s.patient_id == patient_id)
            ]
            return sorted(found, key=lambda s: (s.due_at(), s.id))

    def transcript_for_schedule(self, schedule_id: str) -> Optional[Transcript]:
        with self._lock:
            sessions = self.views.sessions_by_schedule.get(schedule_id) or []
            return self.views.transcripts.get(sessions[-1]) if sessions else None

    def summary(self, schedule_id: str) -> Optional[CallSummary]:
        with self._lock:
            return self.views.summaries.get(schedule_id)

    def flags(self, acknowledged: bool | None = None) -> list[EscalationFlag]:
        with self._lock:
            found = [
                f
                for f in self.views.flags.values()
                if acknowledged is None or f.acknowledged == acknowledged
            ]
            return sorted(found, key=lambda f: f.id)


def _encode(record: EventRecord) -> bytes:
    body = canonical_json(
        {
            "seq": record.seq,
            "at": to_rfc3339(record.at),
            "kind": record.kind,
            "payload": record.payload,
        }
    )
    return body.encode("utf-8") + b"\n"
