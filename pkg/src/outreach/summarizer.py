"""Clinician-facing call summaries.

Scores and flags are computed deterministically from the session state and
never delegated to a model: the numbers a clinician sees must be auditable.
A backend, when configured, contributes overview prose only.
"""

from __future__ import annotations

import math
from typing import Optional

from .backends import Backend, ChatMessage, Role
from .dialogue import DialoguePhase, DialogueState
from .domain import (
    CallSummary,
    EmergencyStatus,
    FlagKind,
    Instrument,
    InstrumentResult,
    Transcript,
)
from .instruments import AnswerSheet, score


class SessionNotEnded(Exception):
    """Summaries are produced only for sessions whose dialogue ended."""


class MissingTimestamps(Exception):
    """The transcript has no end time to compute a duration from."""


def summarize_call(
    transcript: Transcript,
    state: DialogueState,
    instruments: list[Instrument],
    *,
    backend: Optional[Backend] = None,
) -> CallSummary:
    """Build the CallSummary for a finished session.

    Duration is the floor of the transcript span; per-instrument results come
    from the scoring module; emergency/callback mirror the session flags
    exactly; the overview is model prose only when a backend is supplied.
    """
    if state.phase is not DialoguePhase.ENDED:
        raise SessionNotEnded(state.session_id)
    if transcript.ended_at is None:
        raise MissingTimestamps(state.session_id)

    duration = math.floor((transcript.ended_at - transcript.started_at).total_seconds())

    results: list[InstrumentResult] = []
    for instrument in instruments:
        sheet = state.sheets.get(instrument.id) or AnswerSheet(instrument_id=instrument.id)
        result = score(instrument, sheet)
        results.append(
            InstrumentResult(
                instrument_id=instrument.id,
                score=result.score,
                completeness=result.completeness,
                reasoning=result.reasoning,
            )
        )

    emergency_flags = [f for f in state.flags if f.kind is FlagKind.EMERGENCY]
    emergency = EmergencyStatus(
        flagged=bool(emergency_flags),
        reason=emergency_flags[0].reason if emergency_flags else None,
    )
    callback_requested = any(f.kind is FlagKind.CALLBACK_REQUEST for f in state.flags)

    complete = sum(1 for r in results if r.completeness == 1.0)
    overview = (
        f"Completed {complete} of {len(results)} instruments; {len(state.flags)} flags."
    )
    if backend is not None:
        overview = _overview_prose(backend, transcript, overview)

    return CallSummary(
        schedule_id=state.schedule_id,
        duration_seconds=duration,
        instrument_results=results,
        emergency=emergency,
        callback_requested=callback_requested,
        overview=overview,
    )


def _overview_prose(backend: Backend, transcript: Transcript, fallback: str) -> str:
    lines = "\n".join(f"{t.speaker.value}: {t.text}" for t in transcript.turns)
    messages = [
        ChatMessage(
            role=Role.SYSTEM,
            content=(
                "Write a two-sentence overview of this patient call for the "
                "clinician. Do not state scores or flags; those are reported "
                "separately."
            ),
        ),
        ChatMessage(role=Role.USER, content=lines or "(empty call)"),
    ]
    try:
        return backend.generate_reply(messages)
    except Exception:
        return fallback
