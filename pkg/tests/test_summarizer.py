"""Call summaries: deterministic scores and flags, prose only from backends."""

from __future__ import annotations

from datetime import timedelta

import pytest

from outreach.backends import Backend, ChatMessage, ScriptedBackend
from outreach.dialogue import DialogueEngine, DialoguePhase
from outreach.domain import CallSchedule, Patient, ScheduleStatus
from outreach.summarizer import MissingTimestamps, SessionNotEnded, summarize_call

from conftest import T0, demo_patient


def _run_session(engine, instruments, utterances, start=T0):
    schedule = CallSchedule(
        id="call-9",
        patient_id="p1",
        scheduled_at=start,
        instrument_ids=[i.id for i in instruments],
        status=ScheduleStatus.IN_PROGRESS,
    )
    patient = Patient.model_validate(demo_patient())
    session, _ = engine.start_conversation(
        schedule, patient, instruments, session_id="s9", now=start
    )
    now = start
    for text in utterances:
        now += timedelta(seconds=20)
        engine.handle_turn(session, text, now=now)
    return session


class LyingBackend(Backend):
    """Prose insists nothing happened; summaries must not believe it."""

    def generate_reply(self, history: list[ChatMessage]) -> str:
        return "A calm call. No emergency events or callback requests occurred."


class TestSummarizeCall:
    def test_full_instrument_sums_and_mirrors_flags(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [qol3], ["hi", "2", "5", "3", "that's all"])
        summary = summarize_call(session.transcript, session.state, [qol3])
        result = summary.instrument_results[0]
        assert result.score == 10  # 2 + 5 + 3
        assert result.completeness == 1.0
        assert summary.emergency.flagged is False
        assert summary.callback_requested is False
        assert summary.overview == "Completed 1 of 1 instruments; 0 flags."

    def test_emergency_mid_instrument(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(
            engine, [qol3], ["hi", "4", "my chest pain is unbearable", "ok"]
        )
        summary = summarize_call(session.transcript, session.state, [qol3])
        assert summary.emergency.flagged is True
        assert summary.emergency.reason and "chest pain" in summary.emergency.reason
        assert summary.instrument_results[0].completeness < 1.0
        assert summary.instrument_results[0].score is None

    def test_zero_duration_boundary(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [], [])
        engine.abort_session(session, now=T0)
        summary = summarize_call(session.transcript, session.state, [])
        assert summary.duration_seconds == 0

    def test_duration_floors(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [], ["hello"])
        session.state.phase = DialoguePhase.ENDED
        session.transcript.ended_at = T0 + timedelta(seconds=20, microseconds=900_000)
        summary = summarize_call(session.transcript, session.state, [])
        assert summary.duration_seconds == 20

    def test_session_not_ended_rejected(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [qol3], ["hi"])
        with pytest.raises(SessionNotEnded):
            summarize_call(session.transcript, session.state, [qol3])

    def test_missing_timestamps_rejected(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [qol3], ["hi"])
        session.state.phase = DialoguePhase.ENDED
        assert session.transcript.ended_at is None
        with pytest.raises(MissingTimestamps):
            summarize_call(session.transcript, session.state, [qol3])

    def test_flag_fidelity_against_lying_prose_backend(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [qol3], ["hi", "please call me back", "ok", "ok", "ok"])
        # drive to end
        while session.state.phase is not DialoguePhase.ENDED:
            engine.handle_turn(session, "ok", now=session.transcript.turns[-1].at + timedelta(seconds=5))
        summary = summarize_call(
            session.transcript, session.state, [qol3], backend=LyingBackend()
        )
        # prose claims otherwise, but flags mirror state exactly
        assert summary.callback_requested is True
        assert "No emergency events" in summary.overview

    def test_deterministic_without_backend(self, qol3):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [qol3], ["hi", "4", "2", "5", "bye"])
        first = summarize_call(session.transcript, session.state, [qol3])
        second = summarize_call(session.transcript, session.state, [qol3])
        assert first.to_canonical_json().encode() == second.to_canonical_json().encode()

    def test_wellness_check_summary(self):
        engine = DialogueEngine(ScriptedBackend())
        session = _run_session(engine, [], ["hi", "feeling fine"])
        assert session.state.phase is DialoguePhase.ENDED
        summary = summarize_call(session.transcript, session.state, [])
        assert summary.instrument_results == []
        assert summary.overview == "Completed 0 of 0 instruments; 0 flags."
