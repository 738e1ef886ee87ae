"""Event log durability, replay determinism, and corruption handling."""

from __future__ import annotations

import errno
import os
from datetime import timedelta

import pytest

from outreach.domain import Modality, Patient, ScheduleStatus, Speaker
from outreach.scheduler import Outcome, Scheduler, SchedulerConfig
from outreach.store import CorruptLog, EventLog, Store, StorageFull, decode_log

from conftest import T0, demo_patient


def _populate(store: Store) -> None:
    patient = Patient.model_validate(demo_patient())
    store.upsert_patient(patient, T0)
    from outreach.domain import CallSchedule

    schedule = CallSchedule(id="call-000001", patient_id="p1", scheduled_at=T0)
    store.create_schedule(schedule, T0)
    store.open_session("s1", schedule.id, Modality.VOICE, T0)
    store.add_turn("s1", schedule.id, Speaker.ASSISTANT, "hello", T0)
    store.add_turn("s1", schedule.id, Speaker.PATIENT, "hi", T0 + timedelta(seconds=4))
    store.close_transcript("s1", T0 + timedelta(seconds=30))


class TestAppendReplay:
    def test_replay_reconstructs_identical_views(self, tmp_path):
        path = tmp_path / "events.jsonl"
        store = Store(path)
        _populate(store)
        before = store.views.snapshot()
        store.close()

        reopened = Store(path)
        assert reopened.views.snapshot() == before
        assert reopened.last_seq == 6

    def test_empty_log_gives_empty_views(self, tmp_path):
        store = Store(tmp_path / "events.jsonl")
        snapshot = store.views.snapshot()
        assert all(not v for v in snapshot.values())

    def test_seq_is_strictly_monotone(self, tmp_path):
        store = Store(tmp_path / "events.jsonl")
        patient = Patient.model_validate(demo_patient())
        seqs = [store.upsert_patient(patient, T0) for _ in range(5)]
        assert seqs == [1, 2, 3, 4, 5]

    def test_append_continues_after_reopen(self, tmp_path):
        path = tmp_path / "events.jsonl"
        store = Store(path)
        _populate(store)
        store.close()
        reopened = Store(path)
        patient = Patient.model_validate(demo_patient("p2"))
        assert reopened.upsert_patient(patient, T0) == 7


class TestCorruption:
    def _written_log(self, tmp_path):
        path = tmp_path / "events.jsonl"
        store = Store(path)
        _populate(store)
        store.close()
        return path

    def test_truncated_mid_record_names_last_valid_seq(self, tmp_path):
        path = self._written_log(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 9])  # cut into the final record
        with pytest.raises(CorruptLog) as err:
            Store(path)
        assert err.value.last_valid_seq == 5
        assert len(err.value.valid_records) == 5  # prior events intact

    def test_garbage_line_detected(self, tmp_path):
        path = self._written_log(tmp_path)
        with path.open("ab") as fh:
            fh.write(b"{not json}\n")
        with pytest.raises(CorruptLog) as err:
            Store(path)
        assert err.value.last_valid_seq == 6

    def test_recover_mode_truncates_to_valid_prefix(self, tmp_path):
        path = self._written_log(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 9])
        store = Store(path, recover=True)
        assert store.last_seq == 5
        # the log is clean again: append works and a reopen sees 6 records
        patient = Patient.model_validate(demo_patient("p3"))
        assert store.upsert_patient(patient, T0) == 6
        store.close()
        assert Store(path).last_seq == 6

    def test_sequence_gap_detected(self):
        good = b'{"at":"2026-08-10T12:00:00Z","kind":"x","payload":{},"seq":1}\n'
        gap = b'{"at":"2026-08-10T12:00:00Z","kind":"x","payload":{},"seq":3}\n'
        with pytest.raises(CorruptLog) as err:
            decode_log(good + gap)
        assert err.value.last_valid_seq == 1


class TestStorageFull:
    def test_enospc_maps_to_storage_full(self, tmp_path, monkeypatch):
        log = EventLog(tmp_path / "events.jsonl")

        def fake_write(fd, data):
            raise OSError(errno.ENOSPC, "no space left on device")

        monkeypatch.setattr(os, "write", fake_write)
        with pytest.raises(StorageFull):
            log.append_line(b"{}\n")


class TestCrashEquivalence:
    def test_kill_between_appends_preserves_acked_state(self, tmp_path):
        """Simulated crash: every append is already fsync'd, so dropping the
        fd with no shutdown logic is exactly what a hard kill leaves behind."""
        path = tmp_path / "events.jsonl"
        store = Store(path)
        _populate(store)
        snapshot = store.views.snapshot()
        store._log.close()  # drop the fd; no flush/shutdown path exists
        replayed = Store(path, recover=True)
        assert replayed.views.snapshot() == snapshot

    def test_full_lifecycle_replay_matches_live_views(self, tmp_path, registry):
        path = tmp_path / "events.jsonl"
        store = Store(path)
        store.upsert_patient(Patient.model_validate(demo_patient()), T0)
        scheduler = Scheduler(store, registry, SchedulerConfig())
        schedule = scheduler.schedule_call("p1", T0, ["qol3"], T0)
        scheduler.tick(T0)
        scheduler.record_outcome(schedule.id, Outcome.FAILURE, T0 + timedelta(seconds=60))
        live = store.views.snapshot()
        store.close()
        assert Store(path).views.snapshot() == live
        assert Store(path).schedule(schedule.id).status is ScheduleStatus.SCHEDULED
