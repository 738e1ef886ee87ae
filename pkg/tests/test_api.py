"""REST surface: round-trips, filters, error shapes, GET purity, auth."""

from __future__ import annotations

import json
from datetime import timedelta

import pytest
from fastapi.testclient import TestClient

from outreach.api import create_app
from outreach.domain import to_rfc3339

from conftest import T0, demo_patient


@pytest.fixture
def client(service) -> TestClient:
    return TestClient(create_app(service), raise_server_exceptions=False)


@pytest.fixture
def seeded_client(seeded) -> tuple[TestClient, dict]:
    service, created = seeded
    return TestClient(create_app(service), raise_server_exceptions=False), created


class TestPatients:
    def test_post_then_get_field_for_field(self, client):
        body = demo_patient()
        created = client.post("/patients", json=body)
        assert created.status_code == 201
        fetched = client.get("/patients/p1")
        assert fetched.status_code == 200
        assert fetched.json() == created.json()
        assert fetched.json()["phone"] == "+15551234567"

    def test_validation_errors_name_fields(self, client):
        body = demo_patient()
        body["phone"] = "bad"
        body["timezone"] = "Nowhere/Null"
        response = client.post("/patients", json=body)
        assert response.status_code == 422
        problem = response.json()
        assert {e["code"] for e in problem["errors"]} == {"MalformedPhone", "UnknownTimezone"}
        assert "field" in problem

    def test_put_updates(self, client):
        client.post("/patients", json=demo_patient())
        body = demo_patient()
        body["display_name"] = "Pat Q. Doe"
        response = client.put("/patients/p1", json=body)
        assert response.status_code == 200
        assert client.get("/patients/p1").json()["display_name"] == "Pat Q. Doe"

    def test_put_unknown_patient_404(self, client):
        response = client.put("/patients/ghost", json=demo_patient("ghost"))
        assert response.status_code == 404

    def test_list_patients(self, seeded_client):
        client, created = seeded_client
        ids = [p["id"] for p in client.get("/patients").json()]
        assert ids == sorted(created["patients"])


class TestCalls:
    def test_create_call_and_filter_by_status(self, seeded_client):
        client, created = seeded_client
        body = {"scheduled_at": to_rfc3339(T0 + timedelta(hours=2)), "instrument_ids": ["qol3"]}
        response = client.post("/patients/p-ada/calls", json=body)
        assert response.status_code == 201
        scheduled = client.get("/calls", params={"status": "scheduled"}).json()
        assert all(c["status"] == "scheduled" for c in scheduled)
        # round-trip: the listed entity equals the created one, field for field
        listed = next(c for c in scheduled if c["id"] == response.json()["id"])
        assert listed == response.json()
        assert listed["scheduled_at"] == "2026-08-10T14:00:00Z"

    def test_unknown_instrument_422(self, seeded_client):
        client, _ = seeded_client
        body = {"scheduled_at": to_rfc3339(T0), "instrument_ids": ["nope"]}
        response = client.post("/patients/p-ada/calls", json=body)
        assert response.status_code == 422
        assert response.json()["code"] == "UnknownInstrument"

    def test_unknown_patient_404(self, seeded_client):
        client, _ = seeded_client
        body = {"scheduled_at": to_rfc3339(T0), "instrument_ids": []}
        assert client.post("/patients/ghost/calls", json=body).status_code == 404

    def test_cancel_flow(self, seeded_client):
        client, created = seeded_client
        cancel = client.post(f"/calls/{created['upcoming_schedule_id']}/cancel")
        assert cancel.status_code == 200
        assert cancel.json()["status"] == "canceled"
        again = client.post(f"/calls/{created['upcoming_schedule_id']}/cancel")
        assert again.status_code == 409

    def test_filter_by_patient(self, seeded_client):
        client, created = seeded_client
        calls = client.get("/calls", params={"patient_id": "p-brian"}).json()
        assert [c["patient_id"] for c in calls] == ["p-brian"]

    def test_bad_status_query_400(self, seeded_client):
        client, _ = seeded_client
        assert client.get("/calls", params={"status": "bogus"}).status_code == 400

    def test_zero_max_attempts_rejected(self, seeded_client):
        client, _ = seeded_client
        body = {"scheduled_at": to_rfc3339(T0), "instrument_ids": [], "max_attempts": 0}
        assert client.post("/patients/p-ada/calls", json=body).status_code == 422


class TestConversationEndpoints:
    def test_transcript_and_summary_after_simulated_call(self, seeded):
        service, created = seeded
        schedule_id = created["schedule_id"]
        summary = service.simulate_call(schedule_id, ["hi", "4", "2", "5"])
        client = TestClient(create_app(service), raise_server_exceptions=False)

        transcript = client.get(f"/calls/{schedule_id}/transcript")
        assert transcript.status_code == 200
        turns = transcript.json()["turns"]
        assert turns[0]["speaker"] == "assistant"
        assert [t["text"] for t in turns if t["speaker"] == "patient"] == ["hi", "4", "2", "5"]

        fetched = client.get(f"/calls/{schedule_id}/summary")
        assert fetched.status_code == 200
        assert fetched.content.decode() == summary.to_canonical_json()

    def test_inbound_webhook_drives_turns(self, seeded):
        service, created = seeded
        schedule_id = created["schedule_id"]
        service.scheduler.start_call(schedule_id, service.now())
        session_id = service._session_by_schedule[schedule_id]
        client = TestClient(create_app(service), raise_server_exceptions=False)

        payload = {"provider_message_id": "pm-1", "session_id": session_id, "text": "hello"}
        response = client.post("/channels/inbound", json=payload)
        assert response.status_code == 200
        assert response.json()["reply"]

        duplicate = client.post("/channels/inbound", json=payload)
        assert duplicate.json()["duplicate"] is True

        unknown = client.post(
            "/channels/inbound",
            json={"provider_message_id": "pm-2", "session_id": "ch-999999", "text": "hi"},
        )
        assert unknown.status_code == 404

        empty = client.post(
            "/channels/inbound", json={"provider_message_id": "pm-3", "text": ""}
        )
        assert empty.status_code == 400

    def test_missing_transcript_404(self, seeded_client):
        client, created = seeded_client
        assert client.get(f"/calls/{created['schedule_id']}/transcript").status_code == 404
        assert client.get(f"/calls/{created['schedule_id']}/summary").status_code == 404


class TestFlags:
    def test_flag_lifecycle(self, seeded):
        service, created = seeded
        schedule_id = created["schedule_id"]
        try:
            service.simulate_call(schedule_id, ["hi", "please call me back", "4", "2", "5"])
        except Exception:
            pass
        client = TestClient(create_app(service), raise_server_exceptions=False)
        flags = client.get("/flags", params={"acknowledged": "false"}).json()
        assert len(flags) == 1 and flags[0]["kind"] == "callback_request"
        flag_id = flags[0]["id"]
        acked = client.post(f"/flags/{flag_id}/ack")
        assert acked.status_code == 200 and acked.json()["acknowledged"] is True
        assert client.get("/flags", params={"acknowledged": "false"}).json() == []
        assert client.get("/flags", params={"acknowledged": "true"}).json()[0]["id"] == flag_id

    def test_ack_unknown_flag_404(self, client):
        assert client.post("/flags/ghost/ack").status_code == 404


class TestInstruments:
    def test_lists_packaged_instrument(self, client):
        instruments = client.get("/instruments").json()
        assert [i["id"] for i in instruments] == ["qol3"]


class TestGetPurity:
    def test_gets_never_append_events(self, seeded):
        service, created = seeded
        client = TestClient(create_app(service), raise_server_exceptions=False)
        before = service.store.last_seq
        client.get("/patients")
        client.get("/patients/p-ada")
        client.get("/calls")
        client.get(f"/calls/{created['schedule_id']}/transcript")
        client.get(f"/calls/{created['schedule_id']}/summary")
        client.get("/flags")
        client.get("/instruments")
        assert service.store.last_seq == before


class TestAuth:
    def test_bearer_token_enforced(self, service):
        client = TestClient(
            create_app(service, api_token="sekrit"), raise_server_exceptions=False
        )
        assert client.get("/patients").status_code == 401
        ok = client.get("/patients", headers={"Authorization": "Bearer sekrit"})
        assert ok.status_code == 200

    def test_no_token_configured_means_open(self, client):
        assert client.get("/patients").status_code == 200
