from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from chartbridge.api import create_app
from chartbridge.gateway import ModelGateway
from chartbridge.service import ChatService


@pytest.fixture
def client(small_store, registry, echo_backend):
    service = ChatService(small_store, ModelGateway(registry, echo_backend))
    return TestClient(create_app(service))


SESSION_BODY = {
    "patient_id": "P0001",
    "kinds": ["note", "lab_result"],
    "start": "2000-01-01T00:00:00Z",
    "end": "2030-01-01T00:00:00Z",
    "user_id": "u1",
}


def test_full_session_flow(client):
    resp = client.post("/sessions", json=SESSION_BODY)
    assert resp.status_code == 200
    session_id = resp.json()["session_id"]

    turn = client.post(f"/sessions/{session_id}/messages", json={"query": "Summarize?"})
    assert turn.status_code == 200
    body = turn.json()
    assert body["turn_index"] == 0
    assert body["response"] == "OK"
    assert body["tokens"]["sent"] > 0

    fb = client.post(f"/sessions/{session_id}/turns/0/feedback", json={"thumbs": "up"})
    assert fb.status_code == 200

    log = client.get(f"/sessions/{session_id}/log")
    assert log.status_code == 200
    record = log.json()
    assert record["turns"][0]["feedback"] == {"thumbs": "up", "note": None}
    assert record["selection"]["kinds"] == ["lab_result", "note"]


def test_unknown_patient_404(client):
    resp = client.post("/sessions", json={**SESSION_BODY, "patient_id": "GHOST"})
    assert resp.status_code == 404


def test_invalid_selection_422(client):
    resp = client.post("/sessions", json={**SESSION_BODY, "kinds": []})
    assert resp.status_code == 422


def test_unknown_session_404(client):
    assert client.post("/sessions/nope/messages", json={"query": "x"}).status_code == 404
    assert client.get("/sessions/nope/log").status_code == 404


def test_duplicate_feedback_409(client):
    session_id = client.post("/sessions", json=SESSION_BODY).json()["session_id"]
    client.post(f"/sessions/{session_id}/messages", json={"query": "q"})
    first = client.post(f"/sessions/{session_id}/turns/0/feedback", json={"thumbs": "down", "note": "bad"})
    assert first.status_code == 200
    second = client.post(f"/sessions/{session_id}/turns/0/feedback", json={"thumbs": "up"})
    assert second.status_code == 409


def test_feedback_unknown_turn_404(client):
    session_id = client.post("/sessions", json=SESSION_BODY).json()["session_id"]
    resp = client.post(f"/sessions/{session_id}/turns/7/feedback", json={"thumbs": "up"})
    assert resp.status_code == 404


def test_patients_listing(client):
    resp = client.get("/patients")
    assert resp.json() == {"patients": ["P0001", "P0002", "P0003"]}


def test_bundle_upload(client):
    from conftest import bundle_bytes, note_resource

    raw = bundle_bytes(
        note_resource("NEW-n0", "PNEW", "2025-04-01T09:00:00Z", "Uploaded note."),
        patient="PNEW",
    )
    resp = client.post("/patients", content=raw)
    assert resp.status_code == 200
    assert resp.json() == {"patient_id": "PNEW", "entries": 1, "skipped": 0, "warnings": []}
    assert "PNEW" in client.get("/patients").json()["patients"]

    session = client.post("/sessions", json={**SESSION_BODY, "patient_id": "PNEW"})
    assert session.status_code == 200


def test_bundle_upload_rejects_malformed(client):
    assert client.post("/patients", content=b"not a bundle").status_code == 422


def test_metrics_snapshot(client):
    session_id = client.post("/sessions", json=SESSION_BODY).json()["session_id"]
    client.post(f"/sessions/{session_id}/messages", json={"query": "q"})
    snap = client.get("/metrics").json()
    assert snap["sessions"] == 1
    assert snap["queries"] == 1
    assert snap["unique_users"] == 1
