"""HTTP surface for the chat service.

POST /sessions                          {patient_id, kinds[], start, end, user_id?, department?} -> {session_id}
POST /sessions/{id}/messages            {query} -> the recorded turn
POST /sessions/{id}/turns/{n}/feedback  {thumbs, note?} -> {recorded: true}
GET  /sessions/{id}/log                 one session-log record
GET  /patients                          patient ids in the store
POST /patients                          raw bundle bytes -> {patient_id, entries, skipped}
GET  /metrics                           usage snapshot over live sessions
"""
from __future__ import annotations

import json
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel

from .gateway import BackendError
from .metrics import MetricsStore
from .sessionlog import Generation, record_to_json, _parse_ts
from .service import (
    ChatService,
    DuplicateFeedback,
    EmptyQuery,
    InvalidSelection,
    UnknownSession,
    UnknownTurn,
)
from .store import UnknownPatient
from .timeline import MalformedDocument, MissingPatientId, parse_bundle


class SessionRequest(BaseModel):
    patient_id: str
    kinds: list[str]
    start: str
    end: str
    user_id: str = ""
    department: str | None = None


class MessageRequest(BaseModel):
    query: str


class FeedbackRequest(BaseModel):
    thumbs: str
    note: str | None = None


def _turn_payload(turn: Generation) -> dict:
    doc = asdict(turn)
    doc["tokens"] = {"sent": doc.pop("tokens_sent"), "received": doc.pop("tokens_received")}
    return doc


def create_app(service: ChatService) -> FastAPI:
    app = FastAPI(title="chartbridge chat service")

    @app.post("/sessions")
    def create_session(req: SessionRequest) -> dict:
        try:
            session = service.create_session(
                patient_id=req.patient_id,
                kinds=req.kinds,
                start=_parse_ts(req.start),
                end=_parse_ts(req.end),
                user_id=req.user_id,
                department=req.department,
            )
        except UnknownPatient as exc:
            raise HTTPException(status_code=404, detail=f"unknown patient: {exc}") from exc
        except (InvalidSelection, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"session_id": session.session_id}

    @app.post("/sessions/{session_id}/messages")
    def send_message(session_id: str, req: MessageRequest) -> dict:
        try:
            turn = service.send_message(session_id, req.query)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=f"unknown session: {exc}") from exc
        except EmptyQuery as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        except BackendError as exc:
            raise HTTPException(status_code=502, detail=f"generation failed: {exc}") from exc
        return _turn_payload(turn)

    @app.post("/sessions/{session_id}/turns/{turn_index}/feedback")
    def record_feedback(session_id: str, turn_index: int, req: FeedbackRequest) -> dict:
        try:
            service.record_feedback(session_id, turn_index, req.thumbs, req.note)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=f"unknown session: {exc}") from exc
        except UnknownTurn as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except DuplicateFeedback as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"recorded": True}

    @app.get("/sessions/{session_id}/log")
    def session_log(session_id: str) -> dict:
        try:
            session = service.session(session_id)
        except UnknownSession as exc:
            raise HTTPException(status_code=404, detail=f"unknown session: {exc}") from exc
        return json.loads(record_to_json(service._to_record(session)))

    @app.get("/patients")
    def patients() -> dict:
        return {"patients": service.store.patient_ids()}

    @app.post("/patients")
    async def upload_bundle(request: Request) -> dict:
        try:
            result = parse_bundle(await request.body())
        except (MalformedDocument, MissingPatientId) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        service.store.add(result.timeline)
        return {
            "patient_id": result.timeline.patient_id,
            "entries": len(result.timeline),
            "skipped": result.skipped,
            "warnings": list(result.warnings),
        }

    @app.get("/metrics")
    def metrics() -> dict:
        store = MetricsStore()
        store.ingest(service.export_logs())
        return asdict(store.snapshot())

    return app
