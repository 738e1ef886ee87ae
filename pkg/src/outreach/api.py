"""REST surface over the orchestration service.

All entity responses use the canonical encoding (stable bytes); errors use
problem-details-style JSON {"code", "message", "field"?}. GETs never write.
"""

from __future__ import annotations

import socket
import threading
from datetime import datetime
from typing import Any, Optional

from fastapi import Depends, FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .domain import PatientValidationError, ScheduleStatus, canonical_json
from .gateway import MalformedPayload, UnknownSession
from .instruments import UnknownInstrument
from .scheduler import InvalidState, UnknownPatient
from .service import OutreachService


class PortInUse(Exception):
    """The configured listen port is already bound."""


def _problem(status: int, code: str, message: str, field: str | None = None) -> JSONResponse:
    body: dict[str, Any] = {"code": code, "message": message}
    if field:
        body["field"] = field
    return JSONResponse(status_code=status, content=body)


def _entity(payload: Any, status: int = 200) -> Response:
    if hasattr(payload, "to_canonical_json"):
        content = payload.to_canonical_json()
    else:
        content = canonical_json(payload)
    return Response(content=content, status_code=status, media_type="application/json")


class CreateCallBody(BaseModel):
    scheduled_at: datetime
    instrument_ids: list[str] = []
    max_attempts: Optional[int] = Field(default=None, ge=1)


class InboundBody(BaseModel):
    provider_message_id: str
    session_id: Optional[str] = None
    contact: Optional[str] = None
    text: str


def create_app(service: OutreachService, *, api_token: str | None = None) -> FastAPI:
    app = FastAPI(title="outreach", docs_url=None, redoc_url=None)

    async def require_auth(authorization: str | None = Header(default=None)) -> None:
        if api_token and authorization != f"Bearer {api_token}":
            raise _AuthError()

    class _AuthError(Exception):
        pass

    @app.exception_handler(_AuthError)
    async def _auth_handler(request: Request, exc: _AuthError) -> JSONResponse:
        return _problem(401, "Unauthorized", "missing or invalid bearer token")

    @app.exception_handler(PatientValidationError)
    async def _validation_handler(request: Request, exc: PatientValidationError) -> JSONResponse:
        first = exc.issues[0]
        body = {
            "code": first.code,
            "message": first.message,
            "field": first.field,
            "errors": [i.model_dump(mode="json") for i in exc.issues],
        }
        return JSONResponse(status_code=422, content=body)

    @app.exception_handler(UnknownPatient)
    async def _unknown_patient(request: Request, exc: UnknownPatient) -> JSONResponse:
        return _problem(404, "UnknownPatient", str(exc), "patient_id")

    @app.exception_handler(UnknownInstrument)
    async def _unknown_instrument(request: Request, exc: UnknownInstrument) -> JSONResponse:
        return _problem(422, "UnknownInstrument", str(exc), "instrument_ids")

    @app.exception_handler(InvalidState)
    async def _invalid_state(request: Request, exc: InvalidState) -> JSONResponse:
        return _problem(409, "InvalidState", str(exc))

    @app.exception_handler(UnknownSession)
    async def _unknown_session(request: Request, exc: UnknownSession) -> JSONResponse:
        return _problem(404, "UnknownSession", str(exc))

    @app.exception_handler(MalformedPayload)
    async def _malformed(request: Request, exc: MalformedPayload) -> JSONResponse:
        return _problem(400, "MalformedPayload", str(exc))

    auth = Depends(require_auth)

    # -- patients -----------------------------------------------------------
    @app.get("/patients", dependencies=[auth])
    def list_patients() -> Response:
        return _entity([p.to_canonical_dict() for p in service.patients()])

    @app.post("/patients", dependencies=[auth])
    async def create_patient(request: Request) -> Response:
        return _entity(service.create_patient(await request.json()), status=201)

    @app.get("/patients/{patient_id}", dependencies=[auth])
    def get_patient(patient_id: str) -> Response:
        patient = service.store.patient(patient_id)
        if patient is None:
            return _problem(404, "UnknownPatient", f"no patient {patient_id!r}", "patient_id")
        return _entity(patient)

    @app.put("/patients/{patient_id}", dependencies=[auth])
    async def put_patient(patient_id: str, request: Request) -> Response:
        try:
            return _entity(service.update_patient(patient_id, await request.json()))
        except KeyError:
            return _problem(404, "UnknownPatient", f"no patient {patient_id!r}", "patient_id")

    # -- calls ----------------------------------------------------------------
    @app.post("/patients/{patient_id}/calls", dependencies=[auth])
    def create_call(patient_id: str, body: CreateCallBody) -> Response:
        schedule = service.schedule_call(
            patient_id,
            body.scheduled_at,
            body.instrument_ids,
            max_attempts=body.max_attempts,
        )
        return _entity(schedule, status=201)

    @app.get("/calls", dependencies=[auth])
    def list_calls(status: Optional[str] = None, patient_id: Optional[str] = None) -> Response:
        parsed: ScheduleStatus | None = None
        if status is not None:
            try:
                parsed = ScheduleStatus(status)
            except ValueError:
                return _problem(400, "BadQuery", f"unknown status {status!r}", "status")
        found = service.store.schedules(status=parsed, patient_id=patient_id)
        return _entity([s.to_canonical_dict() for s in found])

    @app.post("/calls/{schedule_id}/cancel", dependencies=[auth])
    def cancel_call(schedule_id: str) -> Response:
        return _entity(service.cancel_call(schedule_id))

    @app.get("/calls/{schedule_id}/transcript", dependencies=[auth])
    def get_transcript(schedule_id: str) -> Response:
        transcript = service.transcript(schedule_id)
        if transcript is None:
            return _problem(404, "NotFound", f"no transcript for {schedule_id!r}")
        return _entity(transcript)

    @app.get("/calls/{schedule_id}/summary", dependencies=[auth])
    def get_summary(schedule_id: str) -> Response:
        summary = service.summary(schedule_id)
        if summary is None:
            return _problem(404, "NotFound", f"no summary for {schedule_id!r}")
        return _entity(summary)

    # -- flags -----------------------------------------------------------------
    @app.get("/flags", dependencies=[auth])
    def list_flags(acknowledged: Optional[bool] = None) -> Response:
        return _entity([f.to_canonical_dict() for f in service.flags(acknowledged)])

    @app.post("/flags/{flag_id}/ack", dependencies=[auth])
    def ack_flag(flag_id: str) -> Response:
        try:
            return _entity(service.ack_flag(flag_id))
        except KeyError:
            return _problem(404, "NotFound", f"no flag {flag_id!r}")

    # -- channels / instruments ---------------------------------------------------
    @app.post("/channels/inbound", dependencies=[auth])
    def inbound(body: InboundBody) -> Response:
        reply = service.router.receive_inbound(body.model_dump(exclude_none=True))
        duplicate = reply is None
        return _entity({"reply": reply, "duplicate": duplicate})

    @app.get("/instruments", dependencies=[auth])
    def list_instruments() -> Response:
        return _entity([i.to_canonical_dict() for i in service.registry.all()])

    return app


def check_port_free(host: str, port: int) -> None:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind((host, port))
        except OSError as exc:
            raise PortInUse(f"{host}:{port}: {exc}") from exc


def serve(
    service: OutreachService,
    *,
    host: str,
    port: int,
    api_token: str | None = None,
    tick_interval_seconds: int = 5,
) -> None:
    """Run the API with the scheduler ticker in the background."""
    import uvicorn

    check_port_free(host, port)
    app = create_app(service, api_token=api_token)
    stop = threading.Event()

    def ticker() -> None:
        while not stop.wait(tick_interval_seconds):
            try:
                service.tick()
            except Exception:
                pass  # a bad tick must not kill the ticker

    thread = threading.Thread(target=ticker, daemon=True, name="scheduler-ticker")
    thread.start()
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        stop.set()
