"""JSON endpoints used by the mobile app.

The app identifies itself with its device id, which doubles as the bearer
token once the worker behind the device has been approved.
"""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import errors as E
from .service import StudyService

STATUS = (
    (E.UnknownParticipant, 404),
    (E.DuplicateDay, 409),
    (E.DeviceAlreadyEnrolled, 409),
    (E.NotActive, 409),
    (E.WindowExpired, 410),
    (E.StorageError, 503),
    (E.GatewayError, 502),
)


def status_for(exc: E.StudyError) -> int:
    for cls, code in STATUS:
        if isinstance(exc, cls):
            return code
    return 422


class EnrollStart(BaseModel):
    device_id: str
    consent: dict[str, Any]
    demographics: dict[str, Any]
    device_model: str
    timezone: str


class Measurement(BaseModel):
    scroll_rounds: list[dict[str, Any]]
    swipe_rounds: list[dict[str, Any]]
    duration: float = 0.0


class EnrollMeasurement(BaseModel):
    device_id: str
    measurement: Measurement


class DailyMeasurement(Measurement):
    token: str = Field(description="the device id of an enrolled participant")


def create_app(service: StudyService) -> FastAPI:
    app = FastAPI(title="daily study", version="0.1.0")

    @app.exception_handler(E.StudyError)
    async def study_error(_request, exc: E.StudyError):
        return JSONResponse({"error": type(exc).__name__, "detail": str(exc)}, status_code=status_for(exc))

    def worker_for(token: str) -> str:
        worker = service.device_worker(token)
        if worker is None:
            raise HTTPException(404, "unknown or not yet approved device")
        return worker

    @app.post("/enroll/start")
    def enroll_start(body: EnrollStart) -> dict:
        service.enrollment.start(body.device_id, body.consent, body.demographics,
                                 body.device_model, body.timezone)
        return {"status": "started"}

    @app.post("/enroll/measurement")
    def enroll_measurement(body: EnrollMeasurement) -> dict:
        vc = service.enrollment.finish(body.device_id, body.measurement.model_dump())
        return {"code": vc.code, "expires_at": vc.expires_at.isoformat()}

    @app.post("/measurement")
    def measurement(body: DailyMeasurement) -> dict:
        payload = body.model_dump(exclude={"token"})
        return service.pipeline.submit_measurement(worker_for(body.token), payload).to_json()

    @app.get("/earnings")
    def earnings(token: str) -> dict:
        return service.pipeline.earnings(worker_for(token)).to_json()

    @app.get("/health")
    def health() -> dict:
        return {"head": service.state.seq, "participants": len(service.state.participants)}

    return app
