"""REST surface over the orchestrator.

Stateless by construction: handlers only call into the shared orchestrator,
so any number of API instances over the same scheduler answer identically.
"""

from __future__ import annotations

import json
import queue as queue_mod
from contextlib import asynccontextmanager
from datetime import datetime
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import (
    AdmissionError,
    ExalabError,
    NotFound,
    RangeError,
    StateError,
    UnknownExperiment,
    ValidationError,
    WrongDriverKind,
)
from .orchestrator import Orchestrator
from .repository import QueryFilter


class SubmitRequest(BaseModel):
    user_request: str = Field(min_length=1)


class ClarifyRequest(BaseModel):
    answer_text: str = Field(min_length=1)


class Question(BaseModel):
    field: str
    question: str


class SubmitResponse(BaseModel):
    decision: str
    experiment_ids: list[str] | None = None
    clarification_token: str | None = None
    questions: list[Question] | None = None
    reason: str | None = None


class AttenuationRequest(BaseModel):
    value_db: float = Field(ge=0, le=120)


class AttenuationResponse(BaseModel):
    experiment_id: str
    attenuation_db: float
    bandwidth_mhz: float
    snr0_db: float
    mimo_layers: int


class GateResponse(BaseModel):
    experiment_id: str
    result: str  # pass | fail | timeout


class CancelResponse(BaseModel):
    experiment_id: str
    state: str
    already_terminal: bool


_STATUS_BY_ERROR = (
    (UnknownExperiment, 404),
    (NotFound, 404),
    (StateError, 409),
    (WrongDriverKind, 409),
    (RangeError, 400),
    (ValidationError, 400),
    (AdmissionError, 503),
)


def _sse(event: str, data: dict) -> str:
    return f"event: {event}\ndata: {json.dumps(data)}\n\n"


def _parse_ts(value: str | None) -> datetime | None:
    if not value:
        return None
    return datetime.fromisoformat(value.replace("Z", "+00:00"))


def _portal_dist() -> Path | None:
    for candidate in (
        Path("frontend/dist"),
        Path(__file__).resolve().parents[2] / "frontend" / "dist",
    ):
        if (candidate / "index.html").is_file():
            return candidate
    return None


def create_app(orch: Orchestrator) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        orch.shutdown()

    app = FastAPI(title="exalab", version="0.1.0", lifespan=lifespan)
    app.state.orchestrator = orch

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(ExalabError)
    async def domain_error(_request: Request, exc: ExalabError):
        for error_type, status in _STATUS_BY_ERROR:
            if isinstance(exc, error_type):
                return JSONResponse(status_code=status, content={"detail": str(exc)})
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/experiments", response_model=SubmitResponse, response_model_exclude_none=True)
    def submit(body: SubmitRequest):
        outcome = orch.submit_request(body.user_request)
        status = 202 if outcome["decision"] == "approved" else 200
        return JSONResponse(status_code=status, content=outcome)

    @app.post("/experiments/clarify/{token}", response_model=SubmitResponse,
              response_model_exclude_none=True)
    def clarify(token: str, body: ClarifyRequest):
        outcome = orch.answer_clarification(token, body.answer_text)
        status = 202 if outcome["decision"] == "approved" else 200
        return JSONResponse(status_code=status, content=outcome)

    @app.get("/experiments")
    def list_experiments(
        core_name: str | None = None,
        modality: str | None = None,
        state: str | None = None,
        descriptor_ref: str | None = None,
        since: str | None = None,
        until: str | None = None,
        archived: bool = False,
    ):
        filtered = any((core_name, modality, state, descriptor_ref, since, until))
        if filtered or archived:
            bundles = orch.query(QueryFilter(
                core_name=core_name,
                modality=modality,
                state=state,
                descriptor_ref=descriptor_ref,
                submitted_from=_parse_ts(since),
                submitted_to=_parse_ts(until),
                list_all=not filtered,
            ))
            return {"experiments": bundles}
        return {"experiments": orch.list_experiments()}

    @app.get("/experiments/{experiment_id}")
    def status(experiment_id: str):
        return orch.get_status(experiment_id)

    @app.get("/experiments/{experiment_id}/descriptor")
    def descriptor_file(experiment_id: str):
        data = orch.get_descriptor_file(experiment_id)
        return Response(content=data, media_type="application/json")

    @app.get("/experiments/{experiment_id}/metrics")
    def metrics(experiment_id: str):
        return orch.get_results(experiment_id)

    @app.get("/experiments/{experiment_id}/gate", response_model=GateResponse)
    def gate(experiment_id: str, timeout_s: float = 60.0):
        result = orch.gate_wait(experiment_id, timeout_s)
        return GateResponse(experiment_id=experiment_id, result=result)

    @app.delete("/experiments/{experiment_id}", response_model=CancelResponse)
    def cancel(experiment_id: str):
        return CancelResponse(**orch.cancel(experiment_id))

    @app.post("/experiments/{experiment_id}/attenuation", response_model=AttenuationResponse)
    def attenuation(experiment_id: str, body: AttenuationRequest):
        return AttenuationResponse(**orch.set_attenuation(experiment_id, body.value_db))

    @app.get("/experiments/{experiment_id}/events")
    def events(experiment_id: str):
        def stream():
            try:
                history, live = orch.subscribe(experiment_id)
            except UnknownExperiment as exc:
                yield _sse("error", {"error": str(exc)})
                return
            try:
                for event in history:
                    yield _sse(event["event"], event["data"])
                while True:
                    try:
                        event = live.get(timeout=15.0)
                    except queue_mod.Empty:
                        yield ": keep-alive\n\n"
                        continue
                    if event is None:
                        break
                    yield _sse(event["event"], event["data"])
            finally:
                orch.unsubscribe(experiment_id, live)

        return StreamingResponse(stream(), media_type="text/event-stream")

    portal = _portal_dist()
    if portal is not None:
        app.mount("/portal", StaticFiles(directory=portal, html=True), name="portal")

    return app
