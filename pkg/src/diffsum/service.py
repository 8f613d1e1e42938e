"""HTTP JSON API over audit sessions, plus static hosting for the web UI.

Thin by design: every route maps onto one SessionStore call and returns
either a status view or a machine-readable error of the form
{"error": {"code": ..., "message": ...}}.  All audit math stays in the
session/core modules; the UI renders server responses verbatim.

Mutating routes take a per-session lock so concurrent submissions cannot
interleave inside one session's log (the one-writer contract); reads are
lock-free and see a consistent snapshot because views are built in one pass
under the GIL from an already-consistent session object.
"""

from __future__ import annotations

import os
import threading
from collections import defaultdict

from fastapi import FastAPI
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .core import AuditParams
from .sampling import BallotManifest, schedule_from_dict
from .session import (
    DEFAULT_LIVE_SCHEDULE,
    DuplicateInterpretationError,
    SeededRng,
    SessionNotOpenError,
    SessionStore,
    UnknownBallotError,
)


class CreateSessionRequest(BaseModel):
    n: int
    candidates: list[str]
    delta: int | None = None
    c: int | None = None
    seed: int = 0
    stream_id: int = 0
    manifest_ref: str | None = None
    manifest_csv: str | None = None
    schedule: dict | None = None
    initial_sample_size: int = 24
    cutover_fraction: float = 0.04


class InterpretationRequest(BaseModel):
    ballot_id: str
    interpretation: str


class CloseRequest(BaseModel):
    reason: str = ""


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def create_app(data_dir: str, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="diffsum audit service")
    store = SessionStore(data_dir)
    locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)

    def load_manifest(req: CreateSessionRequest) -> BallotManifest:
        if (req.manifest_ref is None) == (req.manifest_csv is None):
            raise ValueError("exactly one of manifest_ref or manifest_csv is required")
        if req.manifest_csv is not None:
            return BallotManifest.from_csv(req.manifest_csv)
        path = req.manifest_ref
        if not os.path.isabs(path):
            in_data = os.path.join(data_dir, path)
            path = in_data if os.path.exists(in_data) else path
        if not os.path.exists(path):
            raise ValueError(f"manifest_ref not found: {req.manifest_ref}")
        return BallotManifest.from_csv_path(path)

    @app.post("/sessions", status_code=201)
    def create_session_route(req: CreateSessionRequest):
        try:
            params = AuditParams(
                n=req.n,
                candidates=tuple(req.candidates),
                delta=req.delta,
                c=req.c,
                initial_sample_size=req.initial_sample_size,
                cutover_fraction=req.cutover_fraction,
            )
            manifest = load_manifest(req)
            seed = SeededRng(req.seed, req.stream_id)
            schedule = (
                schedule_from_dict(req.schedule)
                if req.schedule is not None
                else DEFAULT_LIVE_SCHEDULE
            )
            session = store.create(params, manifest, seed, schedule)
        except ValueError as exc:
            return _error(400, "invalid_request", str(exc))
        return JSONResponse(
            status_code=201,
            content={
                "session_id": session.session_id,
                "planned_draws": list(session.planned),
                "view": session.status_view(),
            },
        )

    @app.get("/sessions/{session_id}")
    def get_session_route(session_id: str):
        session = store.get(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        return session.status_view()

    @app.post("/sessions/{session_id}/interpretations")
    def record_route(session_id: str, req: InterpretationRequest):
        with locks[session_id]:
            try:
                session, decision = store.record_interpretation(
                    session_id, req.ballot_id, req.interpretation
                )
            except KeyError:
                return _error(404, "unknown_session", f"no session {session_id!r}")
            except UnknownBallotError as exc:
                return _error(404, "unknown_ballot", str(exc))
            except DuplicateInterpretationError as exc:
                return _error(409, "duplicate_interpretation", str(exc))
            except SessionNotOpenError as exc:
                return _error(409, "session_not_open", str(exc))
            except ValueError as exc:
                return _error(400, "invalid_request", str(exc))
        view = session.status_view()
        return {
            "decision": view["decision"],
            "statistic": view["statistic"],
            "threshold": view["threshold"],
            "view": view,
        }

    @app.post("/sessions/{session_id}/draws")
    def draws_route(session_id: str):
        with locks[session_id]:
            try:
                ballot_ids = store.plan_more(session_id)
            except KeyError:
                return _error(404, "unknown_session", f"no session {session_id!r}")
            except SessionNotOpenError as exc:
                return _error(409, "session_not_open", str(exc))
        return {"ballot_ids": ballot_ids}

    @app.post("/sessions/{session_id}/close")
    def close_route(session_id: str, req: CloseRequest):
        with locks[session_id]:
            try:
                session = store.close(session_id, req.reason)
            except KeyError:
                return _error(404, "unknown_session", f"no session {session_id!r}")
        return {"status": session.status, "view": session.status_view()}

    @app.get("/sessions/{session_id}/events")
    def events_route(session_id: str):
        session = store.get(session_id)
        if session is None:
            return _error(404, "unknown_session", f"no session {session_id!r}")
        body = "".join(e.to_json() + "\n" for e in session.events)
        return PlainTextResponse(content=body, media_type="application/x-ndjson")

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
