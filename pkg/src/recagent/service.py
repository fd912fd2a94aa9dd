"""HTTP chat service.

Endpoints:
    POST /v1/sessions                       -> {"session_id": ...}
    POST /v1/sessions/{id}/messages {text}  -> {"reply": ..., "turn_id": ...}
    GET  /v1/sessions/{id}/trace/{turn_id}  -> full turn trace JSON
    GET  /healthz                           -> {"status": "ok", "items": N}

Errors use {"code": ..., "message": ...} bodies. Sessions run one turn at a
time; a message sent while the previous one is in flight gets 409.
"""

from __future__ import annotations

import logging
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .errors import SessionBusy, TurnError
from .runtime import Runtime
from .turn import Session, run_turn

logger = logging.getLogger(__name__)


class MessageBody(BaseModel):
    text: str


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


class SessionManager:
    def __init__(self, runtime: Runtime):
        self.runtime = runtime
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self) -> str:
        session_id = uuid.uuid4().hex
        with self._lock:
            self._sessions[session_id] = self.runtime.new_session()
        return session_id

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)


def build_app(runtime: Runtime) -> FastAPI:
    app = FastAPI(title="recagent", version="0.1.0")
    manager = SessionManager(runtime)
    app.state.manager = manager

    @app.exception_handler(Exception)
    async def unhandled(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("unhandled error on %s", request.url.path)
        return _error(500, "internal_error", str(exc))

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok", "items": runtime.catalog.item_count}

    @app.post("/v1/sessions")
    def create_session() -> dict:
        return {"session_id": manager.create()}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        session = manager.get(session_id)
        if session is None:
            return _error(404, "not_found", f"unknown session {session_id}")
        if not body.text.strip():
            return _error(400, "bad_request", "text must be non-empty")
        try:
            result = run_turn(session, body.text)
        except SessionBusy as exc:
            return _error(409, "conflict", str(exc))
        except TurnError as exc:
            return _error(502, "provider_error", str(exc))
        return {"reply": result.response, "turn_id": result.turn_id}

    @app.get("/v1/sessions/{session_id}/trace/{turn_id}")
    def get_trace(session_id: str, turn_id: int):
        session = manager.get(session_id)
        if session is None:
            return _error(404, "not_found", f"unknown session {session_id}")
        trace = session.traces.get(turn_id)
        if trace is None:
            return _error(404, "not_found", f"unknown turn {turn_id}")
        return trace

    static_dir = runtime.config.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def serve(runtime: Runtime) -> None:
    import uvicorn

    host, _, port = runtime.config.listen.partition(":")
    uvicorn.run(build_app(runtime), host=host or "127.0.0.1", port=int(port or 8080))
