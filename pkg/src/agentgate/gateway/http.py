"""Wire API: JSON over HTTP, approval/task events as a text event stream.

Transport rules: bad credentials are the only transport-level failure (401);
every post-auth domain failure is a 200 whose body says ok=false -- planners
consume structure, not status codes. The event stream uses ``event:``/
``data:`` framing and starts with a replay of undecided approvals so a late
subscriber can rebuild its inbox.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterator

from fastapi import Depends, FastAPI, Header, Query, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from ..errors import GatewayError
from ..governance import Principal
from .runtime import GatewayRuntime

KEEPALIVE_COMMENT = ": keepalive\n\n"


def _sse_frame(record: dict[str, Any]) -> str:
    kind = record.get("kind", "message")
    return f"event: {kind}\ndata: {json.dumps(record, separators=(',', ':'))}\n\n"


def _domain_error(exc: GatewayError) -> JSONResponse:
    payload: dict[str, Any] = {"cause": exc.code, "message": exc.message}
    if exc.details:
        payload["details"] = _jsonable(exc.details)
    return JSONResponse(status_code=200, content={"ok": False, "error": payload})


def _jsonable(value: Any) -> Any:
    try:
        json.dumps(value)
        return value
    except TypeError:
        return json.loads(json.dumps(value, default=str))


def create_app(runtime: GatewayRuntime) -> FastAPI:
    app = FastAPI(title="agentgate", docs_url=None, redoc_url=None)

    def require_principal(authorization: str | None = Header(default=None)) -> Principal:
        token = None
        if authorization and authorization.lower().startswith("bearer "):
            token = authorization[7:].strip()
        principal = runtime.authenticate(token)
        if principal is None:
            # transport-level denial: no NTC for unauthenticated callers
            from fastapi import HTTPException

            raise HTTPException(status_code=401, detail="invalid or missing bearer token")
        return principal

    @app.get("/healthz")
    def healthz() -> dict[str, Any]:
        return {"ok": True}

    @app.post("/invoke")
    def invoke(request: dict[str, Any], caller: Principal = Depends(require_principal)) -> JSONResponse:
        return JSONResponse(status_code=200, content=runtime.handle_invoke(caller, request))

    @app.get("/tools")
    def tools(
        caller: Principal = Depends(require_principal),
        tenant: str | None = Query(default=None),
    ) -> JSONResponse:
        try:
            listing = runtime.handle_discovery(caller, tenant)
        except GatewayError as exc:
            return _domain_error(exc)
        return JSONResponse(status_code=200, content={"ok": True, "tools": listing})

    @app.get("/approvals")
    def approvals(
        caller: Principal = Depends(require_principal),
        status: str = Query(default="pending"),
    ) -> JSONResponse:
        try:
            rows = runtime.handle_approvals_list(caller, status)
        except GatewayError as exc:
            return _domain_error(exc)
        return JSONResponse(status_code=200, content={"ok": True, "approvals": _jsonable(rows)})

    @app.post("/approvals/{pending_id}/decision")
    def decide(
        pending_id: str,
        body: dict[str, Any],
        caller: Principal = Depends(require_principal),
    ) -> JSONResponse:
        try:
            summary = runtime.handle_decision(
                caller, pending_id, body.get("verdict", ""), body.get("rationale", "")
            )
        except GatewayError as exc:
            return _domain_error(exc)
        return JSONResponse(status_code=200, content={"ok": True, "approval": _jsonable(summary)})

    @app.get("/audit")
    def audit(
        caller: Principal = Depends(require_principal),
        n: int = Query(default=50, ge=1, le=1000),
    ) -> JSONResponse:
        return JSONResponse(
            status_code=200, content={"ok": True, "records": _jsonable(runtime.handle_audit_tail(n))}
        )

    @app.get("/events")
    def events(
        request: Request,
        caller: Principal = Depends(require_principal),
        replay_only: bool = Query(default=False),
    ) -> StreamingResponse:
        def stream() -> Iterator[str]:
            subscription = runtime.events.subscribe()
            try:
                for record in runtime.events.replay_events():
                    yield _sse_frame(record)
                if replay_only:
                    return
                for record in subscription.events(poll_timeout=1.0):
                    yield _sse_frame(record) if record is not None else KEEPALIVE_COMMENT
            finally:
                subscription.close()

        return StreamingResponse(stream(), media_type="text/event-stream")

    console_dir = runtime.config.console_dir
    if console_dir is None:
        bundled = Path(__file__).resolve().parents[3] / "frontend" / "dist"
        if bundled.is_dir():
            console_dir = bundled
    if console_dir is not None and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True), name="console")

    return app


def serve(runtime: GatewayRuntime) -> None:  # pragma: no cover - manual entry point
    import uvicorn

    uvicorn.run(create_app(runtime), host=runtime.config.host, port=runtime.config.port, log_level="warning")
