"""HTTP service for dispatch systems.

Endpoints (JSON bodies, JSON responses):

    POST /create        {"id", "arm_labels", "prior", "policy", "batches_planned", "seed"}
    POST /assign        {"experiment", "participants": [...]}
    POST /rewards       {"experiment", "rewards": {"<participant_id>": 0|1}}
    GET  /state         ?experiment=<id>
    GET  /prob-optimal  ?experiment=<id>&draws=<n>&seed=<s>

Every response is ``{"status": ..., "body": ...}`` on success or
``{"status": ..., "error": {"code", "message"}}`` on failure. Mutating
requests may carry an ``Idempotency-Key`` header; a repeated key returns
the stored response without touching the experiment again.
"""

from __future__ import annotations

import logging
import threading
from typing import Callable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from . import commands, engine
from .errors import UnknownExperiment, ValidationError
from .store import DirectoryStore, MemoryStore

logger = logging.getLogger(__name__)

_HTTP = {commands.OK: 200, commands.CLIENT_ERROR: 400, commands.CONFLICT: 409, commands.SERVER_ERROR: 500}


class IdempotencyCache:
    """Remembers the response for each (endpoint, key) pair.

    A per-key lock makes a replay that races the original wait for it
    rather than applying the mutation twice.
    """

    def __init__(self) -> None:
        self._responses: dict[tuple[str, str], tuple[int, dict]] = {}
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def run(self, endpoint: str, key: str | None, fn: Callable[[], tuple[int, dict]]) -> tuple[int, dict]:
        if not key:
            return fn()
        slot = (endpoint, key)
        with self._guard:
            lock = self._locks.setdefault(slot, threading.Lock())
        with lock:
            if slot in self._responses:
                return self._responses[slot]
            code, doc = fn()
            if code != 500:
                self._responses[slot] = (code, doc)
            return code, doc


def _call(fn, *args) -> tuple[int, dict]:
    try:
        return 200, {"status": commands.OK, "body": fn(*args)}
    except Exception as exc:  # noqa: BLE001 - every failure becomes a response
        doc = commands.error_doc(exc)
        if doc["status"] == commands.SERVER_ERROR:
            logger.exception("request failed")
        code = 404 if isinstance(exc, UnknownExperiment) else _HTTP[doc["status"]]
        return code, doc


async def _json_body(request: Request) -> dict:
    try:
        body = await request.json()
    except ValueError as exc:
        raise ValidationError(f"request body is not JSON: {exc}") from exc
    if not isinstance(body, dict):
        raise ValidationError("request body must be a JSON object")
    return body


def create_app(store: MemoryStore | None = None) -> FastAPI:
    store = MemoryStore() if store is None else store
    cache = IdempotencyCache()
    app = FastAPI(title="batchbandit")
    app.state.store = store

    def _create(body: dict) -> dict:
        seed = body.get("seed")
        if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
            raise ValidationError(f"seed must be an integer, got {seed!r}")
        return commands.create(store, commands.config_from_doc(body), seed)

    def _assign(body: dict) -> dict:
        return commands.assign(store, body.get("experiment", ""), body.get("participants"))

    def _rewards(body: dict) -> dict:
        return commands.rewards(store, body.get("experiment", ""), body.get("rewards"))

    async def mutate(request: Request, endpoint: str, fn) -> JSONResponse:
        try:
            body = await _json_body(request)
        except ValidationError as exc:
            return JSONResponse(commands.error_doc(exc), status_code=400)
        key = request.headers.get("Idempotency-Key")
        code, doc = await run_in_threadpool(cache.run, endpoint, key, lambda: _call(fn, body))
        return JSONResponse(doc, status_code=code)

    @app.post("/create")
    async def create(request: Request):
        return await mutate(request, "create", _create)

    @app.post("/assign")
    async def assign(request: Request):
        return await mutate(request, "assign", _assign)

    @app.post("/rewards")
    async def rewards(request: Request):
        return await mutate(request, "rewards", _rewards)

    @app.get("/state")
    async def state(experiment: str = ""):
        def read(exp_id):
            current = store.load(exp_id)
            doc = commands.state_doc(current)
            doc["snapshot"] = engine.snapshot(current)
            return doc

        code, doc = await run_in_threadpool(_call, read, experiment)
        return JSONResponse(doc, status_code=code)

    @app.get("/prob-optimal")
    async def prob_optimal(experiment: str = "", draws: int | None = None, seed: int | None = None):
        code, doc = await run_in_threadpool(_call, commands.experiment_prob_optimal, store, experiment, draws, seed)
        return JSONResponse(doc, status_code=code)

    return app


def serve(store_dir: str, host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(DirectoryStore(store_dir)), host=host, port=port)
