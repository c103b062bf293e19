"""HTTP/JSON session API over the sampling pipeline.

Sessions freeze their noise at creation; edits and reruns reuse it, so the
tuple (pipeline config, seed, ordered edit log) fully determines every
output byte. Sessions persist to a directory each (restart-safe) with LRU
eviction beyond a configured count. Single-node lab tool: no auth.
"""

from __future__ import annotations

import base64
import io
import os
import shutil
import threading
import uuid
from collections import OrderedDict

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, Response
from PIL import Image

from . import pipeline
from .core import load_checkpoint, to_uint8
from .denoiser import Denoiser

CANVAS = 32

SPEC_DOC = {
    "service": "toddler session API",
    "endpoints": [
        {"method": "POST", "path": "/sessions",
         "body": {"pipeline": "2|3", "seed": "int (required)",
                  "steps": "int|null", "trunc_s": "int"},
         "returns": "201 {id}", "errors": [400, 409]},
        {"method": "GET", "path": "/sessions/{id}",
         "returns": "200 session resource", "errors": [404]},
        {"method": "POST", "path": "/sessions/{id}/stages/{j}/run",
         "returns": "200 {status}", "errors": [404, 409]},
        {"method": "GET", "path": "/sessions/{id}/stages/{j}/output",
         "query": {"format": "png (default) | json"},
         "returns": "200 PNG or JSON array", "errors": [404, 409]},
        {"method": "PUT", "path": "/sessions/{id}/stages/{j}/output",
         "body": {"png_base64": "base64 PNG, binary sketch for j=1"},
         "returns": "200 {status}", "errors": [400, 404]},
        {"method": "POST", "path": "/sessions/{id}/resume",
         "returns": "200 {stages_rerun}", "errors": [404, 409]},
    ],
}


class ApiError(Exception):
    def __init__(self, status, detail):
        self.status = status
        self.detail = detail
        super().__init__(detail)


class SessionStore:
    """In-memory LRU of SessionStates mirrored to per-session directories."""

    def __init__(self, specs, denoisers, sessions_dir, max_sessions):
        self.specs = specs
        self.denoisers = denoisers
        self.dir = sessions_dir
        self.max_sessions = int(max_sessions)
        self._sessions = OrderedDict()
        self._locks = {}
        self._mu = threading.Lock()
        os.makedirs(self.dir, exist_ok=True)

    def _dir_for(self, sid):
        return os.path.join(self.dir, sid)

    def lock(self, sid):
        with self._mu:
            return self._locks.setdefault(sid, threading.Lock())

    def create(self, sampler):
        sid = str(uuid.uuid4())
        session = pipeline.create_session(self.specs, sampler, canvas=CANVAS,
                                          batch=1, session_id=sid)
        with self._mu:
            self._sessions[sid] = session
            self._evict_locked()
        self.persist(session)
        return session

    def _evict_locked(self):
        while len(self._sessions) > self.max_sessions:
            old_id, _ = self._sessions.popitem(last=False)
            self._locks.pop(old_id, None)
            shutil.rmtree(self._dir_for(old_id), ignore_errors=True)

    def get(self, sid):
        with self._mu:
            if sid in self._sessions:
                self._sessions.move_to_end(sid)
                return self._sessions[sid]
        # restart-safe: fall back to disk
        path = self._dir_for(sid)
        if not os.path.isdir(path):
            raise ApiError(404, f"unknown session {sid}")
        session = pipeline.load_session(path, self.specs)
        with self._mu:
            self._sessions[sid] = session
            self._evict_locked()
        return session

    def persist(self, session):
        pipeline.save_session(session, self._dir_for(session.session_id))


def _png_bytes(arr):
    buf = io.BytesIO()
    u8 = to_uint8(arr)
    img = (Image.fromarray(u8[:, :, 0], mode="L") if u8.shape[-1] == 1
           else Image.fromarray(u8, mode="RGB"))
    img.save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(b64, channels):
    try:
        raw = base64.b64decode(b64, validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as e:
        raise ApiError(400, f"not a decodable base64 PNG: {e}") from e
    if channels == 1:
        arr = np.asarray(img.convert("L"), dtype=np.float64)[:, :, None] / 255.0
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def _status(session):
    return {str(j): ("done" if j <= len(session.x_inter) else "pending")
            for j in range(1, session.n_stages + 1)}


def _resource(session):
    return {
        "id": session.session_id,
        "status": _status(session),
        "outputs": {str(j): f"/sessions/{session.session_id}/stages/{j}/output"
                    for j in range(1, len(session.x_inter) + 1)},
        "sampler": {"seed": session.sampler.seed,
                    "steps": session.sampler.steps,
                    "trunc_s": session.sampler.trunc_s,
                    "coefficient_source": session.sampler.coefficient_source},
        "edit_log": session.edit_log,
    }


def create_app(config=None, ckpt_dir=None, sessions_dir="sessions",
               max_sessions=32, specs=None, denoisers=None,
               frontend_dir=None):
    """Build the FastAPI app. Checkpoints may be passed directly (tests) or
    loaded from ckpt_dir on first session creation."""
    if specs is None:
        from .cli import specs_from_config
        specs = specs_from_config(config)
    app = FastAPI(title="toddler session API", docs_url=None, redoc_url=None)
    store_box = {"store": None}

    def store():
        if store_box["store"] is None:
            dens = denoisers
            if dens is None:
                dens = []
                for spec in specs:
                    path = os.path.join(ckpt_dir, f"stage{spec.index}.ckpt")
                    if not os.path.exists(path):
                        raise ApiError(409, f"missing checkpoint {path}")
                    dens.append(Denoiser.from_checkpoint(load_checkpoint(path)))
            store_box["store"] = SessionStore(specs, dens, sessions_dir,
                                              max_sessions)
        return store_box["store"]

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"detail": exc.detail})

    @app.get("/spec")
    def get_spec():
        return SPEC_DOC

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        try:
            body = await request.json()
        except Exception as e:
            raise ApiError(400, "body must be JSON") from e
        if not isinstance(body, dict) or "seed" not in body:
            raise ApiError(400, "seed is required")
        allowed = {"pipeline", "seed", "steps", "trunc_s"}
        unknown = set(body) - allowed
        if unknown:
            raise ApiError(400, f"unknown keys {sorted(unknown)}")
        if not isinstance(body["seed"], int):
            raise ApiError(400, "seed must be an integer")
        n_stages = body.get("pipeline", len(specs))
        if n_stages != len(specs):
            raise ApiError(400, f"service is configured for a "
                                f"{len(specs)}-stage pipeline")
        st = store()
        sampler = pipeline.SamplerConfig(
            seed=body["seed"], steps=body.get("steps"),
            trunc_s=body.get("trunc_s", 0))
        try:
            session = st.create(sampler)
        except ValueError as e:
            raise ApiError(400, str(e)) from e
        return {"id": session.session_id}

    def _get(sid):
        return store().get(sid)

    def _stage_index(session, j):
        if not (1 <= j <= session.n_stages):
            raise ApiError(404, f"no stage {j}")
        return j

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return _resource(_get(sid))

    @app.post("/sessions/{sid}/stages/{j}/run")
    def run_stage(sid: str, j: int):
        st = store()
        session = st.get(sid)
        with st.lock(sid):
            j = _stage_index(session, j)
            if len(session.x_inter) >= j:
                return {"status": _status(session)}  # idempotent rerun
            if len(session.x_inter) != j - 1:
                raise ApiError(409, f"stages 1..{j - 1} must run first")
            pipeline.run_stage_index(session, st.denoisers[j - 1], j)
            st.persist(session)
        return {"status": _status(session)}

    @app.get("/sessions/{sid}/stages/{j}/output")
    def get_output(sid: str, j: int, format: str = Query("png")):
        session = _get(sid)
        j = _stage_index(session, j)
        if len(session.x_inter) < j:
            raise ApiError(409, f"stage {j} has not been run")
        arr = session.x_inter[j - 1][0]
        if format == "json":
            return {"shape": list(arr.shape),
                    "data": [float(v) for v in arr.reshape(-1)]}
        if format != "png":
            raise ApiError(400, "format must be png or json")
        return Response(content=_png_bytes(arr), media_type="image/png")

    @app.put("/sessions/{sid}/stages/{j}/output")
    async def put_output(sid: str, j: int, request: Request):
        st = store()
        session = st.get(sid)
        with st.lock(sid):
            j = _stage_index(session, j)
            try:
                body = await request.json()
            except Exception as e:
                raise ApiError(400, "body must be JSON") from e
            if "png_base64" not in body:
                raise ApiError(400, "png_base64 is required")
            spec = session.specs[j - 1]
            arr = _decode_png(body["png_base64"], spec.channels)
            if arr.shape[:2] != (session.canvas, session.canvas):
                raise ApiError(400, f"expected {session.canvas}x"
                                    f"{session.canvas}, got {arr.shape[:2]}")
            try:
                # apply the edit without rerunning; downstream goes pending
                pipeline.resume_from_edit(session, None, j, arr)
            except ValueError as e:
                raise ApiError(400, str(e)) from e
            st.persist(session)
        return {"status": _status(session)}

    @app.post("/sessions/{sid}/resume")
    def resume(sid: str):
        st = store()
        session = st.get(sid)
        with st.lock(sid):
            done = len(session.x_inter)
            if done == 0 or done == session.n_stages:
                raise ApiError(409, "nothing pending")
            for i in range(done + 1, session.n_stages + 1):
                pipeline.run_stage_index(session, st.denoisers[i - 1], i)
            st.persist(session)
        return {"stages_rerun": session.n_stages - done,
                "status": _status(session)}

    if frontend_dir and os.path.isdir(frontend_dir):
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="studio")
    return app
