"""Realtime serving of a finished session.

GET  /api/meta     scene stats, camera defaults, available edits
POST /api/render   JSON RenderRequest -> PNG (Server-Timing: compose/render ms)
WS   /api/stream   JSON RenderRequest deltas in; binary frames out, each
                   prefixed with the request's u32 sequence number (LE)

Controls are (edit id, u). A control at u == 0 contributes nothing, so a
request with all-zero controls returns the untouched scene byte-for-byte.
Unknown edit ids are a 404; malformed bodies are rejected by validation.
"""
from __future__ import annotations

import json
import struct
import time
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel, Field

from .core import orbit_camera
from .pipeline import SessionArtifacts, service_scene
from .renderer import image_to_png, render

MAX_IMAGE_DIM = 512


class CameraRequest(BaseModel):
    azimuth_deg: Optional[float] = None
    elevation_deg: Optional[float] = None
    radius: Optional[float] = Field(default=None, gt=0)
    fov_deg: Optional[float] = Field(default=None, gt=0, lt=180)
    width: Optional[int] = Field(default=None, ge=8, le=MAX_IMAGE_DIM)
    height: Optional[int] = Field(default=None, ge=8, le=MAX_IMAGE_DIM)


class ControlRequest(BaseModel):
    edit: str
    u: float = Field(ge=0.0, le=1.0)


class RenderRequest(BaseModel):
    camera: Optional[CameraRequest] = None
    controls: list[ControlRequest] = Field(default_factory=list)


def _camera_defaults(rig: dict) -> dict:
    return {
        "azimuth_deg": 0.0,
        "elevation_deg": rig["elevations_deg"][-1] if rig["elevations_deg"] else 0.0,
        "radius": rig["radius"],
        "fov_deg": rig["fov_deg"],
        "width": rig["width"],
        "height": rig["height"],
        "center": rig["center"],
    }


def _resolve_camera(rig: dict, req: Optional[CameraRequest]):
    d = _camera_defaults(rig)
    if req is not None:
        for k, v in req.model_dump().items():
            if v is not None:
                d[k] = v
    return orbit_camera(d["center"], d["radius"], d["azimuth_deg"], d["elevation_deg"],
                        fov_deg=d["fov_deg"], width=d["width"], height=d["height"])


def _render_png(session: SessionArtifacts, req: RenderRequest) -> tuple[bytes, float, float]:
    """(png bytes, compose ms, render ms). KeyError for unknown edits."""
    t0 = time.perf_counter()
    scene = service_scene(session, [(c.edit, c.u) for c in req.controls])
    t1 = time.perf_counter()
    cam = _resolve_camera(session.rig, req.camera)
    png = image_to_png(render(scene, cam))
    t2 = time.perf_counter()
    return png, (t1 - t0) * 1e3, (t2 - t1) * 1e3


def create_app(session: SessionArtifacts, frontend_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="splatedit", docs_url=None, redoc_url=None)

    meta = {
        "version": 1,
        "gaussians": session.scene.count,
        "background": session.scene.background.tolist(),
        "bounds": {
            "min": session.scene.bounds()[0].tolist(),
            "max": session.scene.bounds()[1].tolist(),
        },
        "camera": _camera_defaults(session.rig),
        "edits": [
            {"id": e.edit_id, "label": e.label, "region_size": e.region.count}
            for e in session.edits
        ],
    }

    @app.get("/api/meta")
    def get_meta():
        return meta

    @app.post("/api/render")
    def post_render(req: RenderRequest):
        try:
            png, compose_ms, render_ms = _render_png(session, req)
        except KeyError as e:
            raise HTTPException(status_code=404, detail=f"unknown edit: {e.args[0]}")
        return Response(
            content=png, media_type="image/png",
            headers={"Server-Timing":
                     f"compose;dur={compose_ms:.2f}, render;dur={render_ms:.2f}"})

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        state = RenderRequest()
        while True:
            try:
                raw = await ws.receive_text()
            except WebSocketDisconnect:
                return
            seq = 0
            try:
                doc = json.loads(raw)
                seq = int(doc.get("seq", 0))
                # deltas: only the fields present change the held state;
                # merge onto a trial copy so a failing update can't poison
                # the stream for every later frame
                trial = RenderRequest(camera=state.camera,
                                      controls=list(state.controls))
                if "camera" in doc:
                    cam = state.camera.model_dump() if state.camera else {}
                    cam.update({k: v for k, v in (doc["camera"] or {}).items()})
                    trial.camera = CameraRequest(**cam)
                if "controls" in doc:
                    held = {c.edit: c.u for c in state.controls}
                    for c in doc["controls"]:
                        held[str(c["edit"])] = float(c["u"])
                    trial.controls = [ControlRequest(edit=k, u=v)
                                      for k, v in held.items()]
                png, _, _ = _render_png(session, trial)
                state = trial
            except WebSocketDisconnect:
                return
            except Exception as e:
                await ws.send_json({"seq": seq, "error": str(e)})
                continue
            await ws.send_bytes(struct.pack("<I", seq) + png)

    if frontend_dir is not None:
        root = Path(frontend_dir)
        index = root / "index.html"

        @app.get("/")
        def home():
            if index.exists():
                return FileResponse(index)
            raise HTTPException(status_code=404)

        @app.get("/{asset_path:path}")
        def asset(asset_path: str):
            p = (root / asset_path).resolve()
            if root.resolve() in p.parents and p.is_file():
                return FileResponse(p)
            raise HTTPException(status_code=404)

    return app


def serve(session_dir: str | Path, host: str = "127.0.0.1", port: int = 8000,
          frontend_dir: str | Path | None = None) -> None:
    import uvicorn

    session = SessionArtifacts.load(session_dir)
    uvicorn.run(create_app(session, frontend_dir), host=host, port=port,
                log_level="warning")
