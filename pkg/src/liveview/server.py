"""Streaming render service.

HTTP: GET /health, GET /info, POST /select_planes.
Websocket /stream: JSON pose messages in, binary frames out. Each frame is
a 24-byte header of little-endian uint32s (seq, width, height, render_ms,
planes_used, flags) followed by the raw RGB8 payload (flags bit 0: pose was
clamped to the rig hull; bit 1: payload is PNG-encoded instead of raw).

Pose handling is latest-wins: each session owns a capacity-one mailbox that
newer poses overwrite, so the response stream is always a subsequence of
the request stream in seq order.
"""

from __future__ import annotations

import asyncio
import io
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from .geometry import Camera, equidisparity_planes, look_at_rotation
from .mpi import select_planes
from .network import LiveViewNet, opx_count, param_count
from .render import render_image
from .scenes import SceneConfig, generate_scene, load_scene, render_ground_truth, rig_cameras

FRAME_HEADER = struct.Struct("<6I")
FLAG_CLAMPED = 1
FLAG_PNG = 2


@dataclass
class ServiceState:
    net: LiveViewNet
    views: list
    cams: list
    planes: object                 # full PlaneSet (D entries)
    scene_meta: dict
    reference_alpha: np.ndarray | None = None
    selection: np.ndarray | None = None   # indices into planes, or None for full D
    max_sessions: int = 4
    sessions: int = 0
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)

    @property
    def hull_lo(self):
        return np.min([c.c for c in self.cams], axis=0)

    @property
    def hull_hi(self):
        return np.max([c.c for c in self.cams], axis=0)


def _make_target(state: ServiceState, c, look_at, up):
    base = state.cams[0]
    c = np.asarray(c, dtype=np.float64)
    clamped = np.clip(c, state.hull_lo, state.hull_hi)
    was_clamped = bool(np.any(clamped != c))
    R = look_at_rotation(clamped, look_at, up)
    return Camera(fx=base.fx, fy=base.fy, cx=base.cx, cy=base.cy,
                  width=base.width, height=base.height, R=R, c=clamped), was_clamped


def _parse_pose(text: str, state: ServiceState):
    msg = json.loads(text)
    seq = int(msg["seq"])
    c = [float(v) for v in msg["c"]]
    if len(c) != 3:
        raise ValueError("'c' must have 3 components")
    default_look = [c[0], c[1], c[2] + 1.0]
    look_at = [float(v) for v in msg.get("look_at", default_look)]
    up = [float(v) for v in msg.get("up", [0.0, 1.0, 0.0])]
    k = msg.get("k_planes")
    if k is not None:
        k = int(k)
        if not (1 <= k <= len(state.planes)):
            raise ValueError(f"k_planes must be in [1, {len(state.planes)}]")
    return seq, c, look_at, up, k


def _render_frame(state: ServiceState, c, look_at, up, k_planes):
    """Blocking render -> (rgb bytes, width, height, ms, planes_used, clamped)."""
    target, clamped = _make_target(state, c, look_at, up)
    if k_planes is not None and k_planes < len(state.planes):
        if state.reference_alpha is None:
            raise ValueError("no reference frame yet; cannot select planes")
        indices = select_planes(state.reference_alpha, k_planes).indices
    elif k_planes is None and state.selection is not None:
        indices = state.selection
    else:
        indices = None
    t0 = time.perf_counter()
    img, alpha = render_image(state.net, state.views, state.cams, target,
                              state.planes, indices=indices)
    ms = (time.perf_counter() - t0) * 1000.0
    if indices is None:
        state.reference_alpha = alpha
    used = len(indices) if indices is not None else len(state.planes)
    payload = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return payload, ms, used, clamped


def build_app(checkpoint, scene_dir=None, scene_seed=0, planes=64,
              max_sessions=4) -> FastAPI:
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(app):
        _init(app)
        yield

    app = FastAPI(title="liveview render service", lifespan=lifespan)
    app.state.ready = False
    app.state.service = None

    def _init(app):
        net = LiveViewNet.load(checkpoint)
        net.eval()
        z_near = net.meta.z_near or 2.0
        z_far = net.meta.z_far or 10.0
        from .cli import _rig_for_views
        rig = _rig_for_views(net.config.num_views)
        cams = rig_cameras(rig)
        if scene_dir is not None:
            scene = load_scene(scene_dir)
            scene_meta = {"source": str(scene_dir)}
        else:
            scene = generate_scene(scene_seed, SceneConfig(z_near=z_near, z_far=z_far))
            scene_meta = {"source": "procedural", "seed": scene_seed}
        scene_meta.update({"quads": len(scene.quads),
                           "depths": [float(q.depth) for q in scene.quads]})
        views = [render_ground_truth(scene, c) for c in cams]
        state = ServiceState(net=net, views=views, cams=cams,
                             planes=equidisparity_planes(z_near, z_far, planes),
                             scene_meta=scene_meta, max_sessions=max_sessions)
        # reference frame at the rig center populates the alpha statistics
        _render_frame(state, [0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], None)
        app.state.service = state
        app.state.ready = True

    @app.get("/health")
    async def health():
        return {"status": "ok", "ready": app.state.ready}

    @app.get("/info")
    async def info():
        if not app.state.ready:
            return JSONResponse({"error": "initializing"}, status_code=503)
        s: ServiceState = app.state.service
        base = s.cams[0]
        return {"V": s.net.config.num_views, "D": len(s.planes),
                "K": len(s.selection) if s.selection is not None else len(s.planes),
                "width": base.width, "height": base.height,
                "hull": {"lo": [float(v) for v in s.hull_lo],
                         "hi": [float(v) for v in s.hull_hi]},
                "param_count": param_count(s.net.config),
                "opx": opx_count(s.net.config, len(s.planes), base.height, base.width),
                "centering": s.net.meta.centering, "scene": s.scene_meta}

    @app.post("/select_planes")
    async def select(body: dict):
        if not app.state.ready:
            return JSONResponse({"error": "initializing"}, status_code=503)
        s: ServiceState = app.state.service
        k = body.get("k")
        if not isinstance(k, int) or not (1 <= k <= len(s.planes)):
            return JSONResponse({"error": f"k must be an int in [1, {len(s.planes)}]"},
                                status_code=400)
        if s.reference_alpha is None:
            return JSONResponse({"error": "no reference frame rendered yet"},
                                status_code=409)
        if k == len(s.planes):
            s.selection = None
            depths = [float(z) for z in s.planes.depths]
        else:
            sel = select_planes(s.reference_alpha, k)
            s.selection = sel.indices
            depths = [float(s.planes.depths[i]) for i in sel.indices]
        return {"k": k, "depths": depths}

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        if not app.state.ready:
            await ws.close(code=1013)
            return
        s: ServiceState = app.state.service
        async with s.lock:
            if s.sessions >= s.max_sessions:
                await ws.close(code=1013)
                return
            s.sessions += 1
        await ws.accept()
        png_mode = ws.query_params.get("format") == "png"

        mailbox: dict = {}
        fresh = asyncio.Event()
        loop = asyncio.get_running_loop()

        async def reader():
            while True:
                text = await ws.receive_text()
                try:
                    pose = _parse_pose(text, s)
                except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
                    seq = None
                    try:
                        seq = json.loads(text).get("seq")
                    except Exception:
                        pass
                    await ws.send_json({"error": str(exc), "seq": seq})
                    continue
                mailbox["pose"] = pose
                fresh.set()

        async def worker():
            while True:
                await fresh.wait()
                fresh.clear()
                seq, c, look_at, up, k = mailbox["pose"]
                try:
                    payload, ms, used, clamped = await loop.run_in_executor(
                        None, _render_frame, s, c, look_at, up, k)
                except ValueError as exc:
                    await ws.send_json({"error": str(exc), "seq": seq})
                    continue
                flags = (FLAG_CLAMPED if clamped else 0) | (FLAG_PNG if png_mode else 0)
                h, w = payload.shape[:2]
                if png_mode:
                    from PIL import Image
                    buf = io.BytesIO()
                    Image.fromarray(payload).save(buf, format="PNG")
                    body = buf.getvalue()
                else:
                    body = payload.tobytes()
                header = FRAME_HEADER.pack(seq, w, h, int(round(ms)), used, flags)
                await ws.send_bytes(header + body)

        tasks = [asyncio.create_task(reader()), asyncio.create_task(worker())]
        try:
            done, _ = await asyncio.wait(tasks, return_when=asyncio.FIRST_COMPLETED)
            for t in done:
                exc = t.exception()
                if exc is not None and not isinstance(exc, WebSocketDisconnect):
                    raise exc
        except WebSocketDisconnect:
            pass
        finally:
            for t in tasks:
                t.cancel()
            async with s.lock:
                s.sessions -= 1

    return app
