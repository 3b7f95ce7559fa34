"""HTTP inference service: session-scoped scene encoding, latent-conditioned
rendering to PNG, and model/PCA metadata for the explorer UI."""

from __future__ import annotations

import base64
import io
import itertools
import json
import threading
import time
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image as PilImage

from . import autodiff as ad
from .analysis import PcaModel, png_bytes
from .model import SceneModel, load_checkpoint, params_digest, take_half
from .scenegen import GenConfig, generate_scene

DEFAULT_CAPACITY = 64
DEFAULT_TTL_SECONDS = 30 * 60
NUM_INPUT_VIEWS = 5
MAX_RENDER_SIDE = 512


@dataclass
class SessionState:
    """One encoded scene; the token set is computed once and never mutated."""

    session_id: str
    slsr: object
    input_images: np.ndarray  # [5, H, W, 3] float32
    base_latents: np.ndarray  # [5, latent_pose_dim] float32
    last_access: float = 0.0


class SessionCache:
    """LRU of sessions with an idle TTL; all mutation under one lock.

    Eviction only drops the cache's reference — a render that already
    fetched its session keeps working on the immutable state.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY,
                 ttl_seconds: float = DEFAULT_TTL_SECONDS, clock=time.monotonic):
        self.capacity = capacity
        self.ttl_seconds = ttl_seconds
        self.clock = clock
        self._lock = threading.Lock()
        self._sessions: OrderedDict[str, SessionState] = OrderedDict()
        self._ids = itertools.count(1)

    def new_id(self) -> str:
        # Sequential ids keep identical request sequences byte-reproducible.
        return f"s{next(self._ids):06d}"

    def put(self, state: SessionState) -> None:
        with self._lock:
            state.last_access = self.clock()
            self._sessions[state.session_id] = state
            self._sessions.move_to_end(state.session_id)
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)

    def get(self, session_id: str) -> SessionState | None:
        with self._lock:
            state = self._sessions.get(session_id)
            if state is None:
                return None
            now = self.clock()
            if now - state.last_access > self.ttl_seconds:
                del self._sessions[session_id]
                return None
            state.last_access = now
            self._sessions.move_to_end(session_id)
            return state

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def _error(status: int, detail: str) -> JSONResponse:
    return JSONResponse({"detail": detail}, status_code=status)


def _decode_png_b64(text: str) -> np.ndarray:
    raw = base64.b64decode(text, validate=True)
    with PilImage.open(io.BytesIO(raw)) as img:
        rgb = np.asarray(img.convert("RGB"), np.float32) / 255.0
    return rgb


def create_app(model: SceneModel | None, pca: PcaModel | None = None, *,
               capacity: int = DEFAULT_CAPACITY, ttl_seconds: float = DEFAULT_TTL_SECONDS,
               clock=time.monotonic, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="latentnvs")
    cache = SessionCache(capacity=capacity, ttl_seconds=ttl_seconds, clock=clock)
    app.state.model = model
    app.state.pca = pca
    app.state.cache = cache
    app.state.checkpoint_hash = params_digest(model.params()) if model is not None else None
    pca_json = json.loads(pca.to_json()) if pca is not None else None

    def _encode_session(images: np.ndarray) -> SessionState:
        with ad.no_grad():
            slsr = model.encode_views(images[None])
            halves = take_half(images, "left")[None]
            base = model.estimate_pose(halves, slsr).data[0]
        state = SessionState(
            session_id=cache.new_id(), slsr=slsr,
            input_images=images, base_latents=base,
        )
        cache.put(state)
        return state

    @app.post("/v1/sessions")
    async def create_session(request: Request):
        if model is None:
            return _error(503, "model not loaded")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        seed = body.get("scene_seed")
        images_b64 = body.get("images")
        if (seed is None) == (images_b64 is None):
            return _error(400, "provide exactly one of scene_seed or images")
        h, w = model.cfg.image_height, model.cfg.image_width
        if seed is not None:
            if not isinstance(seed, int) or isinstance(seed, bool):
                return _error(400, "scene_seed must be an integer")
            scene = generate_scene(seed, GenConfig(height=h, width=w))
            images = scene.input_images
        else:
            if not isinstance(images_b64, list) or len(images_b64) != NUM_INPUT_VIEWS:
                return _error(400, f"images must be a list of exactly {NUM_INPUT_VIEWS} PNGs")
            decoded = []
            for i, item in enumerate(images_b64):
                try:
                    img = _decode_png_b64(item)
                except Exception:
                    return _error(400, f"images[{i}] is not a decodable base64 PNG")
                if img.shape != (h, w, 3):
                    return _error(
                        400, f"images[{i}] has shape {img.shape[:2]}, expected {(h, w)}"
                    )
                decoded.append(img)
            images = np.stack(decoded)
        state = _encode_session(np.ascontiguousarray(images, np.float32))
        payload = {
            "session_id": state.session_id,
            "input_view_urls": [
                f"/v1/sessions/{state.session_id}/views/{i}"
                for i in range(NUM_INPUT_VIEWS)
            ],
            "base_latents": [[float(v) for v in row] for row in state.base_latents],
        }
        if pca_json is not None:
            payload["pca"] = pca_json
        return JSONResponse(payload)

    @app.get("/v1/sessions/{session_id}/views/{index}")
    def get_view(session_id: str, index: int):
        state = cache.get(session_id)
        if state is None:
            return _error(404, f"unknown session {session_id!r}")
        if not 0 <= index < NUM_INPUT_VIEWS:
            return _error(404, f"view index {index} out of range")
        return Response(png_bytes(state.input_images[index]), media_type="image/png")

    @app.post("/v1/sessions/{session_id}/render")
    async def render(session_id: str, request: Request):
        if model is None:
            return _error(503, "model not loaded")
        state = cache.get(session_id)
        if state is None:
            return _error(404, f"unknown session {session_id!r}")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body must be JSON")
        if not isinstance(body, dict):
            return _error(400, "request body must be a JSON object")
        latent = body.get("latent")
        pose_dim = model.cfg.latent_pose_dim
        if not isinstance(latent, list) or len(latent) != pose_dim:
            return _error(422, f"latent must be a list of {pose_dim} numbers")
        try:
            pose = np.asarray(latent, np.float32)
        except (TypeError, ValueError):
            return _error(422, f"latent must be a list of {pose_dim} numbers")
        if pose.shape != (pose_dim,) or not np.all(np.isfinite(pose)):
            return _error(422, f"latent must be {pose_dim} finite numbers")
        height = body.get("height", model.cfg.image_height)
        width = body.get("width", model.cfg.image_width)
        for name, value in (("height", height), ("width", width)):
            if not isinstance(value, int) or isinstance(value, bool) \
                    or not 1 <= value <= MAX_RENDER_SIDE:
                return _error(422, f"{name} must be an integer in [1, {MAX_RENDER_SIDE}]")
        image = model.render_image(pose, state.slsr, height, width)
        # Echo the float32 latent actually rendered so clients can pair each
        # displayed frame with its exact pose (JSON array, header-sized).
        echo = json.dumps([float(v) for v in pose.tolist()])
        return Response(png_bytes(image), media_type="image/png",
                        headers={"x-latent-echo": echo})

    @app.get("/v1/model")
    def model_info():
        if model is None:
            return _error(503, "model not loaded")
        return JSONResponse({
            "config": json.loads(model.cfg.to_json()),
            "checkpoint_hash": app.state.checkpoint_hash,
            "pca": pca is not None,
        })

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="static")

    return app


def load_app(checkpoint_path: str, pca_path: str | None = None, *,
             static_dir: str | None = None) -> FastAPI:
    """Build the service around a checkpoint file (and optional fitted PCA)."""
    model, _, _ = load_checkpoint(checkpoint_path)
    pca = None
    if pca_path is not None:
        with open(pca_path) as f:
            pca = PcaModel.from_json(f.read())
    return create_app(model, pca, static_dir=static_dir)


def run_server(checkpoint_path: str, pca_path: str | None = None, *,
               host: str = "127.0.0.1", port: int = 8080,
               static_dir: str | None = None) -> None:
    import uvicorn

    app = load_app(checkpoint_path, pca_path, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port)
