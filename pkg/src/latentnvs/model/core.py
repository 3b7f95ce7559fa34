"""Model bundle (encoder + pose estimator + decoder) and checkpoint IO."""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from .config import ModelConfig
from .decoder import PixelDecoder, pixel_grid
from .encoder import Slsr, ViewEncoder
from .pose import PoseEstimator

_INIT_STREAM = 2  # spawn key reserved for weight init

_MAGIC = b"LNVS"
_FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable, mismatched, or truncated checkpoint files."""


class SceneModel:
    """The full model; which pieces exist depends on the conditioning mode."""

    def __init__(self, cfg: ModelConfig, init_seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=init_seed, spawn_key=(_INIT_STREAM,))
        )
        self.encoder = ViewEncoder(rng, cfg)
        self.pose_estimator = (
            PoseEstimator(rng, cfg) if cfg.conditioning == "latent" else None
        )
        self.decoder = PixelDecoder(rng, cfg)

    def params(self) -> dict:
        out = nn.prefixed("encoder", self.encoder.params())
        if self.pose_estimator is not None:
            out.update(nn.prefixed("pose", self.pose_estimator.params()))
        out.update(nn.prefixed("decoder", self.decoder.params()))
        return out

    # -- forward pieces ------------------------------------------------

    def encode_views(self, images) -> Slsr:
        """[B, V, H, W, 3] (or [V, H, W, 3]) images -> joint token set."""
        if not isinstance(images, Tensor):
            images = Tensor(np.ascontiguousarray(images, np.float32))
        if images.data.ndim == 4:
            images = ad.reshape(images, (1,) + images.shape)
        if images.data.ndim != 5:
            raise ValueError(f"expected [B, V, H, W, 3] images, got shape {images.shape}")
        return self.encoder(images)

    def estimate_pose(self, halves, slsr: Slsr) -> Tensor:
        """[B, K, H, W/2, 3] target halves -> [B, K, latent_pose_dim].

        K is the number of targets per scene; the reference-view tokens
        are repeated per target so gradients flow back through every use.
        """
        if self.pose_estimator is None:
            raise ValueError(f"conditioning={self.cfg.conditioning!r} has no pose estimator")
        if not isinstance(halves, Tensor):
            halves = Tensor(np.ascontiguousarray(halves, np.float32))
        b, k = halves.shape[:2]
        ref = slsr.first_view_tokens()  # [B, n0, d]
        n0 = ref.shape[1]
        ref = ad.reshape(ad.repeat_new_axis(ref, k, 1), (b * k, n0, self.cfg.d_model))
        flat = ad.reshape(halves, (b * k,) + tuple(halves.shape[2:]))
        latent = self.pose_estimator(flat, ref)
        return ad.reshape(latent, (b, k, self.cfg.latent_pose_dim))

    def decode_targets(self, pose_vecs: Tensor, slsr: Slsr, xys: np.ndarray) -> Tensor:
        """[B, K, P] per-target pose vectors + [Q, 2] pixels -> [B, K, Q, 3].

        All K targets of a scene share one query axis so the scene's
        tokens are projected to keys/values once.
        """
        b, k, p = pose_vecs.shape
        q = xys.shape[0]
        queries = ad.reshape(ad.repeat_new_axis(pose_vecs, q, 2), (b, k * q, p))
        xy_tile = np.ascontiguousarray(np.tile(np.asarray(xys, np.float32), (b, k, 1)))
        queries = ad.concat([queries, Tensor(xy_tile)], axis=-1)
        rgb = self.decoder(queries, slsr.tokens)
        return ad.reshape(rgb, (b, k, q, 3))

    # -- inference-only entry points ------------------------------------

    def _single_scene_tokens(self, slsr: Slsr) -> np.ndarray:
        tokens = slsr.tokens.data
        if tokens.ndim != 3 or tokens.shape[0] != 1:
            raise ValueError(f"expected a single scene's tokens, got shape {tokens.shape}")
        return tokens[0]

    def render_image(self, query_pose, slsr: Slsr, height: int, width: int) -> np.ndarray:
        """Decode every pixel of an H x W grid; [H, W, 3] float32 in (0,1)."""
        tokens = self._single_scene_tokens(slsr)
        grid = pixel_grid(height, width)
        out = self.decoder.decode_chunked(query_pose, tokens, grid)
        return out.reshape(height, width, 3)

    def decode_pixel(self, query_pose, xy, slsr: Slsr) -> np.ndarray:
        """Decode one (x, y) in [0,1]^2; identical to the same pixel of a full render."""
        tokens = self._single_scene_tokens(slsr)
        xy = np.asarray(xy, np.float32).reshape(1, 2)
        return self.decoder.decode_chunked(query_pose, tokens, xy)[0]


def params_digest(params: dict) -> str:
    """Order-independent content hash of named parameters (hex sha256)."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name].data, np.float32).tobytes())
    return h.hexdigest()


# -- checkpoint container ---------------------------------------------
#
# Layout: b"LNVS" | u32 format version | u64 header length | header JSON |
# raw little-endian array bytes.  The header carries the config echo, the
# param index (name/shape/offset), an index of extra state arrays
# (optimizer moments etc.), and a free-form JSON meta block.


def save_checkpoint(path: str, model: SceneModel, *, arrays: dict | None = None,
                    meta: dict | None = None) -> None:
    params = model.params()
    payload = []
    offset = 0
    param_index = []
    for name in params:
        data = np.ascontiguousarray(params[name].data, np.float32)
        param_index.append({"name": name, "shape": list(data.shape), "offset": offset})
        payload.append(data.tobytes())
        offset += data.nbytes
    array_index = []
    for name in sorted(arrays or {}):
        data = np.ascontiguousarray(arrays[name])
        array_index.append(
            {"name": name, "shape": list(data.shape), "dtype": data.dtype.str, "offset": offset}
        )
        payload.append(data.tobytes())
        offset += data.nbytes
    header = json.dumps(
        {
            "config": json.loads(model.cfg.to_json()),
            "params": param_index,
            "arrays": array_index,
            "meta": meta or {},
        }
    ).encode()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _FORMAT_VERSION, len(header)))
        f.write(header)
        for chunk in payload:
            f.write(chunk)
    os.replace(tmp, path)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path: str) -> tuple[SceneModel, dict, dict]:
    """Returns (model, extra arrays, meta).  Validates names and shapes."""
    try:
        f = open(path, "rb")
    except OSError as e:
        raise CheckpointError(f"cannot open checkpoint: {e}") from e
    with f:
        if _read_exact(f, 4, "magic") != _MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        version, header_len = struct.unpack("<IQ", _read_exact(f, 12, "header sizes"))
        if version != _FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}")
        try:
            header = json.loads(_read_exact(f, header_len, "header"))
        except ValueError as e:
            raise CheckpointError(f"corrupt checkpoint header: {e}") from e
        try:
            cfg = ModelConfig.from_json(json.dumps(header["config"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"bad config in checkpoint: {e}") from e
        model = SceneModel(cfg)
        expected = model.params()
        stored = {entry["name"]: entry for entry in header.get("params", [])}
        for name, p in expected.items():
            entry = stored.pop(name, None)
            if entry is None:
                raise CheckpointError(f"checkpoint is missing tensor {name!r}")
            if tuple(entry["shape"]) != p.data.shape:
                raise CheckpointError(
                    f"tensor {name!r} has shape {tuple(entry['shape'])}, "
                    f"expected {p.data.shape}"
                )
        if stored:
            first = min(stored, key=lambda n: stored[n]["offset"])
            raise CheckpointError(f"checkpoint has unexpected tensor {first!r}")

        payload_start = 16 + header_len
        for name, p in expected.items():
            entry = next(e for e in header["params"] if e["name"] == name)
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            f.seek(payload_start + entry["offset"])
            raw = _read_exact(f, 4 * count, f"tensor {name!r}")
            p.data = np.frombuffer(raw, np.float32).reshape(entry["shape"]).copy()
        arrays = {}
        for entry in header.get("arrays", []):
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            f.seek(payload_start + entry["offset"])
            raw = _read_exact(f, dtype.itemsize * count, f"array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype).reshape(entry["shape"]).copy()
    return model, arrays, header.get("meta", {})
