"""Latent-pose analysis: collection, PCA, correlations, traversals, and a
readout that regresses explicit relative camera positions from frozen latents."""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PilImage

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .model import CheckpointError, SceneModel, params_digest, take_half
from .training import NanLossError, TrainConfig, lr_at, psnr as scalar_psnr

# Spawn-key stream for readout init and pair sampling; keeps the readout's
# randomness disjoint from scene/camera/init/data streams at equal seeds.
_READOUT_STREAM = 5

_COLLECT_BATCH = 8


# -- latent collection --------------------------------------------------


@dataclass
class LatentPoseSample:
    """One estimated latent pose plus camera attributes recomputed from the
    stored ground-truth pose (height = z, radius = |position|, azimuths from
    atan2; azimuth_rel is measured against input camera 0)."""

    latent: np.ndarray  # [latent_pose_dim] float32
    truth: dict  # height, radius, azimuth_rel, azimuth_abs
    scene_id: int
    target_index: int


def _wrap_angle(a: float) -> float:
    """Map to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def _camera_truth(cam, ref_cam) -> dict:
    x, y, z = (float(v) for v in cam.position)
    azimuth_abs = math.atan2(y, x)
    ref_azimuth = math.atan2(float(ref_cam.position[1]), float(ref_cam.position[0]))
    return {
        "height": z,
        "radius": cam.radius,
        "azimuth_abs": azimuth_abs,
        "azimuth_rel": _wrap_angle(azimuth_abs - ref_azimuth),
    }


def collect_latents(model: SceneModel, scenes: list) -> list:
    """One LatentPoseSample per (scene, target); left halves feed the estimator."""
    samples = []
    with ad.no_grad():
        for start in range(0, len(scenes), _COLLECT_BATCH):
            chunk = scenes[start : start + _COLLECT_BATCH]
            images = np.stack([s.input_images for s in chunk])
            slsr = model.encode_views(images)
            halves = np.stack(
                [[take_half(t, "left") for t in s.target_images] for s in chunk]
            )
            latents = model.estimate_pose(halves, slsr).data
            for bi, scene in enumerate(chunk):
                for ti, cam in enumerate(scene.target_cams):
                    samples.append(
                        LatentPoseSample(
                            latent=latents[bi, ti].copy(),
                            truth=_camera_truth(cam, scene.input_cams[0]),
                            scene_id=scene.seed,
                            target_index=ti,
                        )
                    )
    return samples


# -- PCA ----------------------------------------------------------------


@dataclass
class PcaModel:
    """Mean + top-k orthonormal components (rows) in descending variance order."""

    mean: np.ndarray  # [d] float64
    components: np.ndarray  # [k, d] float64, rows orthonormal
    explained_variance: np.ndarray  # [k] float64, non-increasing, >= 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean.tolist(),
                "components": self.components.tolist(),
                "explained_variance": self.explained_variance.tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "PcaModel":
        raw = json.loads(text)
        return cls(
            mean=np.asarray(raw["mean"], np.float64),
            components=np.asarray(raw["components"], np.float64),
            explained_variance=np.asarray(raw["explained_variance"], np.float64),
        )


def _latent_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        mat = np.asarray(samples, np.float64)
    else:
        mat = np.stack([np.asarray(s.latent, np.float64) for s in samples])
    if mat.ndim != 2:
        raise ValueError(f"expected [n, d] samples, got shape {mat.shape}")
    return mat


def fit_pca(samples, k: int) -> PcaModel:
    """Top-k eigenvectors of the sample covariance, in double precision.

    Sign convention: the first nonzero coordinate of every component is
    positive, so refits of the same data agree exactly.
    """
    x = _latent_matrix(samples)
    n, d = x.shape
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must be between 1 and the latent dimension {d}")
    if n < k + 1:
        raise ValueError(f"fitting {k} components needs at least {k + 1} samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    variances, vectors = np.linalg.eigh(cov)  # ascending
    order = np.argsort(variances)[::-1][:k]
    components = vectors[:, order].T.copy()
    for row in components:
        nonzero = np.nonzero(row)[0]
        if nonzero.size and row[nonzero[0]] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=np.clip(variances[order], 0.0, None),
    )


def project(pca: PcaModel, latent) -> np.ndarray:
    """[..., d] latents -> [..., k] component scores."""
    x = np.asarray(latent, np.float64)
    return (x - pca.mean) @ pca.components.T


def unproject(pca: PcaModel, scores) -> np.ndarray:
    """[..., k] component scores -> [..., d] latents (inverse of project)."""
    s = np.asarray(scores, np.float64)
    return s @ pca.components + pca.mean


# -- correlation --------------------------------------------------------

UNDEFINED_R = None  # marker for a zero-variance column

CORRELATION_ATTRIBUTES = (
    "height",
    "radius",
    "azimuth_rel_sin",
    "azimuth_rel_cos",
    "azimuth_abs_sin",
    "azimuth_abs_cos",
)


def pearson_r(x: np.ndarray, y: np.ndarray):
    """Pearson correlation, or the undefined marker if either side is constant."""
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return UNDEFINED_R
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _attribute_columns(samples) -> dict:
    truth = {key: np.array([s.truth[key] for s in samples], np.float64)
             for key in ("height", "radius", "azimuth_rel", "azimuth_abs")}
    cols = {"height": truth["height"], "radius": truth["radius"]}
    # Azimuths are circular: correlate against sin/cos channels instead of
    # the raw angle, which has a wrap-around discontinuity.
    for key in ("azimuth_rel", "azimuth_abs"):
        cols[f"{key}_sin"] = np.sin(truth[key])
        cols[f"{key}_cos"] = np.cos(truth[key])
    return cols


def correlate(samples: list, pca: PcaModel) -> list:
    """Pearson r per (component, camera attribute); one row dict per component."""
    if len(samples) < 3:
        raise ValueError(f"correlation needs at least 3 samples, got {len(samples)}")
    scores = project(pca, np.stack([s.latent for s in samples]))
    cols = _attribute_columns(samples)
    rows = []
    for ci in range(pca.components.shape[0]):
        row = {"component": ci}
        for name in CORRELATION_ATTRIBUTES:
            row[name] = pearson_r(scores[:, ci], cols[name])
        rows.append(row)
    return rows


def correlation_csv(rows: list) -> str:
    header = ("component",) + CORRELATION_ATTRIBUTES
    lines = [",".join(header)]
    for row in rows:
        cells = [str(row["component"])]
        for name in CORRELATION_ATTRIBUTES:
            r = row[name]
            cells.append("undefined" if r is UNDEFINED_R else f"{r:.6f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# -- traversals ---------------------------------------------------------


def traverse(model: SceneModel, slsr, base, direction, steps: int, span: float) -> list:
    """Render at base + t * direction for t linearly spaced in [-span, +span]."""
    if steps < 2:
        raise ValueError(f"a traversal needs at least 2 steps, got {steps}")
    base = np.asarray(base, np.float32).ravel()
    direction = np.asarray(direction, np.float32).ravel()
    h, w = model.cfg.image_height, model.cfg.image_width
    frames = []
    for t in np.linspace(-span, span, steps):
        pose = (base + np.float32(t) * direction).astype(np.float32)
        frames.append(model.render_image(pose, slsr, h, w))
    return frames


def png_bytes(image: np.ndarray) -> bytes:
    """[H, W, 3] floats in [0, 1] -> 8-bit RGB PNG bytes (deterministic)."""
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PilImage.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_traversal(frames: list, out_dir: str) -> dict:
    """Write per-frame PNGs plus a horizontal strip; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(frames):
        path = os.path.join(out_dir, f"frame_{i:03d}.png")
        with open(path, "wb") as f:
            f.write(png_bytes(frame))
        paths.append(path)
    strip_path = os.path.join(out_dir, "strip.png")
    with open(strip_path, "wb") as f:
        f.write(png_bytes(np.concatenate(frames, axis=1)))
    return {"frames": paths, "strip": strip_path}


# -- PSNR ---------------------------------------------------------------


def psnr(pred: np.ndarray, truth: np.ndarray) -> float:
    """-10 log10(MSE) over two same-shape regions in [0, 1]; capped at 99 dB."""
    pred = np.asarray(pred, np.float64)
    truth = np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    diff = pred - truth
    return scalar_psnr(float(np.mean(diff * diff)))


# -- explicit-pose readout on a frozen backbone -------------------------


@dataclass
class EpeConfig:
    """Readout that regresses the position difference between two targets.

    Widths follow the backbone (d_model / d_ff); the query is the projected
    concatenation of the two latent poses, cross-attending into the token set.
    """

    layers: int = 2
    heads: int = 4
    steps: int = 5_000
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_steps: int = 250
    seed: int = 0
    log_every: int = 100

    def validate(self) -> None:
        if self.layers < 1 or self.heads < 1:
            raise ValueError("layers and heads must be >= 1")
        if self.steps < 0 or self.warmup_steps < 0:
            raise ValueError("steps and warmup_steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size={self.batch_size} must be >= 1")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr={self.base_lr} must be > 0")


class EpeReadout:
    """Dense(2 x latent pose -> d) + cross-attention blocks + MLP head -> delta position.

    The backbone stays frozen: its outputs enter the readout graph as
    constants, so its parameters can never receive gradient here.
    """

    def __init__(self, backbone: SceneModel, cfg: EpeConfig, init_seed: int | None = None):
        if backbone.cfg.conditioning != "latent":
            raise ValueError(
                f"the readout needs a latent-conditioned backbone, got {backbone.cfg.conditioning!r}"
            )
        cfg.validate()
        d, ff = backbone.cfg.d_model, backbone.cfg.d_ff
        if d % cfg.heads:
            raise ValueError(f"d_model={d} is not divisible by heads={cfg.heads}")
        self.backbone = backbone
        self.cfg = cfg
        self.backbone_digest = params_digest(backbone.params())
        rng = np.random.default_rng(
            np.random.SeedSequence(
                entropy=cfg.seed if init_seed is None else init_seed,
                spawn_key=(_READOUT_STREAM, 0),
            )
        )
        pose_dim = backbone.cfg.latent_pose_dim
        self.query_proj = nn.Linear(rng, 2 * pose_dim, d)
        self.blocks = [
            nn.CrossAttentionBlock(rng, d, ff, cfg.heads) for _ in range(cfg.layers)
        ]
        self.ln_out = nn.LayerNorm(d)
        self.head = nn.Mlp(rng, d, d, 3)  # single hidden layer, backbone width

    def params(self) -> dict:
        out = nn.prefixed("query_proj", self.query_proj.params())
        for i, block in enumerate(self.blocks):
            out.update(nn.prefixed(f"block{i}", block.params()))
        out.update(nn.prefixed("ln_out", self.ln_out.params()))
        out.update(nn.prefixed("head", self.head.params()))
        return out

    def _forward(self, pairs: Tensor, memory: Tensor) -> Tensor:
        """[B, 2P] latent-pose pairs + [B, T, d] tokens -> [B, 3] deltas."""
        b = pairs.shape[0]
        x = self.query_proj(ad.reshape(pairs, (b, 1, pairs.shape[-1])))
        for block in self.blocks:
            x = block(x, memory)
        x = self.head(self.ln_out(x))
        return ad.reshape(x, (b, 3))

    def predict(self, tokens: np.ndarray, ref_latents: np.ndarray,
                target_latents: np.ndarray) -> np.ndarray:
        """No-grad delta-position prediction for a batch of (reference, target) pairs."""
        pairs = np.concatenate(
            [np.asarray(ref_latents, np.float32), np.asarray(target_latents, np.float32)],
            axis=-1,
        )
        with ad.no_grad():
            out = self._forward(Tensor(pairs), Tensor(np.asarray(tokens, np.float32)))
        return out.data

    # -- persistence ----------------------------------------------------

    def save(self, path: str) -> None:
        params = self.params()
        arrays = {name: p.data for name, p in params.items()}
        arrays["__meta__"] = np.frombuffer(
            json.dumps(
                {"cfg": self.cfg.__dict__, "backbone_digest": self.backbone_digest}
            ).encode(),
            dtype=np.uint8,
        )
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path: str, backbone: SceneModel) -> "EpeReadout":
        with np.load(path) as bundle:
            meta = json.loads(bytes(bundle["__meta__"]).decode())
            readout = cls(backbone, EpeConfig(**meta["cfg"]))
            if readout.backbone_digest != meta["backbone_digest"]:
                raise CheckpointError(
                    "readout was trained on a different backbone "
                    f"(digest {meta['backbone_digest'][:12]}; got {readout.backbone_digest[:12]})"
                )
            for name, p in readout.params().items():
                stored = bundle[name]
                if stored.shape != p.data.shape:
                    raise CheckpointError(
                        f"readout parameter {name}: stored shape {stored.shape} "
                        f"!= expected {p.data.shape}"
                    )
                p.data = stored.astype(np.float32)
        return readout


def _scene_features(model: SceneModel, scenes: list, batch: int = _COLLECT_BATCH):
    """Frozen-backbone features: tokens [N, T, d], latents [N, 3, P], positions [N, 3, 3]."""
    tokens, latents = [], []
    with ad.no_grad():
        for start in range(0, len(scenes), batch):
            chunk = scenes[start : start + batch]
            images = np.stack([s.input_images for s in chunk])
            slsr = model.encode_views(images)
            halves = np.stack(
                [[take_half(t, "left") for t in s.target_images] for s in chunk]
            )
            tokens.append(slsr.tokens.data)
            latents.append(model.estimate_pose(halves, slsr).data)
    positions = np.stack(
        [[cam.position for cam in s.target_cams] for s in scenes]
    ).astype(np.float64)
    return np.concatenate(tokens), np.concatenate(latents), positions


def _check_backbone_untouched(readout: EpeReadout, digest_before: str) -> None:
    for name, p in readout.backbone.params().items():
        if p.grad is not None and np.any(p.grad):
            raise RuntimeError(f"backbone parameter {name} received gradient during readout training")
    digest_after = params_digest(readout.backbone.params())
    if digest_after != digest_before:
        raise RuntimeError("backbone parameters changed during readout training")


def train_epe(backbone: SceneModel, scenes: list, epe_cfg: EpeConfig,
              metrics_path: str | None = None) -> EpeReadout:
    """Fit the readout on (reference, target) pairs drawn from each scene's targets.

    The truth is the camera-origin difference, target minus reference.
    """
    if not scenes:
        raise ValueError("readout training needs at least one scene")
    readout = EpeReadout(backbone, epe_cfg)
    digest_before = readout.backbone_digest
    tokens, latents, positions = _scene_features(backbone, scenes)
    positions = positions.astype(np.float32)
    n_targets = latents.shape[1]

    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=epe_cfg.seed, spawn_key=(_READOUT_STREAM, 1))
    )
    params = readout.params()
    optimizer = nn.Adam()
    schedule = TrainConfig(
        steps=epe_cfg.steps, base_lr=epe_cfg.base_lr, warmup_steps=epe_cfg.warmup_steps
    )
    sink = open(metrics_path, "a") if metrics_path else None
    try:
        for step in range(epe_cfg.steps):
            scene_idx = rng.integers(0, len(scenes), epe_cfg.batch_size)
            ref_idx = rng.integers(0, n_targets, epe_cfg.batch_size)
            # Offset in [1, n_targets) guarantees target != reference.
            tgt_idx = (ref_idx + rng.integers(1, n_targets, epe_cfg.batch_size)) % n_targets
            pairs = np.concatenate(
                [latents[scene_idx, ref_idx], latents[scene_idx, tgt_idx]], axis=-1
            )
            truth = positions[scene_idx, tgt_idx] - positions[scene_idx, ref_idx]
            pred = readout._forward(Tensor(pairs), Tensor(tokens[scene_idx]))
            loss = ad.mse(pred, truth)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NanLossError(f"readout loss became non-finite at step {step}")
            loss.backward()
            optimizer.step(params, lr_at(step, schedule))
            nn.zero_grads(params)
            if sink and (step % epe_cfg.log_every == 0 or step + 1 == epe_cfg.steps):
                sink.write(json.dumps({"step": step, "loss": value}) + "\n")
    finally:
        if sink:
            sink.close()
    _check_backbone_untouched(readout, digest_before)
    return readout


def eval_epe(readout: EpeReadout, scenes: list, batch: int = 64) -> dict:
    """MSE and pooled R^2 (percent) over every ordered target pair of every scene."""
    if not scenes:
        raise ValueError("readout evaluation needs at least one scene")
    tokens, latents, positions = _scene_features(readout.backbone, scenes)
    n_targets = latents.shape[1]
    scene_idx, ref_idx, tgt_idx = [], [], []
    for si in range(len(scenes)):
        for ri in range(n_targets):
            for ti in range(n_targets):
                if ri != ti:
                    scene_idx.append(si)
                    ref_idx.append(ri)
                    tgt_idx.append(ti)
    scene_idx = np.asarray(scene_idx)
    ref_idx = np.asarray(ref_idx)
    tgt_idx = np.asarray(tgt_idx)
    truth = (positions[scene_idx, tgt_idx] - positions[scene_idx, ref_idx]).astype(np.float64)
    preds = np.concatenate(
        [
            readout.predict(
                tokens[scene_idx[s : s + batch]],
                latents[scene_idx[s : s + batch], ref_idx[s : s + batch]],
                latents[scene_idx[s : s + batch], tgt_idx[s : s + batch]],
            )
            for s in range(0, len(scene_idx), batch)
        ]
    ).astype(np.float64)
    residuals = (preds - truth).ravel()
    pooled = truth.ravel()
    ss_res = float(residuals @ residuals)
    centered = pooled - pooled.mean()
    ss_tot = float(centered @ centered)
    mse = ss_res / residuals.size
    r2 = 100.0 * (1.0 - ss_res / ss_tot) if ss_tot > 0 else (100.0 if ss_res == 0 else 0.0)
    return {"mse": mse, "r2": r2, "pairs": int(len(scene_idx))}
