"""Training loop, pose-noise regimes, evaluation, and the experiment grid."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .model import (
    ModelConfig,
    SceneModel,
    encode_absolute_pose,
    encode_relative_pose,
    load_checkpoint,
    pixel_grid,
    save_checkpoint,
)
from .model.pose import take_half
from .scenegen import CameraPose, GenConfig, SceneInstance, generate_scene, perturb_pose
from .scenegen.generate import shard_seeds

# RNG stream spawn keys (weight init uses 2 inside SceneModel).
_STREAM_DATA = 3
_STREAM_HALF = 4
_STREAM_NOISE = 6

PSNR_CAP = 99.0


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 20_000
    base_lr: float = 1e-4
    warmup_steps: int = 2_500
    sigma_input: float = 0.0
    sigma_target: float = 0.0
    seed: int = 0
    eval_every: int = 2_000
    log_every: int = 50
    n_train_scenes: int = 200
    n_eval_scenes: int = 32

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size={self.batch_size} must be >= 1")
        if self.steps < 0 or self.warmup_steps < 0:
            raise ValueError("steps and warmup_steps must be >= 0")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr={self.base_lr} must be > 0")
        if self.sigma_input < 0 or self.sigma_target < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.n_train_scenes < 1 or self.n_eval_scenes < 0:
            raise ValueError("need at least one training scene")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        unknown = sorted(set(raw) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"unknown train-config fields: {unknown}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg


@dataclass
class EvalReport:
    psnr_right_half: float
    regime: str
    step: int
    scene_count: int
    saturated: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to base_lr, then cosine decay to zero."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.base_lr * (step + 1) / cfg.warmup_steps
    span = max(1, cfg.steps - cfg.warmup_steps)
    frac = min(1.0, (step - cfg.warmup_steps) / span)
    return cfg.base_lr * 0.5 * (1.0 + float(np.cos(np.pi * frac)))


# -- data ---------------------------------------------------------------


@dataclass
class Dataset:
    """Train/eval scenes plus (for explicit conditioning) fixed noisy cameras.

    Camera noise is drawn once per (scene, view) from its own keyed
    stream, so the perturbed cameras behave like a fixed imperfect
    dataset: the same view always gets the same wrong pose, and latent
    runs never touch these streams at all.
    """

    train_scenes: list
    eval_scenes: list
    train_query_vecs: np.ndarray | None = None  # [n_train, 3, 9] perturbed

    @property
    def image_hw(self) -> tuple[int, int]:
        img = self.train_scenes[0].input_images
        return img.shape[1], img.shape[2]


def _noisy_camera(cam: CameraPose, sigma: float, data_seed: int, scene_index: int,
                  slot: int) -> CameraPose:
    if sigma == 0.0:
        return cam
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=data_seed, spawn_key=(_STREAM_NOISE, scene_index, slot))
    )
    return perturb_pose(cam, sigma, rng)


def _true_query_vec(conditioning: str, scene: SceneInstance, target_idx: int) -> np.ndarray:
    target_cam = scene.target_cams[target_idx]
    if conditioning == "explicit_relative":
        return encode_relative_pose(target_cam, scene.input_cams[0])
    return encode_absolute_pose(target_cam)


def build_dataset(model_cfg: ModelConfig, train_cfg: TrainConfig,
                  scenes: list | None = None, eval_scenes: list | None = None) -> Dataset:
    """Generate (or adopt) scenes; precompute noisy queries for explicit runs."""
    if scenes is None:
        gen = GenConfig(height=model_cfg.image_height, width=model_cfg.image_width)
        seeds = shard_seeds(train_cfg.seed, train_cfg.n_train_scenes + train_cfg.n_eval_scenes)
        scenes = [generate_scene(s, gen) for s in seeds[: train_cfg.n_train_scenes]]
        eval_scenes = [generate_scene(s, gen) for s in seeds[train_cfg.n_train_scenes :]]
    ds = Dataset(train_scenes=scenes, eval_scenes=eval_scenes or [])

    if model_cfg.conditioning != "latent":
        vecs = np.empty((len(scenes), 3, 9), np.float32)
        for i, scene in enumerate(ds.train_scenes):
            ref = _noisy_camera(scene.input_cams[0], train_cfg.sigma_input,
                                train_cfg.seed, i, 0)
            for t in range(3):
                cam = _noisy_camera(scene.target_cams[t], train_cfg.sigma_target,
                                    train_cfg.seed, i, 5 + t)
                if model_cfg.conditioning == "explicit_relative":
                    vecs[i, t] = encode_relative_pose(cam, ref)
                else:
                    vecs[i, t] = encode_absolute_pose(cam)
        ds.train_query_vecs = vecs
    return ds


# -- trainer ------------------------------------------------------------


class NanLossError(RuntimeError):
    pass


class Trainer:
    def __init__(self, model: SceneModel, train_cfg: TrainConfig, dataset: Dataset):
        train_cfg.validate()
        self.model = model
        self.cfg = train_cfg
        self.dataset = dataset
        self.params = model.params()
        self.optimizer = nn.Adam()
        self.step_count = 0
        self.data_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(_STREAM_DATA,))
        )
        self.half_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=train_cfg.seed, spawn_key=(_STREAM_HALF,))
        )
        h, w = model.cfg.image_height, model.cfg.image_width
        self.grid = pixel_grid(h, w)

    # -- one optimization step ----------------------------------------

    def training_step(self) -> float:
        cfg = self.cfg
        model = self.model
        scenes = self.dataset.train_scenes
        idx = self.data_rng.integers(0, len(scenes), cfg.batch_size)
        images = np.stack([scenes[i].input_images for i in idx])
        targets = np.stack([scenes[i].target_images for i in idx])
        b = cfg.batch_size
        h, w = model.cfg.image_height, model.cfg.image_width

        nn.zero_grads(self.params)
        slsr = model.encode_views(images)
        if model.cfg.conditioning == "latent":
            sides = self.half_rng.integers(0, 2, size=(b, 3))
            halves = np.empty((b, 3, h, w // 2, 3), np.float32)
            for bi in range(b):
                for t in range(3):
                    side = "left" if sides[bi, t] == 0 else "right"
                    halves[bi, t] = take_half(targets[bi, t], side)
            latents = model.estimate_pose(halves, slsr)
            pose_vecs = ad.scale_gradient(latents, model.cfg.grad_scale)
        else:
            pose_vecs = Tensor(self.dataset.train_query_vecs[idx])
        rgb = model.decode_targets(pose_vecs, slsr, self.grid)
        loss = ad.mse(rgb, targets.reshape(b, 3, h * w, 3))
        loss_val = float(loss.data)
        if not np.isfinite(loss_val):
            grad_norm = float("nan")
            raise NanLossError(
                f"non-finite loss at step {self.step_count} "
                f"(lr={lr_at(self.step_count, cfg):.3e}, grad_norm={grad_norm})"
            )
        loss.backward()
        sq = 0.0
        for p in self.params.values():
            if p.grad is not None:
                sq += float(np.vdot(p.grad, p.grad))
        if not np.isfinite(sq):
            raise NanLossError(
                f"non-finite gradient at step {self.step_count} "
                f"(lr={lr_at(self.step_count, cfg):.3e}, loss={loss_val:.6f})"
            )
        self.optimizer.step(self.params, lr_at(self.step_count, cfg))
        self.step_count += 1
        return loss_val

    # -- driver --------------------------------------------------------

    def run(self, metrics_path: str | None = None, regime: str | None = None,
            checkpoint_path: str | None = None, stop_at_psnr: float | None = None) -> EvalReport:
        cfg = self.cfg
        regime = regime or describe_regime(self.model.cfg, cfg)
        sink = open(metrics_path, "a") if metrics_path else None
        t0 = time.time()
        try:
            while self.step_count < cfg.steps:
                step = self.step_count
                loss = self.training_step()
                if sink and (step % cfg.log_every == 0 or step + 1 == cfg.steps):
                    row = {"step": step, "loss": loss, "lr": lr_at(step, cfg),
                           "wall_time": time.time() - t0}
                    sink.write(json.dumps(row) + "\n")
                    sink.flush()
                at_eval = cfg.eval_every > 0 and (step + 1) % cfg.eval_every == 0
                if at_eval or step + 1 == cfg.steps:
                    report = evaluate(self.model, self.dataset.eval_scenes,
                                      regime=regime, step=self.step_count)
                    if sink:
                        sink.write(json.dumps({"step": self.step_count,
                                               "psnr_right_half": report.psnr_right_half,
                                               "wall_time": time.time() - t0}) + "\n")
                        sink.flush()
                    if checkpoint_path:
                        self.save(checkpoint_path)
                    if stop_at_psnr is not None and report.psnr_right_half >= stop_at_psnr:
                        return report
            report = evaluate(self.model, self.dataset.eval_scenes,
                              regime=regime, step=self.step_count)
            if checkpoint_path:
                self.save(checkpoint_path)
            return report
        finally:
            if sink:
                sink.close()

    # -- checkpointing -------------------------------------------------

    def save(self, path: str) -> None:
        arrays = {}
        for name, m in self.optimizer.m.items():
            arrays[f"adam.m.{name}"] = m
        for name, v in self.optimizer.v.items():
            arrays[f"adam.v.{name}"] = v
        meta = {
            "step": self.step_count,
            "adam_t": self.optimizer.t,
            "train_config": json.loads(self.cfg.to_json()),
            "rng": {
                "data": self.data_rng.bit_generator.state,
                "half": self.half_rng.bit_generator.state,
            },
        }
        save_checkpoint(path, self.model, arrays=arrays, meta=meta)

    @classmethod
    def resume(cls, path: str, dataset: Dataset) -> "Trainer":
        model, arrays, meta = load_checkpoint(path)
        train_cfg = TrainConfig.from_json(json.dumps(meta["train_config"]))
        trainer = cls(model, train_cfg, dataset)
        trainer.step_count = int(meta["step"])
        trainer.optimizer.t = int(meta["adam_t"])
        for name, arr in arrays.items():
            if name.startswith("adam.m."):
                trainer.optimizer.m[name[len("adam.m."):]] = arr.copy()
            elif name.startswith("adam.v."):
                trainer.optimizer.v[name[len("adam.v."):]] = arr.copy()
        trainer.data_rng.bit_generator.state = meta["rng"]["data"]
        trainer.half_rng.bit_generator.state = meta["rng"]["half"]
        return trainer


# -- evaluation ---------------------------------------------------------


def psnr(mse: float, peak: float = 1.0) -> float:
    """-10 log10(mse / peak^2), capped at PSNR_CAP."""
    if mse <= peak * peak * 10 ** (-PSNR_CAP / 10.0):
        return PSNR_CAP
    return float(-10.0 * np.log10(mse / (peak * peak)))


def describe_regime(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    if model_cfg.conditioning == "latent":
        return "latent"
    return (f"{model_cfg.conditioning}"
            f"/sigma_input={train_cfg.sigma_input:g}"
            f"/sigma_target={train_cfg.sigma_target:g}")


def evaluate(model: SceneModel, scenes: list, regime: str = "", step: int = 0,
             batch: int = 8, pose_half: str = "left") -> EvalReport:
    """Right-half PSNR with the pose estimator reading the other (left) half.

    Explicit-conditioning models always get the true cameras here; the
    half used for scoring is the complement of ``pose_half``.
    """
    if not scenes:
        raise ValueError("evaluation needs at least one scene")
    h = scenes[0].input_images.shape[1]
    w = scenes[0].input_images.shape[2]
    grid = pixel_grid(h, w)
    score_half = "right" if pose_half == "left" else "left"
    cols = slice(w // 2, w) if score_half == "right" else slice(0, w // 2)

    per_scene = []
    saturated = False
    with ad.no_grad():
        for start in range(0, len(scenes), batch):
            chunk = scenes[start : start + batch]
            images = np.stack([s.input_images for s in chunk])
            targets = np.stack([s.target_images for s in chunk])
            slsr = model.encode_views(images)
            if model.cfg.conditioning == "latent":
                halves = np.stack(
                    [[take_half(t, pose_half) for t in s.target_images] for s in chunk]
                )
                pose_vecs = model.estimate_pose(halves, slsr)
            else:
                vecs = np.stack(
                    [[_true_query_vec(model.cfg.conditioning, s, t) for t in range(3)]
                     for s in chunk]
                )
                pose_vecs = Tensor(vecs)
            rgb = model.decode_targets(pose_vecs, slsr, grid)
            pred = rgb.data.reshape(len(chunk), 3, h, w, 3)
            for bi in range(len(chunk)):
                vals = []
                for t in range(3):
                    diff = pred[bi, t][:, cols] - targets[bi, t][:, cols]
                    val = psnr(float(np.mean(diff * diff)))
                    saturated = saturated or val >= PSNR_CAP
                    vals.append(val)
                per_scene.append(float(np.mean(vals)))
    return EvalReport(
        psnr_right_half=float(np.mean(per_scene)),
        regime=regime,
        step=step,
        scene_count=len(scenes),
        saturated=saturated,
    )


# -- experiment grid ----------------------------------------------------


def run_regime_grid(model_cfg: ModelConfig, train_cfg: TrainConfig,
                    regimes: list, out_path: str | None = None) -> list:
    """Train one model per (conditioning, sigma_input, sigma_target) cell.

    All cells share the data seed.  A cell that aborts contributes an
    error row instead of killing the remaining cells.
    """
    rows = []
    for conditioning, sigma_input, sigma_target in regimes:
        row = {"conditioning": conditioning, "sigma_input": sigma_input,
               "sigma_target": sigma_target}
        try:
            m_cfg = model_cfg.with_overrides(conditioning=conditioning)
            t_cfg = replace(train_cfg, sigma_input=sigma_input, sigma_target=sigma_target)
            dataset = build_dataset(m_cfg, t_cfg)
            model = SceneModel(m_cfg, init_seed=t_cfg.seed)
            trainer = Trainer(model, t_cfg, dataset)
            report = trainer.run()
            row.update(report.to_json())
        except (NanLossError, ValueError) as e:
            row["error"] = str(e)
        rows.append(row)
        if out_path:
            with open(out_path, "w") as f:
                json.dump(rows, f, indent=2)
    return rows
