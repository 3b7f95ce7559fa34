"""Full scene-instance generation: spec + cameras + rendered views."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraConfig, CameraPose, sample_camera
from .render import render_view
from .scenes import SceneSpec

NUM_INPUT_VIEWS = 5
NUM_TARGET_VIEWS = 3


@dataclass(frozen=True)
class GenConfig:
    height: int = 32
    width: int = 32
    camera: CameraConfig = field(default_factory=CameraConfig)

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "camera": self.camera.__dict__.copy(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GenConfig":
        return cls(height=int(d["height"]), width=int(d["width"]), camera=CameraConfig(**d["camera"]))


@dataclass
class SceneInstance:
    """One data point: 5 unposed-at-training input views + 3 targets.

    Images are float32 [H, W, 3] in [0, 1]; poses are ground truth that
    the latent-conditioned path never reads.
    """

    seed: int
    input_images: np.ndarray  # (5, H, W, 3) float32
    input_cams: tuple[CameraPose, ...]
    target_images: np.ndarray  # (3, H, W, 3) float32
    target_cams: tuple[CameraPose, ...]
    spec: SceneSpec | None = None

    @property
    def input_views(self):
        return list(zip(self.input_images, self.input_cams))

    @property
    def target_views(self):
        return list(zip(self.target_images, self.target_cams))

    def get_spec(self) -> SceneSpec:
        if self.spec is None:
            self.spec = SceneSpec.from_seed(self.seed)
        return self.spec

    def validate(self) -> None:
        assert self.input_images.shape[0] == NUM_INPUT_VIEWS
        assert self.target_images.shape[0] == NUM_TARGET_VIEWS
        positions = [c.position for c in self.input_cams + self.target_cams]
        for i in range(len(positions)):
            for j in range(i + 1, len(positions)):
                if np.array_equal(positions[i], positions[j]):
                    raise ValueError(f"duplicate camera position in scene {self.seed}")


def generate_scene(seed: int, cfg: GenConfig | None = None) -> SceneInstance:
    """Deterministic in (seed, cfg); cameras come from a seed-derived
    substream so spec and camera draws cannot interleave."""
    cfg = cfg or GenConfig()
    spec = SceneSpec.from_seed(seed)
    cam_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    cams = [sample_camera(cam_rng, cfg.camera) for _ in range(NUM_INPUT_VIEWS + NUM_TARGET_VIEWS)]
    fov = cfg.camera.fov_y_deg
    images = np.stack([render_view(spec, c, cfg.height, cfg.width, fov) for c in cams])
    inst = SceneInstance(
        seed=int(seed),
        input_images=images[:NUM_INPUT_VIEWS],
        input_cams=tuple(cams[:NUM_INPUT_VIEWS]),
        target_images=images[NUM_INPUT_VIEWS:],
        target_cams=tuple(cams[NUM_INPUT_VIEWS:]),
        spec=spec,
    )
    inst.validate()
    return inst


def shard_seeds(global_seed: int, count: int) -> list[int]:
    """Per-scene seeds derived from one shard seed; recorded in manifests."""
    state = np.random.SeedSequence(global_seed).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]
