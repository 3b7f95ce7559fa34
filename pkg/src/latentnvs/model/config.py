"""Model hyperparameters and the conditioning-mode enum."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

CONDITIONING_MODES = ("latent", "explicit_relative", "explicit_target_only")

# Dimension of an explicit camera encoding: position + forward + up.
_EXPLICIT_POSE_DIM = 9


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass
class ModelConfig:
    """Hyperparameters; the default instance is the small desk-scale setup.

    The conditioning mode selects what the decoder query carries: an
    estimated latent pose (``latent``), the target camera relative to
    input camera 0 (``explicit_relative``), or the absolute target
    camera (``explicit_target_only``).
    """

    d_model: int = 64
    d_ff: int = 128
    n_enc_layers: int = 3
    n_dec_layers: int = 1
    n_pose_layers: int = 2
    n_heads: int = 4
    latent_pose_dim: int = 8
    patch_size_encoder: int = 4
    patch_size_pose: int = 8
    grad_scale: float = 0.2
    conditioning: str = "latent"
    image_height: int = 32
    image_width: int = 32
    pose_estimator_no_slsr: bool = False
    pose_estimator_no_self_attn: bool = False
    stop_grad_pose_path: bool = False

    @classmethod
    def paper_scale(cls) -> "ModelConfig":
        """Full-scale hyperparameters, for inspection rather than desk training."""
        return cls(
            d_model=768,
            d_ff=1536,
            n_enc_layers=5,
            n_dec_layers=2,
            n_pose_layers=2,
            n_heads=12,
            latent_pose_dim=8,
            patch_size_encoder=8,
            patch_size_pose=16,
            grad_scale=0.2,
            image_height=128,
            image_width=128,
        )

    # -- derived sizes -------------------------------------------------

    @property
    def encoder_grid(self) -> tuple[int, int]:
        p = self.patch_size_encoder
        return self.image_height // p, self.image_width // p

    @property
    def tokens_per_view(self) -> int:
        gh, gw = self.encoder_grid
        return gh * gw

    @property
    def pose_grid(self) -> tuple[int, int]:
        p = self.patch_size_pose
        return self.image_height // p, (self.image_width // 2) // p

    @property
    def query_pose_dim(self) -> int:
        if self.conditioning == "latent":
            return self.latent_pose_dim
        return _EXPLICIT_POSE_DIM

    @property
    def query_input_dim(self) -> int:
        return self.query_pose_dim + 2

    # -- validation / serialization ------------------------------------

    def validate(self) -> None:
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} must be a positive multiple of n_heads={self.n_heads}")
        if self.d_ff < 1:
            raise ValueError(f"d_ff={self.d_ff} must be >= 1")
        for name in ("n_enc_layers", "n_dec_layers", "n_pose_layers", "n_heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}={getattr(self, name)} must be >= 1")
        if self.latent_pose_dim < 1:
            raise ValueError(f"latent_pose_dim={self.latent_pose_dim} must be >= 1")
        if not 0.0 <= self.grad_scale <= 1.0:
            raise ValueError(f"grad_scale={self.grad_scale} must be in [0, 1]")
        if self.conditioning not in CONDITIONING_MODES:
            raise ValueError(f"conditioning={self.conditioning!r} not one of {CONDITIONING_MODES}")
        h, w = self.image_height, self.image_width
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"image size {h}x{w} must be even and >= 2")
        for name in ("patch_size_encoder", "patch_size_pose"):
            p = getattr(self, name)
            # Powers of two so the patch CNN can realise each patch as a
            # stack of 2x2 stride-2 merges.
            if p < 2 or not _is_pow2(p):
                raise ValueError(f"{name}={p} must be a power of two >= 2")
        if h % self.patch_size_encoder or w % self.patch_size_encoder:
            raise ValueError(f"patch_size_encoder={self.patch_size_encoder} must divide {h}x{w}")
        if h % self.patch_size_pose or (w // 2) % self.patch_size_pose:
            raise ValueError(
                f"patch_size_pose={self.patch_size_pose} must divide the half image {h}x{w // 2}"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown model-config fields: {unknown}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def with_overrides(self, **kwargs) -> "ModelConfig":
        cfg = replace(self, **kwargs)
        cfg.validate()
        return cfg
