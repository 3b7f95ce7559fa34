"""Pose estimator: half a target image + reference-view tokens -> latent pose."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from .config import ModelConfig


def take_half(images: np.ndarray, side: str) -> np.ndarray:
    """Columns [0, W/2) for ``left``, [W/2, W) for ``right``."""
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    w = images.shape[-2]
    if w % 2:
        raise ValueError(f"image width {w} is odd; halves are undefined")
    half = w // 2
    if side == "left":
        return np.ascontiguousarray(images[..., :, :half, :])
    return np.ascontiguousarray(images[..., :, half:, :])


class PoseEstimator:
    """Patch CNN over a half image, then alternating cross/self attention.

    Each round cross-attends the half-image tokens into the reference
    view's tokens, then self-attends; either kind of block can be
    disabled via the config's ablation flags.  The pooled output is a
    global mean over tokens, projected to ``latent_pose_dim``.
    """

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.cfg = cfg
        n_blocks = cfg.patch_size_pose.bit_length() - 1
        self.cnn = nn.PatchCnn(rng, n_blocks, 3, cfg.d_model)
        gh, gw = cfg.pose_grid
        self.pos_emb = Tensor(nn.trunc_normal(rng, (gh * gw, cfg.d_model)), requires_grad=True)
        self.cross = (
            None
            if cfg.pose_estimator_no_slsr
            else [
                nn.CrossAttentionBlock(rng, cfg.d_model, cfg.d_ff, cfg.n_heads)
                for _ in range(cfg.n_pose_layers)
            ]
        )
        self.selfb = (
            None
            if cfg.pose_estimator_no_self_attn
            else [
                nn.SelfAttentionBlock(rng, cfg.d_model, cfg.d_ff, cfg.n_heads)
                for _ in range(cfg.n_pose_layers)
            ]
        )
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.proj = nn.Linear(rng, cfg.d_model, cfg.latent_pose_dim)

    def __call__(self, halves: Tensor, reference_tokens: Tensor) -> Tensor:
        """[N, H, W/2, 3] halves + [N, n0, d] view-0 tokens -> [N, latent_pose_dim]."""
        cfg = self.cfg
        n, h, w2, c = halves.shape
        gh, gw = cfg.pose_grid
        if c != 3 or h != cfg.image_height or w2 != cfg.image_width // 2:
            raise ValueError(
                f"pose-estimator input {h}x{w2}x{c} does not match configured half "
                f"{cfg.image_height}x{cfg.image_width // 2}x3"
            )
        if reference_tokens.shape[1] == 0:
            raise AssertionError("reference-view token set is empty")
        if cfg.stop_grad_pose_path:
            reference_tokens = ad.scale_gradient(reference_tokens, 0.0)

        x = self.cnn(halves)  # [N, gh, gw, d]
        x = ad.reshape(x, (n, gh * gw, cfg.d_model))
        x = ad.add(x, ad.reshape(self.pos_emb, (1, gh * gw, cfg.d_model)))
        for i in range(cfg.n_pose_layers):
            if self.cross is not None:
                x = self.cross[i](x, reference_tokens)
            if self.selfb is not None:
                x = self.selfb[i](x)
        x = self.ln_out(x)
        pooled = ad.reduce_mean(x, axis=1)
        return self.proj(pooled)

    def params(self) -> dict:
        out = {"pos_emb": self.pos_emb}
        out.update(nn.prefixed("cnn", self.cnn.params()))
        if self.cross is not None:
            for i, block in enumerate(self.cross):
                out.update(nn.prefixed(f"cross{i}", block.params()))
        if self.selfb is not None:
            for i, block in enumerate(self.selfb):
                out.update(nn.prefixed(f"self{i}", block.params()))
        out.update(nn.prefixed("ln_out", self.ln_out.params()))
        out.update(nn.prefixed("proj", self.proj.params()))
        return out
