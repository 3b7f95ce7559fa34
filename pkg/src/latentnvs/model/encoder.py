"""Input-view encoder: images -> joint set of scene tokens."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from .config import ModelConfig


@dataclass
class Slsr:
    """Set-valued scene representation: concatenated per-view tokens.

    Tokens are laid out view-major, so view v owns rows
    [v * tokens_per_view, (v+1) * tokens_per_view).  View 0's block is
    the subset the pose estimator is allowed to attend into.
    """

    tokens: Tensor  # [B, num_views * tokens_per_view, d_model]
    tokens_per_view: int
    num_views: int

    @property
    def source_view(self) -> np.ndarray:
        """Per-token view index, shape [num_views * tokens_per_view]."""
        return np.repeat(np.arange(self.num_views), self.tokens_per_view)

    def first_view_tokens(self) -> Tensor:
        """View-0 token block, still on the tape ([B, tokens_per_view, d])."""
        return ad.narrow(self.tokens, 1, 0, self.tokens_per_view)


class ViewEncoder:
    """Shared patch CNN + position embeddings + joint self-attention.

    A learned id embedding is added to view 0's tokens only, marking the
    reference view; all other views stay interchangeable.
    """

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.cfg = cfg
        n_blocks = cfg.patch_size_encoder.bit_length() - 1
        self.cnn = nn.PatchCnn(rng, n_blocks, 3, cfg.d_model)
        self.pos_emb = Tensor(
            nn.trunc_normal(rng, (cfg.tokens_per_view, cfg.d_model)), requires_grad=True
        )
        self.view0_emb = Tensor(nn.trunc_normal(rng, (cfg.d_model,)), requires_grad=True)
        self.blocks = [
            nn.SelfAttentionBlock(rng, cfg.d_model, cfg.d_ff, cfg.n_heads)
            for _ in range(cfg.n_enc_layers)
        ]

    def __call__(self, images: Tensor) -> Slsr:
        cfg = self.cfg
        b, v, h, w, c = images.shape
        if c != 3 or h != cfg.image_height or w != cfg.image_width:
            raise ValueError(
                f"input views {h}x{w}x{c} do not match configured {cfg.image_height}x{cfg.image_width}x3"
            )
        if v < 1:
            raise ValueError("need at least one input view")
        n_p = cfg.tokens_per_view
        d = cfg.d_model

        x = ad.reshape(images, (b * v, h, w, c))
        x = self.cnn(x)  # [B*V, gh, gw, d]
        x = ad.reshape(x, (b, v, n_p, d))
        x = ad.add(x, ad.reshape(self.pos_emb, (1, 1, n_p, d)))
        # Reference-view id: multiply the embedding by a {0,1} view mask so
        # the add stays a plain broadcast on the tape.
        mask = np.zeros((1, v, 1, 1), np.float32)
        mask[0, 0] = 1.0
        x = ad.add(x, ad.mul(ad.reshape(self.view0_emb, (1, 1, 1, d)), Tensor(mask)))
        x = ad.reshape(x, (b, v * n_p, d))
        for block in self.blocks:
            x = block(x)
        return Slsr(tokens=x, tokens_per_view=n_p, num_views=v)

    def params(self) -> dict:
        out = {"pos_emb": self.pos_emb, "view0_emb": self.view0_emb}
        out.update(nn.prefixed("cnn", self.cnn.params()))
        for i, block in enumerate(self.blocks):
            out.update(nn.prefixed(f"block{i}", block.params()))
        return out
