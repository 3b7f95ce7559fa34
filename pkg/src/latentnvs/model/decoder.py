"""Per-pixel decoder: (pose encoding, pixel position) -> RGB via token cross-attention."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import nn
from ..autodiff import Tensor
from .config import ModelConfig

# All no-grad decoding runs in fixed-size query chunks.  BLAS kernels pick
# different accumulation orders for different row counts, so a lone query
# decoded as a 1-row matmul would not be bit-identical to the same query
# inside a full-image batch; pinning the row count makes single-pixel and
# whole-image decoding agree exactly.
INFER_CHUNK = 256


def pixel_grid(height: int, width: int) -> np.ndarray:
    """Pixel-center coordinates in [0,1]^2, row-major [H*W, 2], x before y."""
    xs = (np.arange(width, dtype=np.float32) + 0.5) / width
    ys = (np.arange(height, dtype=np.float32) + 0.5) / height
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


class PixelDecoder:
    """Query MLP -> cross-attention into the full token set -> sigmoid RGB."""

    def __init__(self, rng: np.random.Generator, cfg: ModelConfig):
        self.cfg = cfg
        self.query_mlp = nn.Mlp(rng, cfg.query_input_dim, cfg.d_ff, cfg.d_model)
        self.blocks = [
            nn.CrossAttentionBlock(rng, cfg.d_model, cfg.d_ff, cfg.n_heads)
            for _ in range(cfg.n_dec_layers)
        ]
        self.ln_out = nn.LayerNorm(cfg.d_model)
        self.head = nn.Mlp(rng, cfg.d_model, cfg.d_ff, 3)

    def __call__(self, queries: Tensor, memory: Tensor) -> Tensor:
        """[N, Q, pose+2] queries + [N, T, d] tokens -> [N, Q, 3] in (0,1)."""
        if queries.shape[-1] != self.cfg.query_input_dim:
            raise ValueError(
                f"query dimension {queries.shape[-1]} does not match configured "
                f"{self.cfg.query_input_dim} ({self.cfg.conditioning} + xy)"
            )
        x = self.query_mlp(queries)
        for block in self.blocks:
            x = block(x, memory)
        x = self.ln_out(x)
        return ad.sigmoid(self.head(x))

    def decode_chunked(self, pose_vec: np.ndarray, tokens: np.ndarray, xys: np.ndarray) -> np.ndarray:
        """No-grad decode of [Q, 2] pixel positions for one scene, one pose.

        Queries run through fixed INFER_CHUNK-row batches (tail padded by
        repetition), so the result for a given pixel does not depend on
        how many other pixels were requested alongside it.
        """
        pose_vec = np.asarray(pose_vec, np.float32).ravel()
        xys = np.asarray(xys, np.float32).reshape(-1, 2)
        n_q = xys.shape[0]
        queries = np.concatenate(
            [np.broadcast_to(pose_vec, (n_q, pose_vec.shape[0])), xys], axis=1
        ).astype(np.float32)
        memory = Tensor(np.ascontiguousarray(tokens)[None])
        out = np.empty((n_q, 3), np.float32)
        with ad.no_grad():
            for start in range(0, n_q, INFER_CHUNK):
                chunk = queries[start : start + INFER_CHUNK]
                pad = INFER_CHUNK - chunk.shape[0]
                if pad:
                    chunk = np.concatenate([chunk, np.repeat(chunk[-1:], pad, axis=0)])
                rgb = self(Tensor(np.ascontiguousarray(chunk[None])), memory)
                out[start : start + INFER_CHUNK] = rgb.data[0, : INFER_CHUNK - pad]
        return out

    def params(self) -> dict:
        out = nn.prefixed("query_mlp", self.query_mlp.params())
        for i, block in enumerate(self.blocks):
            out.update(nn.prefixed(f"block{i}", block.params()))
        out.update(nn.prefixed("ln_out", self.ln_out.params()))
        out.update(nn.prefixed("head", self.head.params()))
        return out
