"""Neural-net building blocks on top of the autodiff tape.

Modules are plain classes holding parameter Tensors.  Each exposes
``params()`` returning an ordered ``{name: Tensor}`` dict; parents
compose children's dicts under a dotted prefix.  Those names are the
checkpoint schema, so renaming a field here is a format change.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) with |x| > 2*std resampled, float32."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out.astype(np.float32)


def prefixed(name: str, params: dict) -> dict:
    return {f"{name}.{k}": v for k, v in params.items()}


class Linear:
    def __init__(self, rng, d_in: int, d_out: int):
        self.w = Tensor(trunc_normal(rng, (d_in, d_out)), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def params(self) -> dict:
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, d: int):
        self.g = Tensor(np.ones(d, np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(d, np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.g, self.b)

    def params(self) -> dict:
        return {"g": self.g, "b": self.b}


class Mlp:
    def __init__(self, rng, d_model: int, d_ff: int, d_out: int | None = None):
        self.fc1 = Linear(rng, d_model, d_ff)
        self.fc2 = Linear(rng, d_ff, d_out if d_out is not None else d_model)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))

    def params(self) -> dict:
        return {**prefixed("fc1", self.fc1.params()), **prefixed("fc2", self.fc2.params())}


class Attention:
    """Multi-head attention; query and key/value sources may differ."""

    def __init__(self, rng, d_model: int, n_heads: int):
        assert d_model % n_heads == 0
        self.n_heads = n_heads
        self.wq = Linear(rng, d_model, d_model)
        self.wk = Linear(rng, d_model, d_model)
        self.wv = Linear(rng, d_model, d_model)
        self.wo = Linear(rng, d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.n_heads
        return ad.transpose(ad.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def __call__(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        b, tq, d = q_src.shape
        q = self._split(self.wq(q_src))
        k = self._split(self.wk(kv_src))
        v = self._split(self.wv(kv_src))
        out = ad.scaled_dot_attention(q, k, v)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, tq, d))
        return self.wo(out)

    def params(self) -> dict:
        out = {}
        for name in ("wq", "wk", "wv", "wo"):
            out.update(prefixed(name, getattr(self, name).params()))
        return out


class SelfAttentionBlock:
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng, d_model: int, d_ff: int, n_heads: int):
        self.ln1 = LayerNorm(d_model)
        self.attn = Attention(rng, d_model, n_heads)
        self.ln2 = LayerNorm(d_model)
        self.mlp = Mlp(rng, d_model, d_ff)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = ad.add(x, self.attn(h, h))
        x = ad.add(x, self.mlp(self.ln2(x)))
        return x

    def params(self) -> dict:
        out = {}
        for name in ("ln1", "attn", "ln2", "mlp"):
            out.update(prefixed(name, getattr(self, name).params()))
        return out


class CrossAttentionBlock:
    """Pre-norm cross-attention block; the memory gets its own norm."""

    def __init__(self, rng, d_model: int, d_ff: int, n_heads: int):
        self.ln_q = LayerNorm(d_model)
        self.ln_kv = LayerNorm(d_model)
        self.attn = Attention(rng, d_model, n_heads)
        self.ln2 = LayerNorm(d_model)
        self.mlp = Mlp(rng, d_model, d_ff)

    def __call__(self, x: Tensor, memory: Tensor) -> Tensor:
        x = ad.add(x, self.attn(self.ln_q(x), self.ln_kv(memory)))
        x = ad.add(x, self.mlp(self.ln2(x)))
        return x

    def params(self) -> dict:
        out = {}
        for name in ("ln_q", "ln_kv", "attn", "ln2", "mlp"):
            out.update(prefixed(name, getattr(self, name).params()))
        return out


class PatchCnn:
    """Stack of 2x2 stride-2 conv blocks (as patch-merge matmuls) + GELU.

    Widths halve backwards from ``d_out``: a 3-block stack ending at 64
    runs 16 -> 32 -> 64.  Input is channels-last [B, H, W, C].
    """

    def __init__(self, rng, n_blocks: int, c_in: int, d_out: int):
        self.widths = [max(1, d_out >> (n_blocks - 1 - i)) for i in range(n_blocks)]
        self.blocks = []
        c = c_in
        for w in self.widths:
            self.blocks.append(Linear(rng, 4 * c, w))
            c = w

    def __call__(self, x: Tensor) -> Tensor:
        for lin in self.blocks:
            b, h, w, c = x.shape
            x = ad.reshape(x, (b, h // 2, 2, w // 2, 2, c))
            x = ad.transpose(x, (0, 1, 3, 2, 4, 5))
            x = ad.reshape(x, (b, h // 2, w // 2, 4 * c))
            x = ad.gelu(lin(x))
        return x

    def params(self) -> dict:
        out = {}
        for i, lin in enumerate(self.blocks):
            out.update(prefixed(f"block{i}", lin.params()))
        return out


class Adam:
    """Adam with bias correction; state lives in float32 per parameter."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.asarray(a) for k, a in state["m"].items()}
        self.v = {k: np.asarray(a) for k, a in state["v"].items()}


def zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def param_count(params: dict) -> int:
    return sum(int(p.data.size) for p in params.values())


def cast_params(params: dict, dtype) -> None:
    """In-place dtype cast of every parameter (float64 for grad checks)."""
    for p in params.values():
        p.data = p.data.astype(dtype)
