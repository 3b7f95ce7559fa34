"""Backend benchmark: numba kernels vs the pure-numpy fallback.

Times the fused hot kernels at the shapes the desk-scale trainer actually
hits (decoder attention dominates), the toy renderer, and one full
optimizer step per backend.  Run as a script:

    python3 -m latentnvs.bench            # full table
    python3 -m latentnvs.bench --quick    # fewer repeats
"""

from __future__ import annotations

import argparse
import os
import time

import numpy as np

from . import kernels
from .backend import ENV_FLAG, numba_available

# Decoder cross-attention at desk scale: batch 16 x 4 heads, 3 targets x
# 32x32 pixels of queries against 5 views x 64 tokens, head dim 16.
_ATTN_SHAPES = {
    "decoder": (64, 3072, 320, 16),
    "encoder": (64, 320, 320, 16),
    "pose-estimator": (192, 8, 64, 16),
}
_LN_SHAPE = (16, 3072, 64)


def _time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _attn_cases(rng: np.random.Generator):
    for name, (bh, tq, tk, dh) in _ATTN_SHAPES.items():
        q = rng.standard_normal((bh, tq, dh), np.float32)
        k = rng.standard_normal((bh, tk, dh), np.float32)
        v = rng.standard_normal((bh, tk, dh), np.float32)
        out = kernels.attn_forward(q, k, v, dh ** -0.5)
        g = rng.standard_normal(out.shape, np.float32)
        yield f"attention fwd [{bh}x{tq}x{tk}x{dh}] ({name})", (
            lambda q=q, k=k, v=v, dh=dh: kernels.attn_forward(q, k, v, dh ** -0.5)
        )
        yield f"attention bwd [{bh}x{tq}x{tk}x{dh}] ({name})", (
            lambda q=q, k=k, v=v, g=g, dh=dh: kernels.attn_backward(q, k, v, g, dh ** -0.5)
        )


def _ln_cases(rng: np.random.Generator):
    x = rng.standard_normal(_LN_SHAPE, np.float32)
    gain = np.ones(_LN_SHAPE[-1], np.float32)
    bias = np.zeros(_LN_SHAPE[-1], np.float32)
    out, xhat, rstd = kernels.layer_norm_forward(x, gain, bias, 1e-5)
    g = rng.standard_normal(out.shape, np.float32)
    shape = "x".join(map(str, _LN_SHAPE))
    yield f"layer_norm fwd [{shape}]", (
        lambda: kernels.layer_norm_forward(x, gain, bias, 1e-5)
    )
    yield f"layer_norm bwd [{shape}]", (
        lambda: kernels.layer_norm_backward(g, xhat, rstd, gain)
    )


def _gelu_cases(rng: np.random.Generator):
    x = rng.standard_normal((16, 3072, 128), np.float32)
    _, t = kernels.gelu_forward(x)
    g = rng.standard_normal(x.shape, np.float32)
    yield "gelu fwd [16x3072x128]", lambda: kernels.gelu_forward(x)
    yield "gelu bwd [16x3072x128]", lambda: kernels.gelu_backward(x, t, g)


def _render_case():
    from .scenegen import generate_scene

    return "render_view 8x[32x32]", lambda: generate_scene(1234)


def _train_step_case():
    from .model import ModelConfig, SceneModel
    from .training import TrainConfig, Trainer, build_dataset

    model_cfg = ModelConfig()
    train_cfg = TrainConfig(batch_size=16, n_train_scenes=4, n_eval_scenes=0, steps=10)
    dataset = build_dataset(model_cfg, train_cfg)

    def step():
        model = SceneModel(model_cfg, init_seed=0)
        trainer = Trainer(model, train_cfg, dataset)
        trainer.training_step()
        t0 = time.perf_counter()
        trainer.training_step()
        return time.perf_counter() - t0

    return "training step (desk, batch 16)", step


def run(repeats: int = 3, include_train_step: bool = True) -> list:
    """Time every case under each backend; returns rows of (name, {backend: ms})."""
    backends = ["numpy"] + (["numba"] if numba_available() else [])
    saved = os.environ.get(ENV_FLAG)
    rows: dict[str, dict] = {}
    try:
        for backend in backends:
            os.environ[ENV_FLAG] = backend
            kernels.warmup()
            rng = np.random.default_rng(0)
            cases = list(_attn_cases(rng)) + list(_ln_cases(rng)) + list(_gelu_cases(rng))
            cases.append(_render_case())
            for name, fn in cases:
                fn()  # absorb one-time JIT compilation before timing
                rows.setdefault(name, {})[backend] = _time(fn, repeats)
            if include_train_step:
                name, step = _train_step_case()
                rows.setdefault(name, {})[backend] = min(step() for _ in range(repeats)) * 1e3
    finally:
        if saved is None:
            os.environ.pop(ENV_FLAG, None)
        else:
            os.environ[ENV_FLAG] = saved
    return [(name, timings) for name, timings in rows.items()]


def format_table(rows: list) -> str:
    header = f"{'kernel':<44} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}"
    lines = [header, "-" * len(header)]
    for name, timings in rows:
        np_ms = timings.get("numpy")
        nb_ms = timings.get("numba")
        speedup = f"{np_ms / nb_ms:7.2f}x" if np_ms and nb_ms else "     n/a"
        nb_txt = f"{nb_ms:10.2f}" if nb_ms is not None else "       n/a"
        lines.append(f"{name:<44} {np_ms:10.2f} {nb_txt} {speedup}")
    return "\n".join(lines)


def main(argv: list | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="1 repeat, no training step")
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args(argv)
    repeats = 1 if args.quick else args.repeats
    rows = run(repeats=repeats, include_train_step=not args.quick)
    print(format_table(rows))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
