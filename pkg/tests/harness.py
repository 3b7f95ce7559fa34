"""Build and cache the trained artifacts the acceptance tests consume.

Each cell (one training run) lives in tests/_artifacts/<name>/ as
checkpoint.ckpt + metrics.jsonl + done.json.  Cells are keyed by a hash of
the full configuration plus a numerics tag; a stale or missing key wipes
and rebuilds the cell.  Run as a script to build everything:

    python3 tests/harness.py            # all cells, cheap ones first
    python3 tests/harness.py c2_latent  # one cell

Training resumes from the cell checkpoint if a matching build was
interrupted, so a killed build loses at most one eval interval of work.
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from latentnvs import kernels
from latentnvs.model import ModelConfig, SceneModel
from latentnvs.training import TrainConfig, Trainer, build_dataset, evaluate

ARTIFACTS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "_artifacts")

# Bump when any change alters training numerics (kernels, autodiff, model,
# scene generation): stale cells rebuild on the next harness run.
NUMERICS_TAG = "v1"

DESK_MODEL = dict()
DESK_TRAIN = dict(seed=0)

# Tuned for the single-core budget: probes on the 20-scene overfit regime
# showed 1e-3 strictly ahead of the 1e-4 desk default at every eval through
# step 2000 (20.7 vs 20.0 dB) with a smooth loss, and 1e-4 decelerating well
# short of the criterion-3 bar.  All criterion-2 cells share the value so the
# conditioning comparison stays apples-to-apples.
TUNED_LR = dict(base_lr=1e-3)

MICRO_MODEL = dict(d_model=16, d_ff=32, n_enc_layers=2, n_heads=2)
MICRO_TRAIN = dict(batch_size=8, steps=600, warmup_steps=100, eval_every=200,
                   n_train_scenes=20, n_eval_scenes=8, seed=0)


def _cell_specs() -> dict:
    cells = {
        # criterion 1: identical micro runs apart from sigma_target
        "c1_micro_s0": dict(model=dict(MICRO_MODEL, conditioning="latent"),
                            train=dict(MICRO_TRAIN, sigma_target=0.0)),
        "c1_micro_s01": dict(model=dict(MICRO_MODEL, conditioning="latent"),
                             train=dict(MICRO_TRAIN, sigma_target=0.1)),
        # criterion 2 grid: shared data seed, desk scale
        "c2_latent": dict(model=dict(DESK_MODEL, conditioning="latent"),
                          train=dict(DESK_TRAIN, **TUNED_LR)),
        "c2_explicit_clean": dict(model=dict(DESK_MODEL, conditioning="explicit_relative"),
                                  train=dict(DESK_TRAIN, sigma_target=0.0, **TUNED_LR)),
        "c2_explicit_noisy": dict(model=dict(DESK_MODEL, conditioning="explicit_relative"),
                                  train=dict(DESK_TRAIN, sigma_target=0.1, **TUNED_LR)),
        # criterion 3: overfit 20 scenes, scored on the train scenes,
        # stop as soon as the bar is cleared
        "c3_overfit": dict(model=dict(DESK_MODEL, conditioning="latent"),
                           train=dict(DESK_TRAIN, steps=10000, n_train_scenes=20,
                                      n_eval_scenes=2, eval_every=500, **TUNED_LR),
                           eval_on_train=True, stop_at_psnr=25.0),
    }
    return cells


BUILD_ORDER = ["c1_micro_s0", "c1_micro_s01", "c2_latent",
               "c2_explicit_clean", "c2_explicit_noisy", "c3_overfit"]


def cell_key(spec: dict) -> str:
    model_cfg = ModelConfig(**spec["model"])
    train_cfg = TrainConfig(**spec["train"])
    payload = json.dumps({
        "model": json.loads(model_cfg.to_json()),
        "train": json.loads(train_cfg.to_json()),
        "eval_on_train": bool(spec.get("eval_on_train", False)),
        "stop_at_psnr": spec.get("stop_at_psnr"),
        "numerics": NUMERICS_TAG,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def cell_dir(name: str) -> str:
    return os.path.join(ARTIFACTS, name)


def cell_done(name: str) -> dict | None:
    """The done.json of a finished, up-to-date cell, else None."""
    spec = _cell_specs()[name]
    path = os.path.join(cell_dir(name), "done.json")
    if not os.path.exists(path):
        return None
    with open(path) as f:
        done = json.load(f)
    if done.get("key") != cell_key(spec):
        return None
    return done


def checkpoint_path(name: str) -> str:
    return os.path.join(cell_dir(name), "checkpoint.ckpt")


def build_cell(name: str) -> dict:
    """Train the cell if its artifact is missing or stale; return done.json."""
    done = cell_done(name)
    if done is not None:
        return done
    spec = _cell_specs()[name]
    key = cell_key(spec)
    d = cell_dir(name)
    os.makedirs(d, exist_ok=True)
    key_path = os.path.join(d, "key.json")
    ckpt = checkpoint_path(name)
    metrics = os.path.join(d, "metrics.jsonl")

    stale = True
    if os.path.exists(key_path):
        with open(key_path) as f:
            stale = json.load(f).get("key") != key
    if stale:
        for fn in (ckpt, metrics, os.path.join(d, "done.json")):
            if os.path.exists(fn):
                os.remove(fn)
        with open(key_path, "w") as f:
            json.dump({"key": key}, f)

    model_cfg = ModelConfig(**spec["model"])
    train_cfg = TrainConfig(**spec["train"])
    dataset = build_dataset(model_cfg, train_cfg)
    if spec.get("eval_on_train"):
        dataset = replace(dataset, eval_scenes=dataset.train_scenes)

    kernels.warmup()
    if os.path.exists(ckpt):
        trainer = Trainer.resume(ckpt, dataset)
        print(f"[{name}] resuming at step {trainer.step_count}", flush=True)
    else:
        trainer = Trainer(SceneModel(model_cfg, init_seed=train_cfg.seed),
                          train_cfg, dataset)
        print(f"[{name}] starting fresh ({train_cfg.steps} steps)", flush=True)

    t0 = time.time()
    report = trainer.run(metrics_path=metrics, checkpoint_path=ckpt,
                         stop_at_psnr=spec.get("stop_at_psnr"))
    trainer.save(ckpt)
    done = {
        "key": key,
        "name": name,
        "psnr_right_half": report.psnr_right_half,
        "regime": report.regime,
        "steps_run": trainer.step_count,
        "saturated": report.saturated,
        "wall_seconds": round(time.time() - t0, 1),
    }
    tmp = os.path.join(d, "done.json.tmp")
    with open(tmp, "w") as f:
        json.dump(done, f, indent=2)
    os.replace(tmp, os.path.join(d, "done.json"))
    print(f"[{name}] done: psnr {report.psnr_right_half:.2f}dB "
          f"after {trainer.step_count} steps ({done['wall_seconds']}s)", flush=True)
    return done


def dataset_for(name: str):
    spec = _cell_specs()[name]
    model_cfg = ModelConfig(**spec["model"])
    train_cfg = TrainConfig(**spec["train"])
    dataset = build_dataset(model_cfg, train_cfg)
    if spec.get("eval_on_train"):
        dataset = replace(dataset, eval_scenes=dataset.train_scenes)
    return model_cfg, train_cfg, dataset


def main(argv: list) -> int:
    names = argv or BUILD_ORDER
    for name in names:
        if name not in _cell_specs():
            print(f"unknown cell {name!r}; have {sorted(_cell_specs())}")
            return 2
        build_cell(name)
    with open(os.path.join(ARTIFACTS, "ALL_DONE"), "w") as f:
        f.write(json.dumps({"cells": names, "finished": time.time()}))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
