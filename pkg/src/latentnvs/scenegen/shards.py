"""Dataset shard IO.

A shard is a directory:

    manifest.json              version, counts, config echo, scene seeds
    scene_00000/
        input_0.png .. input_4.png
        target_0.png .. target_2.png
        poses.json             float64 positions + up hints
    scene_00001/ ...

Poses round-trip losslessly (JSON float64); images are 8-bit PNG, so
re-read values sit within 1/255 of the rendered float.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .camera import CameraPose
from .generate import GenConfig, SceneInstance

SHARD_VERSION = 1


class ShardFormatError(Exception):
    pass


def _save_png(path: Path, img: np.ndarray) -> None:
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data).save(path)


def _load_png(path: Path) -> np.ndarray:
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except Exception as e:
        raise ShardFormatError(f"unreadable image {path}: {e}") from e
    return (arr.astype(np.float32) / 255.0).astype(np.float32)


def write_shard(scenes: list[SceneInstance], path: str | Path, cfg: GenConfig | None = None) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    cfg = cfg or GenConfig()
    manifest = {
        "version": SHARD_VERSION,
        "scene_count": len(scenes),
        "height": cfg.height,
        "width": cfg.width,
        "cfg": cfg.to_json(),
        "scene_seeds": [s.seed for s in scenes],
    }
    for i, scene in enumerate(scenes):
        sdir = path / f"scene_{i:05d}"
        sdir.mkdir(exist_ok=True)
        for k in range(scene.input_images.shape[0]):
            _save_png(sdir / f"input_{k}.png", scene.input_images[k])
        for k in range(scene.target_images.shape[0]):
            _save_png(sdir / f"target_{k}.png", scene.target_images[k])
        poses = {
            "input": [c.to_json() for c in scene.input_cams],
            "target": [c.to_json() for c in scene.target_cams],
        }
        (sdir / "poses.json").write_text(json.dumps(poses))
    # Manifest written last: a complete manifest implies a complete shard.
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def read_shard(path: str | Path) -> list[SceneInstance]:
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise ShardFormatError(f"missing manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ShardFormatError(f"corrupt manifest in {path}: {e}") from e
    version = manifest.get("version")
    if version != SHARD_VERSION:
        raise ShardFormatError(f"unsupported shard version {version!r} in {path}")
    try:
        count = int(manifest["scene_count"])
        seeds = list(manifest["scene_seeds"])
    except (KeyError, TypeError, ValueError) as e:
        raise ShardFormatError(f"malformed manifest in {path}: {e}") from e
    if len(seeds) != count:
        raise ShardFormatError(
            f"manifest scene_seeds length {len(seeds)} != scene_count {count} in {path}"
        )
    scenes = []
    for i in range(count):
        sdir = path / f"scene_{i:05d}"
        if not sdir.is_dir():
            raise ShardFormatError(f"missing scene directory {sdir}")
        try:
            poses = json.loads((sdir / "poses.json").read_text())
            input_cams = tuple(CameraPose.from_json(d) for d in poses["input"])
            target_cams = tuple(CameraPose.from_json(d) for d in poses["target"])
        except FileNotFoundError as e:
            raise ShardFormatError(f"missing poses.json in {sdir}") from e
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ShardFormatError(f"corrupt poses.json in {sdir}: {e}") from e
        inputs = np.stack([_load_png(sdir / f"input_{k}.png") for k in range(len(input_cams))])
        targets = np.stack([_load_png(sdir / f"target_{k}.png") for k in range(len(target_cams))])
        scenes.append(
            SceneInstance(
                seed=int(seeds[i]),
                input_images=inputs,
                input_cams=input_cams,
                target_images=targets,
                target_cams=target_cams,
            )
        )
    return scenes
