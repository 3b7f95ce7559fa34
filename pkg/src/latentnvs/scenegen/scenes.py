"""Procedural toy scene specs: a few primitives on a ground plane.

A SceneSpec is a pure function of its seed.  Object layout is kept
asymmetric (random centers, sizes, colors, light) so that views from
different azimuths are actually distinguishable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SceneObject:
    kind: str  # "sphere" | "box"
    center: np.ndarray  # (3,) float64
    size: np.ndarray  # sphere: (r, r, r); box: half-extents, float64
    albedo: np.ndarray  # (3,) float64 in [0, 1]


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    objects: tuple[SceneObject, ...]
    ground_albedo: np.ndarray  # (3,)
    light_dir: np.ndarray  # unit vector pointing toward the light

    @classmethod
    def from_seed(cls, seed: int) -> "SceneSpec":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
        num_objects = int(rng.integers(3, 9))
        objects = []
        for _ in range(num_objects):
            kind = "sphere" if rng.random() < 0.5 else "box"
            cx, cy = rng.uniform(-1.6, 1.6, size=2)
            if kind == "sphere":
                r = rng.uniform(0.25, 0.6)
                cz = rng.uniform(r, 1.4)
                size = np.array([r, r, r])
            else:
                size = rng.uniform(0.2, 0.55, size=3)
                cz = rng.uniform(size[2], 1.4)
            albedo = rng.uniform(0.08, 0.95, size=3)
            objects.append(SceneObject(kind, np.array([cx, cy, cz]), size, albedo))
        ground_albedo = rng.uniform(0.15, 0.55, size=3)
        az = rng.uniform(0.0, 2.0 * np.pi)
        el = rng.uniform(np.deg2rad(30.0), np.deg2rad(75.0))
        light = np.array([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)])
        spec = cls(int(seed), tuple(objects), ground_albedo, light)
        spec.validate()
        return spec

    def validate(self) -> None:
        if not (3 <= len(self.objects) <= 8):
            raise ValueError(f"expected 3..8 objects, got {len(self.objects)}")
        for obj in self.objects:
            if not (np.all(np.isfinite(obj.center)) and np.all(np.isfinite(obj.size))):
                raise ValueError("non-finite object parameters")
            if np.any(np.abs(obj.center[:2]) > 2.0) or obj.center[2] < 0 or obj.center[2] > 2.0:
                raise ValueError(f"object center out of bounds: {obj.center}")
        if abs(float(self.light_dir @ self.light_dir) - 1.0) > 1e-9:
            raise ValueError("light_dir must be unit length")
