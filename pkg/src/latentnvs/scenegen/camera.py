"""Camera sampling on the upper hemisphere, look-at orientation, noise.

World frame is z-up; every camera looks at the origin, so orientation is
fully derived from position (plus an up hint for the roll).  The camera
frame is x-right / y-up / z-forward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_Z_UP = np.array([0.0, 0.0, 1.0])
_X_FALLBACK = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class CameraConfig:
    r_min: float = 3.0
    r_max: float = 6.0
    elev_min_deg: float = 5.0
    elev_max_deg: float = 85.0
    azim_min_deg: float = 0.0
    azim_max_deg: float = 360.0
    fov_y_deg: float = 45.0

    def validate(self) -> None:
        if not (0.0 < self.r_min <= self.r_max):
            raise ValueError(f"need 0 < r_min <= r_max, got [{self.r_min}, {self.r_max}]")
        if not (0.0 < self.elev_min_deg <= self.elev_max_deg <= 90.0):
            raise ValueError(
                f"elevation band must lie in (0, 90] deg, got "
                f"[{self.elev_min_deg}, {self.elev_max_deg}]"
            )
        if not (0.0 < self.fov_y_deg < 180.0):
            raise ValueError(f"fov_y_deg out of range: {self.fov_y_deg}")


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray
    up_hint: np.ndarray = field(default_factory=lambda: _Z_UP.copy())

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, np.float64))
        object.__setattr__(self, "up_hint", np.asarray(self.up_hint, np.float64))
        if float(self.position @ self.position) == 0.0:
            raise ValueError("camera at the origin has no look-at direction")

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.position @ self.position))

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, up, forward) unit vectors in world coordinates."""
        f = -self.position / self.radius
        hint = self.up_hint
        r = np.cross(f, hint)
        n = float(np.sqrt(r @ r))
        if n < 1e-9:
            # Camera on the up axis: roll is arbitrary, pick a stable one.
            r = np.cross(f, _X_FALLBACK)
            n = float(np.sqrt(r @ r))
        r = r / n
        u = np.cross(r, f)
        return r, u, f

    @property
    def forward(self) -> np.ndarray:
        return self.basis()[2]

    def world_to_cam(self) -> np.ndarray:
        """3x3 rotation: rows are (right, up, forward)."""
        return np.stack(self.basis())

    def to_json(self) -> dict:
        return {"position": self.position.tolist(), "up_hint": self.up_hint.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "CameraPose":
        return cls(np.asarray(d["position"], np.float64), np.asarray(d["up_hint"], np.float64))


def sample_camera(rng: np.random.Generator, cfg: CameraConfig) -> CameraPose:
    """Uniform in azimuth, elevation (angle), and radius over cfg's bands."""
    cfg.validate()
    azim = rng.uniform(np.deg2rad(cfg.azim_min_deg), np.deg2rad(cfg.azim_max_deg))
    elev = rng.uniform(np.deg2rad(cfg.elev_min_deg), np.deg2rad(cfg.elev_max_deg))
    radius = rng.uniform(cfg.r_min, cfg.r_max)
    ce = np.cos(elev)
    position = radius * np.array([np.cos(azim) * ce, np.sin(azim) * ce, np.sin(elev)])
    return CameraPose(position)


def perturb_pose(pose: CameraPose, sigma: float, rng: np.random.Generator) -> CameraPose:
    """Additive Gaussian position noise; orientation re-derives as look-at.

    The hemisphere/radius constraints deliberately do not apply to the
    result: noisy poses model miscalibration, not resampling.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    noise = rng.standard_normal(3)
    return CameraPose(pose.position + sigma * noise, pose.up_hint)
