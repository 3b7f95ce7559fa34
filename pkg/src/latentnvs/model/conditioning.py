"""Explicit camera encodings for the pose-conditioned baselines."""

from __future__ import annotations

import numpy as np

from ..scenegen import CameraPose

# position (3) + forward (3) + up (3)
POSE_ENCODING_DIM = 9


def encode_relative_pose(target: CameraPose, reference: CameraPose) -> np.ndarray:
    """Target camera expressed in the reference camera's frame (9 floats).

    Concatenates the position offset, forward axis, and up axis of the
    target camera, all rotated into the reference frame.
    """
    rot = reference.world_to_cam()
    delta = rot @ (np.asarray(target.position, np.float64) - np.asarray(reference.position, np.float64))
    _, up, forward = target.basis()
    return np.concatenate([delta, rot @ forward, rot @ up]).astype(np.float32)


def encode_absolute_pose(target: CameraPose) -> np.ndarray:
    """Target camera in world coordinates (9 floats): position, forward, up."""
    _, up, forward = target.basis()
    return np.concatenate(
        [np.asarray(target.position, np.float64), forward, up]
    ).astype(np.float32)
