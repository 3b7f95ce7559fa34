"""Scene model: view encoder -> token set, pose estimator, pixel decoder."""

from .config import CONDITIONING_MODES, ModelConfig
from .conditioning import POSE_ENCODING_DIM, encode_absolute_pose, encode_relative_pose
from .core import (CheckpointError, SceneModel, load_checkpoint, params_digest,
                   save_checkpoint)
from .decoder import PixelDecoder, pixel_grid
from .encoder import Slsr, ViewEncoder
from .pose import PoseEstimator, take_half

__all__ = [
    "CONDITIONING_MODES",
    "CheckpointError",
    "ModelConfig",
    "POSE_ENCODING_DIM",
    "PixelDecoder",
    "PoseEstimator",
    "SceneModel",
    "Slsr",
    "ViewEncoder",
    "encode_absolute_pose",
    "encode_relative_pose",
    "load_checkpoint",
    "params_digest",
    "pixel_grid",
    "save_checkpoint",
    "take_half",
]
