from .camera import CameraConfig, CameraPose, perturb_pose, sample_camera
from .render import render_view
from .scenes import SceneObject, SceneSpec
from .generate import GenConfig, SceneInstance, generate_scene
from .shards import ShardFormatError, read_shard, write_shard

__all__ = [
    "CameraConfig",
    "CameraPose",
    "GenConfig",
    "SceneInstance",
    "SceneObject",
    "SceneSpec",
    "ShardFormatError",
    "generate_scene",
    "perturb_pose",
    "read_shard",
    "render_view",
    "sample_camera",
    "write_shard",
]
