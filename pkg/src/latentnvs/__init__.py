"""Latent-pose novel view synthesis at desk scale.

Unposed multi-view encoder -> set-latent scene representation, a pose
estimator that infers a low-dimensional latent pose from half a target
image, and a per-pixel decoder -- plus explicit-pose baselines, pose
noise experiments, latent-space analysis, and an HTTP render service.
"""

from . import _malloc

_malloc.tune()

__version__ = "0.1.0"
