"""Shared fixtures: small configs, cached scenes, random-weight models.

Everything here is sized so the full unit suite runs in well under a
minute; the expensive trained artifacts live in tests/_artifacts and are
managed by tests/harness.py, not by fixtures.
"""

from __future__ import annotations

import numpy as np
import pytest

from latentnvs.model import ModelConfig, SceneModel
from latentnvs.scenegen import generate_scene


def micro_model_config(**overrides) -> ModelConfig:
    base = dict(d_model=16, d_ff=32, n_enc_layers=2, n_heads=2)
    base.update(overrides)
    return ModelConfig(**base)


def grad_check_config(**overrides) -> ModelConfig:
    """Smallest config the image pipeline supports; float64-friendly sizes."""
    base = dict(
        d_model=8,
        d_ff=16,
        n_enc_layers=1,
        n_dec_layers=1,
        n_pose_layers=1,
        n_heads=2,
        image_height=16,
        image_width=16,
        patch_size_encoder=4,
        patch_size_pose=8,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def scenes32():
    """Four deterministic 32x32 scenes, shared read-only across tests."""
    return [generate_scene(s) for s in (11, 12, 13, 14)]


@pytest.fixture(scope="session")
def micro_model():
    return SceneModel(micro_model_config(), init_seed=0)


@pytest.fixture(scope="session")
def micro_slsr(micro_model, scenes32):
    images = np.stack([scenes32[0].input_images])
    return micro_model.encode_views(images)
