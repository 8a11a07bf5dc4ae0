import numpy as np
import pytest

from motiondiff.config import ModelConfig
from motiondiff.data import ClipDataset, generate_dataset


def make_tiny_config(**overrides) -> ModelConfig:
    """A 32px configuration small enough for sub-second forward passes."""
    base = dict(
        image_size=32,
        channels=(8, 16),
        mid_channels=24,
        attn_resolutions=(16, 8),
        temb_dim=32,
        head_dim=8,
        d_mot=64,
        motion_channels=(8, 16, 24),
        motion_attn_resolutions=(4,),
        motion_mlp_hidden=32,
        rts_hidden=8,
        m_tokens=4,
        d_attn=16,
        d_app=32,
        gen_channels=(32, 24, 16, 8),
        style_dim=32,
        disc_channels=(8, 16),
        perceptual_channels=(8, 16),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_cfg() -> ModelConfig:
    return make_tiny_config()


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> ClipDataset:
    root = tmp_path_factory.mktemp("clips")
    generate_dataset(root, num_clips=3, clip_length=8, image_size=32, seed=0)
    return ClipDataset(root)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
