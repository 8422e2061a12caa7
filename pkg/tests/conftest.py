import numpy as np
import pytest

from pointpolicy.pointnet import EncoderDecoderConfig, LevelConfig, PointCloud
from pointpolicy.policy import HeadConfig, PolicyModel


def tiny_encoder(semantic: int = 0, proprio: int = 0,
                 feature_dim: int = 12) -> EncoderDecoderConfig:
    return EncoderDecoderConfig(
        levels=(LevelConfig(8, 0.5, 4, 8), LevelConfig(4, 1.0, 4, 12)),
        decoder_widths=(12, feature_dim),
        feature_dim=feature_dim,
        fusion_level=1,
        semantic_width=semantic,
        proprio_dim=proprio,
        proprio_embed=4,
    )


def tiny_heads(bin_deg: float = 45.0) -> HeadConfig:
    return HeadConfig(lift_width=16, hidden_width=8, rot_bin_deg=bin_deg)


def tiny_model(mode: str = "keyframe", ablation: str = "none",
               semantic: int = 0, proprio: int = 0) -> PolicyModel:
    return PolicyModel(mode=mode, encoder=tiny_encoder(semantic, proprio),
                       heads=tiny_heads(), ablation=ablation)


def random_cloud(rng: np.random.Generator, n: int = 16, semantic: int = 0,
                 proprio: int = 0) -> PointCloud:
    return PointCloud(
        coords=rng.uniform(0.0, 1.0, size=(n, 3)),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
        semantic=rng.normal(size=(n, semantic)) if semantic else None,
        proprio=rng.uniform(size=proprio) if proprio else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
