import numpy as np
import pytest

from cpfm.encoder import EncoderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Small encoder for fast structural tests."""
    return EncoderConfig(series_len=16, channels=2, patch_len=4, model_dim=8,
                         heads=2, layers=1, prompt_len=2, classes=3,
                         mask_ratio=0.25)


@pytest.fixture
def default_cfg():
    return EncoderConfig()


def random_simplex(rng, k):
    raw = rng.random(k) + 1e-3
    return raw / raw.sum()
