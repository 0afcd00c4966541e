"""Shared fixtures: small deterministic datasets and tiny model configs."""

import numpy as np
import pytest

from trimoret.model import ModelConfig
from trimoret.synthgen import GeneratorConfig, gen_dataset

# Tiny text dimension keeps tokenizer parameter counts small for gradient
# checks and fast training probes.
TINY_TEXT_DIM = 16


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        latent_dim=4,
        token_dim=8,
        num_layers=1,
        num_heads=2,
        ff_dim=16,
        text_dim=TINY_TEXT_DIM,
        text_tokens=2,
        scene_grid=(2, 2, 1),
        motion_stride=12,
        max_tokens=8,
        init_seed=0,
        coord_freqs=(1.0,),
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_generator_config() -> GeneratorConfig:
    return GeneratorConfig(points_per_object=64, floor_points=128,
                           frames=24, text_dim=TINY_TEXT_DIM)


@pytest.fixture(scope="session")
def small_dataset(small_generator_config):
    """8 train + 8 test samples, full text dim left tiny for speed."""
    return gen_dataset(small_generator_config, 8, 8)


@pytest.fixture(scope="session")
def default_small_split():
    """A handful of samples at the default generator settings."""
    cfg = GeneratorConfig()
    train, test = gen_dataset(cfg, 6, 4)
    return cfg, train, test


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
