"""Shared fixtures: a small synthetic KG pair, its prepared dataset and a fast run config."""

import numpy as np
import pytest

from src.engine.autograd import set_default_dtype
from src.models.config import GeneratorConfig, RunConfig
from src.services.dataset_builder import prepare_dataset, split_alignments
from src.services.synthetic_generator import generate_synthetic_pair


@pytest.fixture(autouse=True)
def float64_engine():
    """Every test starts (and ends) at the default 64-bit precision."""
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_generator():
    return GeneratorConfig(n_entities=30, n_relations=5, n_attributes=8, avg_degree=3.0,
                           attrs_per_entity=2.0, d_v=8)


@pytest.fixture
def small_pair(small_generator):
    return generate_synthetic_pair(small_generator, seed=11)


@pytest.fixture
def small_config():
    config = RunConfig.from_profile("desk")
    config.apply({
        "model": {"d": 16, "d_in": 32},
        "loss": {"batch_size": 64},
        "train": {"epochs": 4, "iter_epochs": 0, "seed": 5, "log_every": 100},
    })
    return config.validate()


@pytest.fixture
def small_dataset(small_pair, small_config):
    split = split_alignments(small_pair.alignments, small_config.train.ratio, small_config.train.seed)
    return prepare_dataset(small_pair.kg1, small_pair.kg2, split, small_config.model,
                           small_config.train.seed, all_pairs=small_pair.alignments)
