# tests/conftest.py
"""
Pytest configuration and shared fixtures
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core.config import DataConfig, ExperimentConfig
from src.core.data import build_benchmark
from src.core.numerics import RngStream
from tests.fixtures.sample_data import TINY_EXPERIMENT


@pytest.fixture
def rng():
    """Fresh deterministic stream"""
    return RngStream(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(7)


@pytest.fixture
def tiny_config():
    """Small experiment that trains in well under a second"""
    return ExperimentConfig.from_dict(TINY_EXPERIMENT)


@pytest.fixture
def tiny_bn_config(tiny_config):
    return tiny_config.with_overrides({'model': {'norm': 'bn'}, 'loss': {'regularizer': 'none', 'lam': 0.0}})


@pytest.fixture
def tiny_benchmark(tiny_config):
    return build_benchmark(tiny_config.data, RngStream(tiny_config.data_seed).split('data'))


@pytest.fixture
def default_data_config():
    return DataConfig()


@pytest.fixture(autouse=True)
def clear_seed_env(monkeypatch):
    """Keep a developer's MIXNORM_SEED out of the tests"""
    monkeypatch.delenv('MIXNORM_SEED', raising=False)
