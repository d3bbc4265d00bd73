from loguru import logger
import numpy as np
import pytest

from cp_certify.harness import Dataset, make_synthetic
from cp_certify.network import NetworkModel, preset


@pytest.fixture(autouse=True)
def _quiet_logs():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cnn() -> NetworkModel:
    return preset("toy-cnn", num_classes=4, seed=0)


@pytest.fixture
def fc() -> NetworkModel:
    return preset("toy-fc", num_classes=4, seed=0)


@pytest.fixture
def skip_net() -> NetworkModel:
    return preset("toy-skip", num_classes=4, seed=0)


@pytest.fixture
def image_data() -> Dataset:
    return make_synthetic(4, 8, (8, 8, 1), seed=0)


@pytest.fixture
def vector_data() -> Dataset:
    return make_synthetic(4, 8, (16,), seed=0)


@pytest.fixture
def skip_data() -> Dataset:
    return make_synthetic(4, 4, (8, 8, 4), seed=0)
