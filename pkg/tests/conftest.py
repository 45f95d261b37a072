import numpy as np
import pytest

from ergopose import dula, rula
from ergopose.config import default_limits, default_segments


@pytest.fixture(scope="session")
def psi():
    return default_segments()


@pytest.fixture(scope="session")
def lim():
    return default_limits()


@pytest.fixture(scope="session")
def small_dataset():
    return rula.generate_dataset(6000, balance=True, seed=11)


@pytest.fixture(scope="session")
def small_model(small_dataset):
    """A quickly trained surrogate; accuracy is modest but gradients and
    the optimization machinery behave like the full model's."""
    cfg = dula.TrainConfig(epochs=30, learning_rate=0.003, batch_size=256, seed=0)
    model, _ = dula.train(small_dataset, cfg)
    return model
