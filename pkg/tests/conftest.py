import numpy as np
import pytest

from ainnoseg.inference import InferenceConfig
from ainnoseg.model import ModelConfig
from ainnoseg.synth import generate
from ainnoseg.train import TrainConfig, train

SIZE = 32


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cfg():
    return ModelConfig(num_classes=5, input_size=(SIZE, SIZE))


@pytest.fixture(scope="session")
def synth8():
    return generate(8, 7, size=SIZE)


@pytest.fixture(scope="session")
def desk_inference():
    return InferenceConfig(base_scales=(SIZE,), multiples=(0.5, 1.0, 2.0))


@pytest.fixture(scope="session")
def trained(small_cfg, synth8):
    """A briefly trained model shared by the inference-side tests."""
    return train(small_cfg, synth8, TrainConfig(steps=200, lr=0.1, batch_size=8, log_every=10_000)).model
