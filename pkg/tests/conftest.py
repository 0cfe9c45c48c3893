import numpy as np
import pytest

from src.models import AlphaPolicy, AnnLayer
from tests.helpers import mapped_network, random_ann


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def batch(rng):
    """Calibration batch of 16 samples with 6 features in [0, 1]."""
    return rng.uniform(0.0, 1.0, size=(16, 6))


@pytest.fixture
def linear_setup(rng, batch):
    """(network, ann, x): 3 hidden layers, LINEAR policy, exact on ``x``."""
    ann = random_ann([6, 5, 5, 4, 3], rng)
    return mapped_network(ann, batch), ann, batch


@pytest.fixture
def constant_setup(rng, batch):
    """(network, ann, x): CONSTANT alpha = 1, zero-row-sum hidden weights."""
    ann = random_ann([6, 5, 4, 3], rng, zero_row_sum=True)
    return mapped_network(ann, batch, policy=AlphaPolicy.CONSTANT), ann, batch


@pytest.fixture
def labels(batch, rng):
    return rng.integers(0, 3, size=batch.shape[0])


@pytest.fixture
def identity_ann():
    return [
        AnnLayer(w=np.eye(3), b=np.zeros(3)),
        AnnLayer(w=np.eye(3), b=np.zeros(3)),
    ]


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    """Keep a developer's .env and TTFS_* variables out of config tests."""
    monkeypatch.delenv("TTFS_DATA_DIR", raising=False)
    monkeypatch.delenv("TTFS_OUT_DIR", raising=False)
    monkeypatch.setattr("src.settings_storage.load_dotenv", lambda *a, **k: False)
