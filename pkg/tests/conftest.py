import numpy as np
import pytest

from rankspace.models import random_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_hmm():
    return random_model("hmm", m=3, r=2, o=4, seed=7)


@pytest.fixture
def small_pcfg():
    return random_model("pcfg", num_nt=2, num_pt=2, r=2, o=3, seed=5)
