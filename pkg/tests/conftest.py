import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from picot.corpus import SynthSpec, generate_synthetic  # noqa: E402


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(SynthSpec(seed=5, n_train=24, n_dev=12, n_test=12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
