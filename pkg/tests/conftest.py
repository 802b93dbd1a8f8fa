import numpy as np
import pytest

import support


@pytest.fixture
def scalar_model():
    return support.scalar_model()


@pytest.fixture
def scalar_lq_model():
    return support.scalar_lq_model()


@pytest.fixture
def stacked_output_model():
    return support.stacked_output_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
