import numpy as np
import pytest

from app.models import presets
from app.services.diffusion import build_model


@pytest.fixture
def bs_model():
    return build_model(presets.BS_TRACKING["model"])


@pytest.fixture
def cir_model():
    return build_model(presets.CIR_VXX["model"])


@pytest.fixture
def heston_model():
    return build_model(presets.HESTON)


@pytest.fixture
def csqr_model():
    return build_model(presets.CSQR)


@pytest.fixture
def csqr_equal_model():
    return build_model({**presets.CSQR, "gamma": 1.0})


@pytest.fixture
def rng():
    return np.random.default_rng(7)
