import numpy as np
import pytest

from hepack.engine import SimBackend
from hepack.params import BackendParams, profile


@pytest.fixture
def tiny_params():
    """Small slot space with t=17 for hand-checkable arithmetic."""
    return BackendParams(
        ring_dimension=16,
        coeff_modulus_bits=120,
        plain_modulus=17,
        slot_count=8,
        depth_budget=3,
    )


@pytest.fixture
def tiny(tiny_params):
    return SimBackend(tiny_params)


@pytest.fixture
def desk_params():
    return profile("desk")


@pytest.fixture
def desk(desk_params):
    return SimBackend(desk_params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
