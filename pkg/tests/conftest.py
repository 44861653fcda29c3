import pytest

from gradmusic.geometry import Domain
from gradmusic.kernels import KernelGeometry
from gradmusic.signal import NoiseModel, observe, random_separated_config


@pytest.fixture
def torus2():
    return Domain("torus", 2)


@pytest.fixture
def box2():
    return Domain("box", 2)


@pytest.fixture
def small_cube():
    return KernelGeometry("cube", 4, 2)


@pytest.fixture
def config3(torus2):
    return random_separated_config(3, 0.3, "unit", torus2, seed=1)


@pytest.fixture
def clean_samples(config3, small_cube):
    return observe(config3, small_cube, NoiseModel())


@pytest.fixture
def noisy_samples(config3, small_cube):
    return observe(config3, small_cube,
                   NoiseModel(kind="gaussian", sigma0=0.02), seed=7)

