import numpy as np
import pytest
from scipy import ndimage

from src.core.imaging import RgbImage
from src.services.phantom import PhantomSpec, generate_phantom


@pytest.fixture(scope="session")
def small_spec():
    return PhantomSpec(width=64, height=64, seed=3)


@pytest.fixture(scope="session")
def small_phantom(small_spec):
    return generate_phantom(small_spec)


@pytest.fixture(scope="session")
def oracle_phantoms():
    """Noiseless well-separated 256x256 phantoms for five seeds"""
    return [generate_phantom(PhantomSpec(width=256, height=256, seed=seed)) for seed in range(5)]


@pytest.fixture
def textured():
    """Smooth random texture in [0, 1], 128x128"""
    rng = np.random.default_rng(0)
    field = ndimage.gaussian_filter(rng.normal(size=(128, 128)), sigma=3.0)
    field -= field.min()
    return field / field.max()


@pytest.fixture
def tissue_tile():
    return RgbImage(np.tile(np.array([120, 60, 150], dtype=np.uint8), (8, 8, 1)))


@pytest.fixture
def white_tile():
    return RgbImage(np.full((8, 8, 3), 255, dtype=np.uint8))
