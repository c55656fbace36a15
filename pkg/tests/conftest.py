import numpy as np
import pytest

from changeseg.raster import BandRaster


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_raster(rng, bands=4, h=8, w=8, names=None):
    data = rng.uniform(0.0, 1.0, size=(bands, h, w)).astype(np.float32)
    return BandRaster(data, band_names=names)


@pytest.fixture
def quad_raster(rng):
    return random_raster(rng, bands=4, h=8, w=8, names=["R", "G", "B", "NIR"])
