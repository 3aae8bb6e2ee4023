import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthscope.raster import ImageRaster

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_raster(arr, color_space="sRGB") -> ImageRaster:
    return ImageRaster(np.asarray(arr, dtype=np.float64), color_space=color_space)


def random_raster(rng, h=16, w=16, c=3, lo=0.0, hi=1.0) -> ImageRaster:
    return make_raster(rng.uniform(lo, hi, size=(h, w, c)))


@pytest.fixture
def fixture_images():
    paths = sorted((FIXTURES / "images").glob("*.png"))
    assert paths, "fixture images missing; run tests/fixtures/make_fixtures.py"
    return paths
