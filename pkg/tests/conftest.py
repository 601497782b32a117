import numpy as np
import pytest

from rmacplus.tensor_store import FeatureMap


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_map(width, height, channels, rng=None, fill=None):
    """Small helper: build a FeatureMap from random or constant values."""
    if fill is not None:
        data = np.full((height, width, channels), fill, dtype=np.float32)
    else:
        rng = rng or np.random.default_rng(0)
        data = rng.uniform(0, 1, size=(height, width, channels)).astype(np.float32)
    return FeatureMap.from_array(data)
