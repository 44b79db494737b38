import os

import numpy as np
import pytest

from oodbench.core import ScalarVolume

# Keep unit tests deterministic and independent of the sandbox CPU count.
os.environ.setdefault("OODBENCH_THREADS", "1")


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def random_volume(rng, shape=(16, 16, 16), spacing=(1.0, 1.0, 1.0), scale=1.0):
    return ScalarVolume(rng.standard_normal(shape) * scale, spacing=spacing)
