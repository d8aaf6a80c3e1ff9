import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from densetrack.synth import SceneConfig, generate_scene  # noqa: E402


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneConfig(seed=3, T=5, H=32, W=48))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
