from __future__ import annotations

import numpy as np
import pytest

from drivestress.fixtures import generate_fixture_clips
from drivestress.manifest import load_manifest


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("clips")
    return generate_fixture_clips(root, 6, seed=42)


@pytest.fixture(scope="session")
def fixture_clips(fixture_manifest):
    return load_manifest(fixture_manifest)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=24, w=32):
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
