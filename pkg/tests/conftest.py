import numpy as np
import pytest
import torch
from PIL import Image

from caststyle import FeatureExtractor


@pytest.fixture(scope="session")
def extractor():
    return FeatureExtractor(seed=0)


@pytest.fixture
def make_png(tmp_path):
    """Factory writing a random RGB png of a given size, returns its path."""

    def _make(name="img.png", size=(64, 64), mode="RGB", seed=0):
        rng = np.random.default_rng(seed)
        w, h = size
        if mode == "L":
            arr = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        else:
            arr = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr, mode=mode).save(path)
        return path

    return _make


def rand_image(batch=1, size=64, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(batch, 3, size, size, generator=gen) * 2 - 1
