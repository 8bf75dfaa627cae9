import numpy as np
import pytest
from scipy import ndimage


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_smooth_image(seed: int, size: int = 32, channels: int = 3) -> np.ndarray:
    """Band-limited random image in [0.15, 0.85]; no hard edges, no clipping."""
    g = np.random.default_rng(seed)
    shape = (size, size) if channels == 1 else (size, size, channels)
    img = g.random(shape)
    img = ndimage.gaussian_filter(img, sigma=(2, 2) + (0,) * (img.ndim - 2))
    lo, hi = img.min(), img.max()
    img = (img - lo) / (hi - lo + 1e-12)
    return (0.15 + 0.7 * img).astype(np.float32)


def make_textured_image(seed: int, size: int = 32) -> np.ndarray:
    """High-frequency texture in [0, 1] for distortion-sensitivity checks."""
    g = np.random.default_rng(seed)
    return g.random((size, size, 3)).astype(np.float32)


@pytest.fixture
def smooth_image():
    return make_smooth_image(7)


@pytest.fixture
def textured_image():
    return make_textured_image(11)
