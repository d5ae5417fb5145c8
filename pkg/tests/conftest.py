"""Pytest configuration and shared fixtures for regx tests."""

from collections.abc import Callable

import numpy as np
import pytest
from scipy import ndimage

from regx.volume import LabelVolume, Volume3D

type TexturedFactory = Callable[..., Volume3D]


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test sees the same random inputs."""
    return np.random.default_rng(20240917)


def smooth_noise(
    rng: np.random.Generator, shape: tuple[int, int, int], sigma: float = 1.5
) -> np.ndarray:
    """Gaussian-smoothed white noise rescaled to roughly [0, 100]."""
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    noise -= noise.min()
    return 100.0 * noise / noise.max()


@pytest.fixture
def noise(rng: np.random.Generator) -> Callable[..., np.ndarray]:
    """Factory for raw smooth-noise arrays, for cropping into image pairs."""

    def make(shape: tuple[int, int, int], sigma: float = 1.5) -> np.ndarray:
        return smooth_noise(rng, shape, sigma)

    return make


@pytest.fixture
def textured(rng: np.random.Generator) -> TexturedFactory:
    """Factory for smooth random volumes with unique local structure."""

    def make(
        shape: tuple[int, int, int] = (12, 12, 12),
        spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
        sigma: float = 1.5,
    ) -> Volume3D:
        return Volume3D(smooth_noise(rng, shape, sigma), spacing)

    return make


@pytest.fixture
def ramp() -> Callable[..., Volume3D]:
    """Factory for the linear ramp ``v(x, y, z) = coordinate along axis``."""

    def make(shape: tuple[int, int, int] = (6, 6, 6), axis: int = 0) -> Volume3D:
        return Volume3D(np.indices(shape, dtype=np.float32)[axis])

    return make


def sphere_mask(
    shape: tuple[int, int, int], centre: tuple[float, float, float], radius: float
) -> np.ndarray:
    grid = np.indices(shape, dtype=np.float64)
    dist2 = sum((grid[i] - centre[i]) ** 2 for i in range(3))
    return dist2 <= radius**2


@pytest.fixture
def sphere_labels() -> Callable[..., LabelVolume]:
    """Factory for a label volume holding one ball of label ``value``."""

    def make(
        shape: tuple[int, int, int],
        centre: tuple[float, float, float],
        radius: float,
        value: int = 1,
    ) -> LabelVolume:
        data = np.where(sphere_mask(shape, centre, radius), value, 0).astype(np.uint8)
        return LabelVolume(data, num_classes=value + 1)

    return make


# Pytest configuration
def pytest_configure(config: pytest.Config) -> None:
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "unit: mark test as unit test")
    config.addinivalue_line("markers", "integration: mark test as integration test")
    config.addinivalue_line("markers", "slow: mark test as slow running")
