"""Type definitions and aliases for regx."""

from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt

__all__ = [
    "FloatArray",
    "DoubleArray",
    "IntArray",
    "Dims3",
    "Spacing3",
    "Vec3",
]

type FloatArray = npt.NDArray[np.float32]
type DoubleArray = npt.NDArray[np.float64]
type IntArray = npt.NDArray[np.integer[Any]]

type Dims3 = tuple[int, int, int]
type Spacing3 = tuple[float, float, float]
type Vec3 = tuple[float, float, float]
