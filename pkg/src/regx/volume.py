"""Immutable volume, label, feature, landmark and displacement containers.

All arrays are indexed ``[x, y, z]`` (multi-channel arrays ``[c, x, y, z]``).
The documented linear order on disk is x fastest, which is Fortran order of
the ``(nx, ny, nz)`` array. Arrays are copied on construction and marked
read-only, so instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt

from .exceptions import ConfigError, NonFiniteError, ShapeMismatchError
from .types import Dims3, DoubleArray, FloatArray, IntArray, Spacing3

__all__ = [
    "Volume3D",
    "LabelVolume",
    "FeatureVolume",
    "DisplacementField",
    "LandmarkSet",
    "node_count",
    "node_positions",
]


def _frozen(array: npt.NDArray[Any]) -> npt.NDArray[Any]:
    array.setflags(write=False)
    return array


def _check_spacing(spacing: tuple[float, ...]) -> Spacing3:
    if len(spacing) != 3:
        raise ShapeMismatchError("spacing length", 3, len(spacing))
    values = tuple(float(s) for s in spacing)
    if not all(np.isfinite(s) and s > 0 for s in values):
        raise ConfigError("spacing", f"all components must be positive, got {values}")
    return (values[0], values[1], values[2])


def _check_finite(array: npt.NDArray[Any], what: str) -> None:
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(what, f"{int(np.size(array) - np.isfinite(array).sum())} values")


def node_count(n: int, stride: int) -> int:
    """Number of cell-centred grid nodes ``g*stride + stride//2`` inside ``[0, n)``."""
    offset = stride // 2
    if n <= offset:
        return 0
    return (n - 1 - offset) // stride + 1


def node_positions(n: int, stride: int) -> npt.NDArray[np.intp]:
    """Voxel positions of the grid nodes along one axis."""
    return np.arange(node_count(n, stride), dtype=np.intp) * stride + stride // 2


@dataclass(frozen=True, slots=True, eq=False)
class Volume3D:
    """Dense scalar volume with per-axis physical spacing in mm.

    Args:
        data: Array of shape ``(nx, ny, nz)``; converted to float32.
        spacing: Millimetres per voxel along x, y and z.
        affine: Optional 4x4 orientation matrix, passed through on save only.
    """

    data: FloatArray
    spacing: Spacing3 = (1.0, 1.0, 1.0)
    affine: DoubleArray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ShapeMismatchError("volume rank", 3, data.ndim)
        _check_finite(data, "volume")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims3:
        nx, ny, nz = self.data.shape
        return (nx, ny, nz)

    def __repr__(self) -> str:
        return f"Volume3D(dims={self.dims}, spacing={self.spacing})"


@dataclass(frozen=True, slots=True, eq=False)
class LabelVolume:
    """Integer class labels on a voxel grid; label 0 is background.

    The native integer dtype is preserved so label files round-trip exactly.
    ``num_classes`` defaults to ``max(label) + 1``.
    """

    data: IntArray
    spacing: Spacing3 = (1.0, 1.0, 1.0)
    num_classes: int | None = None
    affine: DoubleArray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        data = np.array(self.data)
        if data.dtype.kind not in "iu":
            if data.dtype.kind == "f" and np.all(np.mod(data, 1) == 0):
                data = data.astype(np.int32)
            else:
                raise ConfigError("labels", f"integer data required, got {data.dtype}")
        if data.ndim != 3:
            raise ShapeMismatchError("label volume rank", 3, data.ndim)
        if data.size and int(data.min()) < 0:
            raise ConfigError("labels", "negative labels are not allowed")
        top = int(data.max()) if data.size else 0
        classes = top + 1 if self.num_classes is None else int(self.num_classes)
        if top >= classes:
            raise ConfigError(
                "num_classes", f"label {top} observed but num_classes={classes}"
            )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "num_classes", classes)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims3:
        nx, ny, nz = self.data.shape
        return (nx, ny, nz)

    @property
    def classes(self) -> int:
        """Number of classes K (every label lies in ``[0, K)``)."""
        assert self.num_classes is not None
        return self.num_classes

    def present(self) -> set[int]:
        """Labels that actually occur in the volume."""
        return {int(v) for v in np.unique(self.data)}

    def __repr__(self) -> str:
        return f"LabelVolume(dims={self.dims}, num_classes={self.num_classes})"


@dataclass(frozen=True, slots=True, eq=False)
class FeatureVolume:
    """Multi-channel feature grid, array shape ``(C, nx, ny, nz)``."""

    data: FloatArray
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32)
        if data.ndim != 4:
            raise ShapeMismatchError("feature volume rank", 4, data.ndim)
        _check_finite(data, "features")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> Dims3:
        _, nx, ny, nz = self.data.shape
        return (nx, ny, nz)

    @property
    def channels(self) -> int:
        return int(self.data.shape[0])

    def channel(self, c: int) -> FloatArray:
        return self.data[c]

    def __repr__(self) -> str:
        return f"FeatureVolume(channels={self.channels}, dims={self.dims})"


@dataclass(frozen=True, slots=True, eq=False)
class DisplacementField:
    """Per-node displacement vectors in voxels of the fixed image.

    ``vectors`` has shape ``(3, gx, gy, gz)``. With ``stride == 1`` the grid is
    the full-resolution voxel grid; otherwise node ``g`` sits at voxel
    ``g*stride + stride//2`` along each axis.
    """

    vectors: FloatArray
    stride: int = 1
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float32)
        if vectors.ndim != 4 or vectors.shape[0] != 3:
            raise ShapeMismatchError("displacement shape", "(3, gx, gy, gz)", vectors.shape)
        if int(self.stride) < 1:
            raise ConfigError("stride", f"must be >= 1, got {self.stride}")
        _check_finite(vectors, "displacement")
        object.__setattr__(self, "vectors", _frozen(vectors))
        object.__setattr__(self, "stride", int(self.stride))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @classmethod
    def zeros(
        cls, grid_dims: Dims3, stride: int = 1, spacing: Spacing3 = (1.0, 1.0, 1.0)
    ) -> DisplacementField:
        """Identity transform on the given grid."""
        return cls(np.zeros((3, *grid_dims), dtype=np.float32), stride, spacing)

    @property
    def grid_dims(self) -> Dims3:
        _, gx, gy, gz = self.vectors.shape
        return (gx, gy, gz)

    @property
    def is_full_resolution(self) -> bool:
        return self.stride == 1

    def covers(self, dims: Dims3) -> bool:
        """Whether this grid is the node grid of a volume with ``dims``."""
        return self.grid_dims == tuple(node_count(n, self.stride) for n in dims)

    def __repr__(self) -> str:
        return f"DisplacementField(grid_dims={self.grid_dims}, stride={self.stride})"


@dataclass(frozen=True, slots=True, eq=False)
class LandmarkSet:
    """Continuous voxel coordinates, array shape ``(N, 3)``."""

    points: DoubleArray

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        _check_finite(points, "landmarks")
        object.__setattr__(self, "points", _frozen(points))

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    def outside(self, dims: Dims3) -> list[int]:
        """Indices of landmarks outside ``[0, dim-1]`` on any axis."""
        upper = np.asarray(dims, dtype=np.float64) - 1.0
        bad = np.any((self.points < 0.0) | (self.points > upper), axis=1)
        return [int(i) for i in np.flatnonzero(bad)]

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"LandmarkSet(count={self.count})"
