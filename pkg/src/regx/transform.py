"""Applying displacement fields and measuring their plausibility."""

from __future__ import annotations

from enum import IntEnum
from typing import overload

import numpy as np
from scipy import ndimage

from .exceptions import ConfigError, ShapeMismatchError
from .instance import smooth_and_upsample
from .types import Dims3, DoubleArray
from .volume import DisplacementField, LabelVolume, Volume3D

__all__ = [
    "Interpolation",
    "warp",
    "upsample",
    "jacobian_determinant",
    "sdlogj",
    "folding_fraction",
]

_LOG_CLAMP = (1e-6, 1e6)


class Interpolation(IntEnum):
    """Resampling scheme for :func:`warp`; the value is the spline order.

    Values:
        NEAREST: Nearest voxel, required for label volumes.
        LINEAR: Trilinear interpolation.
    """

    NEAREST = 0
    LINEAR = 1

    @classmethod
    def analyze(cls, vol: Volume3D | LabelVolume) -> Interpolation:
        """Default scheme for a volume: nearest for labels, linear otherwise."""
        match vol:
            case LabelVolume():
                return cls.NEAREST
            case _:
                return cls.LINEAR

    @classmethod
    def parse(cls, name: str | Interpolation) -> Interpolation:
        if isinstance(name, Interpolation):
            return name
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigError(
                "interpolation", f"expected 'linear' or 'nearest', got '{name}'"
            ) from None

    @property
    def label(self) -> str:
        return self.name.lower()


def upsample(field: DisplacementField, dims: Dims3, passes: int = 0) -> DisplacementField:
    """Full-resolution version of ``field`` on a ``dims`` voxel grid.

    Full-resolution fields are returned as they are after a grid check.
    """
    if field.is_full_resolution:
        if field.grid_dims != dims:
            raise ShapeMismatchError("field dims", dims, field.grid_dims)
        return field
    return smooth_and_upsample(field.vectors, field.stride, passes, dims, field.spacing)


def _sample_coords(disp: DisplacementField) -> DoubleArray:
    grid = np.indices(disp.grid_dims, dtype=np.float64)
    return grid + disp.vectors.astype(np.float64)


@overload
def warp(
    vol: Volume3D, disp: DisplacementField, interp: Interpolation | None = None
) -> Volume3D: ...
@overload
def warp(
    vol: LabelVolume, disp: DisplacementField, interp: Interpolation | None = None
) -> LabelVolume: ...
def warp(
    vol: Volume3D | LabelVolume,
    disp: DisplacementField,
    interp: Interpolation | None = None,
) -> Volume3D | LabelVolume:
    """Resample ``vol`` at ``x + u(x)``; coordinates outside clamp to the border.

    Raises:
        ShapeMismatchError: The field is coarse or its grid differs from ``vol``.
        ConfigError: Linear interpolation was requested for a label volume.
    """
    interp = Interpolation.analyze(vol) if interp is None else interp
    if not disp.is_full_resolution:
        raise ShapeMismatchError("field stride", 1, disp.stride)
    if disp.grid_dims != vol.dims:
        raise ShapeMismatchError("field dims", vol.dims, disp.grid_dims)

    coords = _sample_coords(disp)
    match vol:
        case LabelVolume():
            if interp is not Interpolation.NEAREST:
                raise ConfigError("interpolation", "label volumes need nearest interpolation")
            labels = ndimage.map_coordinates(vol.data, coords, order=0, mode="nearest")
            return LabelVolume(labels, vol.spacing, vol.num_classes, vol.affine)
        case Volume3D():
            values = ndimage.map_coordinates(
                vol.data.astype(np.float64), coords, order=int(interp), mode="nearest"
            )
            return Volume3D(values.astype(np.float32), vol.spacing, vol.affine)


def _determinant(disp: DisplacementField, physical: bool) -> DoubleArray:
    if not disp.is_full_resolution:
        raise ShapeMismatchError("field stride", 1, disp.stride)
    if min(disp.grid_dims) < 3:
        raise ShapeMismatchError("field dims", ">= 3 per axis", disp.grid_dims)
    u = disp.vectors.astype(np.float64)
    spacing = np.asarray(disp.spacing) if physical else np.ones(3)
    # jac[i][j] = d(x_i + u_i) / d x_j
    jac = [
        [
            np.gradient(u[i] * spacing[i], spacing[j], axis=j) + (1.0 if i == j else 0.0)
            for j in range(3)
        ]
        for i in range(3)
    ]
    det = (
        jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
        - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
        + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
    )
    return det


def jacobian_determinant(disp: DisplacementField, *, physical: bool = False) -> Volume3D:
    """``det(I + grad u)`` per voxel, central differences (one-sided at borders).

    With ``physical`` the gradient is taken in millimetres; the determinant is
    the same because the spacing scaling is a similarity transform.
    """
    return Volume3D(_determinant(disp, physical).astype(np.float32), disp.spacing)


def _interior_jacobian(disp: DisplacementField) -> DoubleArray:
    return _determinant(disp, physical=False)[1:-1, 1:-1, 1:-1]


def sdlogj(disp: DisplacementField) -> float:
    """Population standard deviation of ``log(clamp(J))`` over interior voxels."""
    det = _interior_jacobian(disp)
    return float(np.std(np.log(np.clip(det, *_LOG_CLAMP))))


def folding_fraction(disp: DisplacementField) -> float:
    """Share of interior voxels whose Jacobian determinant is not positive."""
    det = _interior_jacobian(disp)
    return float(np.mean(det <= 0.0))
