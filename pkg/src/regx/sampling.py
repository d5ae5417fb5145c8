"""Shared sampling and filtering primitives.

Border policy everywhere is replicate: coordinates and shifted indices are
clamped to the volume, and filters pad by repeating the edge voxel.
"""

from __future__ import annotations

from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .exceptions import ConfigError
from .volume import Volume3D

__all__ = [
    "box_filter",
    "mean_filter",
    "shift_replicate",
    "trilinear",
    "trilinear_sample",
    "trilinear_with_gradient",
]

type _Array = npt.NDArray[Any]


def box_filter(grid: _Array, radius: int | tuple[int, int, int]) -> _Array:
    """Moving average over a ``(2r+1)^3`` window with replicate padding.

    ``radius`` may be given per axis. Leading (channel) axes of ``grid`` are
    left alone; ``radius == 0`` returns an unchanged copy.
    """
    radii = (radius,) * 3 if isinstance(radius, int) else tuple(radius)
    if any(r < 0 for r in radii):
        raise ConfigError("radius", f"must be >= 0, got {radius}")
    size = (1,) * (grid.ndim - 3) + tuple(2 * r + 1 for r in radii)
    if all(s == 1 for s in size):
        return np.array(grid, copy=True)
    return ndimage.uniform_filter(grid, size=size, mode="nearest")


def mean_filter(grid: _Array, passes: int) -> _Array:
    """Apply ``passes`` rounds of the 3^3 mean filter (replicate padding)."""
    out = np.array(grid, copy=True)
    for _ in range(passes):
        out = box_filter(out, 1)
    return out


def shift_replicate(grid: _Array, offset: tuple[int, int, int]) -> _Array:
    """Return ``out[x] = grid[clamp(x + offset)]`` over the last three axes."""
    nx, ny, nz = grid.shape[-3:]
    ix = np.clip(np.arange(nx) + offset[0], 0, nx - 1)
    iy = np.clip(np.arange(ny) + offset[1], 0, ny - 1)
    iz = np.clip(np.arange(nz) + offset[2], 0, nz - 1)
    return grid[..., ix[:, None, None], iy[None, :, None], iz[None, None, :]]


def _axis_cell(
    coord: npt.NDArray[np.float64], n: int
) -> tuple[npt.NDArray[np.intp], npt.NDArray[np.intp], npt.NDArray[np.float64], npt.NDArray[np.bool_]]:
    # Lower corner is ceil(c) - 1: an integer c > 0 sits at the top of the
    # cell below it. c == 0 uses the first cell.
    clamped = np.clip(coord, 0.0, n - 1)
    if n == 1:
        zero = np.zeros(coord.shape, dtype=np.intp)
        return zero, zero, np.zeros(coord.shape), np.zeros(coord.shape, dtype=bool)
    i0 = np.clip(np.ceil(clamped).astype(np.intp) - 1, 0, n - 2)
    live = (coord >= 0.0) & (coord <= n - 1)
    return i0, i0 + 1, clamped - i0, live


def trilinear(grid: _Array, coords: _Array) -> npt.NDArray[np.float64]:
    """Trilinear interpolation of ``grid`` at ``coords``.

    Args:
        grid: Array ``(..., nx, ny, nz)``; leading axes are interpolated together.
        coords: Array ``(3, *S)`` of continuous voxel coordinates.

    Returns:
        Array ``(..., *S)`` in float64.
    """
    values, _ = _interpolate(grid, coords, with_gradient=False)
    return values


def trilinear_with_gradient(
    grid: _Array, coords: _Array
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Trilinear values and their exact derivatives with respect to ``coords``.

    Returns:
        ``(values, gradient)`` with shapes ``(..., *S)`` and ``(..., 3, *S)``.
        The derivative is zero along an axis where the coordinate was clamped.
    """
    values, gradient = _interpolate(grid, coords, with_gradient=True)
    assert gradient is not None
    return values, gradient


def _interpolate(
    grid: _Array, coords: _Array, *, with_gradient: bool
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64] | None]:
    coords = np.asarray(coords, dtype=np.float64)
    nx, ny, nz = grid.shape[-3:]
    x0, x1, fx, lx = _axis_cell(coords[0], nx)
    y0, y1, fy, ly = _axis_cell(coords[1], ny)
    z0, z1, fz, lz = _axis_cell(coords[2], nz)

    c000 = grid[..., x0, y0, z0]
    c100 = grid[..., x1, y0, z0]
    c010 = grid[..., x0, y1, z0]
    c110 = grid[..., x1, y1, z0]
    c001 = grid[..., x0, y0, z1]
    c101 = grid[..., x1, y0, z1]
    c011 = grid[..., x0, y1, z1]
    c111 = grid[..., x1, y1, z1]

    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c00 = c000 * gx + c100 * fx
    c10 = c010 * gx + c110 * fx
    c01 = c001 * gx + c101 * fx
    c11 = c011 * gx + c111 * fx
    c0 = c00 * gy + c10 * fy
    c1 = c01 * gy + c11 * fy
    values = np.asarray(c0 * gz + c1 * fz, dtype=np.float64)
    if not with_gradient:
        return values, None

    dx = (
        (c100 - c000) * gy * gz
        + (c110 - c010) * fy * gz
        + (c101 - c001) * gy * fz
        + (c111 - c011) * fy * fz
    ) * lx
    dy = ((c10 - c00) * gz + (c11 - c01) * fz) * ly
    dz = (c1 - c0) * lz
    axis = values.ndim - coords.ndim + 1
    gradient = np.stack([dx, dy, dz], axis=axis).astype(np.float64, copy=False)
    return values, gradient


def trilinear_sample(
    vol: Volume3D | _Array, point: tuple[float, float, float]
) -> float:
    """Sample one scalar at a continuous voxel coordinate.

    Coordinates are clamped per axis to ``[0, n-1]`` first, so out-of-bounds
    points read the border plane.
    """
    grid = vol.data if isinstance(vol, Volume3D) else np.asarray(vol)
    coords = np.asarray(point, dtype=np.float64).reshape(3)
    return float(trilinear(grid, coords))
