"""Dense discretised-displacement SSD cost volume and its per-node argmin."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .exceptions import BudgetExceededError, ConfigError, ShapeMismatchError
from .io import save_volume
from .logging import logger
from .parallel import get_worker_count, run_blocks
from .types import Dims3, FloatArray, IntArray, Spacing3
from .volume import DisplacementField, FeatureVolume, Volume3D, node_count

__all__ = [
    "DEFAULT_BUDGET",
    "SearchSpace",
    "CostVolume",
    "build_cost_volume",
    "argmin_field",
    "displacement_norms",
    "select_minimum",
    "normalise_costs",
    "dump_cost_slice",
]

DEFAULT_BUDGET = 5000

# Nodes per argmin chunk; bounds the tie-break scratch array.
_ROWS = 1024


@dataclass(frozen=True, slots=True)
class SearchSpace:
    """Symmetric displacement lattice ``{-L*q, ..., L*q}`` per axis.

    Args:
        extent: Steps ``(Lx, Ly, Lz)`` in each direction.
        quantisation: Voxels per step.

    Displacements are enumerated lexicographically in ``(dz, dy, dx)``, so dx
    varies fastest; index 0 is ``(-Lx*q, -Ly*q, -Lz*q)`` and the centre index
    is the zero displacement.
    """

    extent: tuple[int, int, int]
    quantisation: int = 1

    def __post_init__(self) -> None:
        extent = tuple(int(v) for v in self.extent)
        if len(extent) != 3 or any(v < 0 for v in extent):
            raise ConfigError("extent", f"need three non-negative steps, got {self.extent}")
        if int(self.quantisation) < 1:
            raise ConfigError("quantisation", f"must be >= 1, got {self.quantisation}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "quantisation", int(self.quantisation))

    @classmethod
    def from_capture(
        cls,
        capture_mm: tuple[float, float, float],
        spacing: Spacing3,
        budget: int = DEFAULT_BUDGET,
        quantisation: int | None = None,
    ) -> SearchSpace:
        """Smallest-quantisation lattice covering a capture range in mm.

        Per axis ``L = ceil(capture / (q * spacing))``; ``q`` is the smallest
        integer whose displacement count fits ``budget`` unless given.

        Raises:
            ConfigError: A capture range is not positive.
            BudgetExceededError: No admissible quantisation fits the budget.
        """
        if any(not c > 0 for c in capture_mm):
            raise ConfigError("capture_mm", f"all components must be positive, got {capture_mm}")

        def extent_for(q: int) -> tuple[int, int, int]:
            lx, ly, lz = (
                max(1, math.ceil(c / (q * s) - 1e-9))
                for c, s in zip(capture_mm, spacing, strict=True)
            )
            return (lx, ly, lz)

        if quantisation is not None:
            space = cls(extent_for(quantisation), quantisation)
            if space.count > budget:
                raise BudgetExceededError(space.count, budget, space.extent, quantisation)
            return space

        q = 1
        while True:
            space = cls(extent_for(q), q)
            if space.count <= budget:
                logger.info(
                    f"Search space for capture {capture_mm} mm: extent {space.extent}, "
                    f"quantisation {q}, {space.count} displacements"
                )
                return space
            if all(v == 1 for v in space.extent):
                raise BudgetExceededError(space.count, budget, space.extent, q)
            q += 1

    @property
    def count(self) -> int:
        lx, ly, lz = self.extent
        return (2 * lx + 1) * (2 * ly + 1) * (2 * lz + 1)

    @property
    def centre(self) -> int:
        """Index of the zero displacement."""
        return self.count // 2

    @property
    def shape(self) -> tuple[int, int, int]:
        """Lattice size ``(2Lx+1, 2Ly+1, 2Lz+1)``."""
        lx, ly, lz = self.extent
        return (2 * lx + 1, 2 * ly + 1, 2 * lz + 1)

    @property
    def max_displacement(self) -> tuple[int, int, int]:
        """Largest displacement in voxels per axis."""
        q = self.quantisation
        return (self.extent[0] * q, self.extent[1] * q, self.extent[2] * q)

    def displacements(self) -> IntArray:
        """All displacements in voxels, array ``(count, 3)`` as ``(dx, dy, dz)``."""
        rx, ry, rz = (
            np.arange(-m, m + 1, self.quantisation) for m in self.max_displacement
        )
        dz, dy, dx = np.meshgrid(rz, ry, rx, indexing="ij")
        return np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=-1).astype(np.int64)


@dataclass(frozen=True, slots=True, eq=False)
class CostVolume:
    """Per-node costs over a search space, array ``(gx, gy, gz, count)``."""

    costs: FloatArray
    stride: int
    search: SearchSpace
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        costs = np.asarray(self.costs, dtype=np.float32)
        if costs.ndim != 4 or costs.shape[3] != self.search.count:
            raise ShapeMismatchError(
                "cost volume shape", f"(gx, gy, gz, {self.search.count})", costs.shape
            )
        if not np.all(np.isfinite(costs)) or (costs.size and float(costs.min()) < 0.0):
            raise ConfigError("costs", "must be finite and non-negative")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)

    @property
    def grid_dims(self) -> Dims3:
        gx, gy, gz, _ = self.costs.shape
        return (gx, gy, gz)

    def __repr__(self) -> str:
        return (
            f"CostVolume(grid_dims={self.grid_dims}, stride={self.stride}, "
            f"displacements={self.search.count})"
        )


def _check_pair(f_fixed: FeatureVolume, f_moving: FeatureVolume) -> None:
    if f_fixed.dims != f_moving.dims:
        raise ShapeMismatchError("feature dims", f_fixed.dims, f_moving.dims)
    if f_fixed.channels != f_moving.channels:
        raise ShapeMismatchError("feature channels", f_fixed.channels, f_moving.channels)


def build_cost_volume(
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    stride: int,
    search: SearchSpace,
    patch_radius: int = 1,
) -> CostVolume:
    """SSD cost of every displacement at every node ``g*stride + stride//2``.

    ``cost(g, d)`` is the mean over channels and the ``(2p+1)^3`` patch of the
    squared difference between the fixed features at ``clamp(x_g + w)`` and
    the moving features at ``clamp(x_g + w + d)``. Both volumes are padded far
    enough that the box filter never reaches its own border, so costs are exact
    next to the volume edge too.

    Raises:
        ShapeMismatchError: Feature dims or channels differ, or the node grid
            is empty.
        ConfigError: ``stride < 1`` or ``patch_radius < 0``.
    """
    _check_pair(f_fixed, f_moving)
    if stride < 1:
        raise ConfigError("grid_stride", f"must be >= 1, got {stride}")
    if patch_radius < 0:
        raise ConfigError("patch_radius", f"must be >= 0, got {patch_radius}")

    grid = tuple(node_count(n, stride) for n in f_fixed.dims)
    if min(grid) == 0:
        raise ShapeMismatchError("node grid", "non-empty", grid)
    gx, gy, gz = grid

    p = patch_radius
    reach = search.max_displacement
    fixed = np.pad(
        f_fixed.data.astype(np.float64), ((0, 0), (p, p), (p, p), (p, p)), mode="edge"
    )
    moving = np.pad(
        f_moving.data.astype(np.float64),
        ((0, 0), *((p + m, p + m) for m in reach)),
        mode="edge",
    )
    nx, ny, nz = fixed.shape[1:]
    offsets = search.displacements()
    first = stride // 2 + p
    picks = tuple(slice(first, first + g * stride, stride) for g in grid)
    costs = np.empty((gx, gy, gz, search.count), dtype=np.float32)

    def fill(block: range) -> None:
        for k in block:
            dx, dy, dz = (int(v) for v in offsets[k])
            window = moving[
                :,
                reach[0] + dx : reach[0] + dx + nx,
                reach[1] + dy : reach[1] + dy + ny,
                reach[2] + dz : reach[2] + dz + nz,
            ]
            sq = np.mean((fixed - window) ** 2, axis=0)
            if p > 0:
                sq = ndimage.uniform_filter(sq, size=2 * p + 1, mode="nearest")
            costs[..., k] = sq[picks]

    logger.info(
        f"Building cost volume: {grid} nodes x {search.count} displacements "
        f"on {get_worker_count()} worker(s)"
    )
    run_blocks(search.count, fill)
    # Rounding in the box filter can leave -0.0 or tiny negatives.
    np.maximum(costs, 0.0, out=costs)
    return CostVolume(costs, stride, search, f_fixed.spacing)


def _displacement_vectors(cv: CostVolume, index: npt.NDArray[Any]) -> FloatArray:
    table = cv.search.displacements().astype(np.float32)
    return np.moveaxis(table[index], -1, 0)


def displacement_norms(search: SearchSpace) -> IntArray:
    """Squared length ``dx^2 + dy^2 + dz^2`` of every lattice displacement."""
    table = search.displacements()
    return (table**2).sum(axis=1)


def select_minimum(rows: npt.NDArray[Any], norms: IntArray) -> IntArray:
    """Row-wise argmin; exact ties go to the displacement nearest zero.

    Among tied displacements of equal length the lowest index wins, so a
    constant row selects the zero displacement.
    """
    best = rows.min(axis=-1, keepdims=True)
    tied = np.where(rows == best, norms, np.iinfo(np.int64).max)
    return np.argmin(tied, axis=-1)


def argmin_field(cv: CostVolume) -> DisplacementField:
    """Per-node displacement of minimal cost.

    Exact ties resolve to the displacement nearest zero, then to the lowest
    index; featureless nodes with constant cost rows therefore stay still.
    """
    norms = displacement_norms(cv.search)
    rows = cv.costs.reshape(-1, cv.search.count)
    index = np.empty(rows.shape[0], dtype=np.intp)
    for start in range(0, rows.shape[0], _ROWS):
        index[start : start + _ROWS] = select_minimum(rows[start : start + _ROWS], norms)
    vectors = _displacement_vectors(cv, index.reshape(cv.grid_dims))
    return DisplacementField(vectors, cv.stride, cv.spacing)


def normalise_costs(cv: CostVolume) -> CostVolume:
    """Divide all costs by their global mean (left alone if the mean is 0)."""
    mean = float(cv.costs.mean(dtype=np.float64))
    if mean == 0.0:
        return cv
    scaled = (cv.costs.astype(np.float64) / mean).astype(np.float32)
    return CostVolume(scaled, cv.stride, cv.search, cv.spacing)


def dump_cost_slice(cv: CostVolume, node: Dims3, path: str | Path) -> None:
    """Write one node's costs as a ``(2Lx+1, 2Ly+1, 2Lz+1)`` volume.

    The lattice spacing is the quantisation times the image spacing, so the
    dump opens in a viewer at physical scale.
    """
    if any(not 0 <= i < g for i, g in zip(node, cv.grid_dims, strict=True)):
        raise ShapeMismatchError("node index", f"inside {cv.grid_dims}", node)
    sx, sy, sz = cv.search.shape
    row = cv.costs[node[0], node[1], node[2]].reshape(sz, sy, sx)
    q = cv.search.quantisation
    spacing = (cv.spacing[0] * q, cv.spacing[1] * q, cv.spacing[2] * q)
    save_volume(Volume3D(row.transpose(2, 1, 0), spacing), path)
