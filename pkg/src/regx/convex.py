"""Coupled convex regularisation of a cost volume and inverse-consistent symmetrisation."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .correlation import CostVolume, argmin_field, displacement_norms, select_minimum
from .exceptions import ShapeMismatchError
from .logging import logger
from .parallel import run_blocks
from .sampling import mean_filter, trilinear
from .types import DoubleArray
from .volume import DisplacementField

if TYPE_CHECKING:
    from .config import ConvexConfig

__all__ = ["coupled_convex", "symmetrise", "consistency_residual"]

# Nodes per argmin chunk; bounds the (nodes x displacements) scratch array.
_CHUNK = 1024


def coupled_convex(cv: CostVolume, cfg: ConvexConfig) -> DisplacementField:
    """Alternate a penalised per-node argmin with mean-filter smoothing.

    Starting from the smoothed plain argmin ``d0``, iteration ``i`` picks per
    node the lattice displacement minimising
    ``cost(g, d) + theta_i * |d - d_prev(g)|^2`` (voxel units; exact ties go
    to the displacement nearest zero, then the lowest index) and smooths the
    result with ``cfg.passes`` 3^3 mean-filter passes. The penalty is
    evaluated chunk by chunk over nodes, never as a second full cost volume.
    """
    table = cv.search.displacements().astype(np.float64)
    norms = displacement_norms(cv.search)
    grid = cv.grid_dims
    costs = cv.costs.reshape(-1, cv.search.count)
    nodes = costs.shape[0]

    smoothed = mean_filter(argmin_field(cv).vectors.astype(np.float64), cfg.passes)
    for theta in cfg.schedule:
        guide = smoothed.reshape(3, -1)
        chosen = np.empty((3, nodes), dtype=np.float64)

        def pick(block: range, guide: DoubleArray = guide, theta: float = theta) -> None:
            for start in range(block.start, block.stop, _CHUNK):
                stop = min(start + _CHUNK, block.stop)
                dx = table[np.newaxis, :, 0] - guide[0, start:stop, np.newaxis]
                dy = table[np.newaxis, :, 1] - guide[1, start:stop, np.newaxis]
                dz = table[np.newaxis, :, 2] - guide[2, start:stop, np.newaxis]
                penalty = (dx * dx + dy * dy) + dz * dz
                total = costs[start:stop].astype(np.float64) + theta * penalty
                chosen[:, start:stop] = table[select_minimum(total, norms)].T

        run_blocks(nodes, pick)
        smoothed = mean_filter(chosen.reshape(3, *grid), cfg.passes)
        logger.debug(f"convex step theta={theta:g}")

    return DisplacementField(smoothed.astype(np.float32), cv.stride, cv.spacing)


def _check_pair(fwd: DisplacementField, bwd: DisplacementField) -> None:
    if fwd.grid_dims != bwd.grid_dims:
        raise ShapeMismatchError("field grid dims", fwd.grid_dims, bwd.grid_dims)
    if fwd.stride != bwd.stride:
        raise ShapeMismatchError("field stride", fwd.stride, bwd.stride)


def _composed(
    field: DoubleArray, partner: DoubleArray, nodes: DoubleArray, stride: int
) -> DoubleArray:
    """``partner`` sampled at ``g + field(g) / stride`` in grid coordinates."""
    return trilinear(partner, nodes + field / stride)


def symmetrise(
    fwd: DisplacementField, bwd: DisplacementField, iterations: int = 10
) -> tuple[DisplacementField, DisplacementField]:
    """Jacobi iterations towards an inverse-consistent forward/backward pair.

    Each step sets ``fwd' = (fwd - bwd o (id + fwd)) / 2`` and
    ``bwd' = (bwd - fwd o (id + bwd)) / 2``, both from the previous pair.
    """
    _check_pair(fwd, bwd)
    nodes = np.indices(fwd.grid_dims, dtype=np.float64)
    f = fwd.vectors.astype(np.float64)
    b = bwd.vectors.astype(np.float64)
    s = fwd.stride
    for _ in range(iterations):
        f, b = (
            0.5 * (f - _composed(f, b, nodes, s)),
            0.5 * (b - _composed(b, f, nodes, s)),
        )
    return (
        DisplacementField(f.astype(np.float32), s, fwd.spacing),
        DisplacementField(b.astype(np.float32), s, bwd.spacing),
    )


def consistency_residual(fwd: DisplacementField, bwd: DisplacementField) -> float:
    """Largest ``|fwd + bwd o (id + fwd)|`` over the nodes, in voxels."""
    _check_pair(fwd, bwd)
    nodes = np.indices(fwd.grid_dims, dtype=np.float64)
    f = fwd.vectors.astype(np.float64)
    residual = f + _composed(f, bwd.vectors.astype(np.float64), nodes, fwd.stride)
    return float(np.sqrt((residual**2).sum(axis=0)).max())
