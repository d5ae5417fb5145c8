"""Adam instance optimisation on a coarse displacement grid.

The coarse parameters are turned into a dense field by a linear operator:
``k`` passes of the 3^3 mean filter (replicate padding) followed by trilinear
upsampling. Both steps are separable, so the operator is stored as one small
matrix per axis and its adjoint is the transposed matrices.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
import numpy.typing as npt

from .exceptions import NonFiniteError, ShapeMismatchError
from .logging import log_adam_iteration, logger
from .sampling import trilinear_with_gradient
from .types import Dims3, DoubleArray, Spacing3
from .volume import DisplacementField, FeatureVolume, node_count

if TYPE_CHECKING:
    from .config import InstanceOptConfig

__all__ = [
    "GridOperator",
    "smooth_and_upsample",
    "InstanceObjective",
    "loss_and_gradient",
    "AdamState",
    "adam_minimise",
    "adam_optimise",
    "InstanceOptResult",
]

type Objective = Callable[[DoubleArray], tuple[float, DoubleArray]]


def _smoothing_matrix(g: int) -> DoubleArray:
    """One pass of the 3-tap mean with replicate padding."""
    matrix = np.zeros((g, g))
    for i in range(g):
        for j in (max(i - 1, 0), i, min(i + 1, g - 1)):
            matrix[i, j] += 1.0 / 3.0
    return matrix


def _upsampling_matrix(n: int, g: int, stride: int) -> DoubleArray:
    """Linear interpolation from ``g`` cell-centred nodes onto ``n`` voxels."""
    t = np.clip((np.arange(n) - stride // 2) / stride, 0.0, g - 1)
    matrix = np.zeros((n, g))
    if g == 1:
        matrix[:, 0] = 1.0
        return matrix
    lower = np.minimum(np.floor(t).astype(np.intp), g - 2)
    frac = t - lower
    rows = np.arange(n)
    matrix[rows, lower] += 1.0 - frac
    matrix[rows, lower + 1] += frac
    return matrix


@dataclass(frozen=True, slots=True, eq=False)
class GridOperator:
    """Separable smooth-then-upsample operator ``A = Ax (x) Ay (x) Az``.

    Each ``A_a`` is ``U_a @ S_a^k``; ``sample_stride`` keeps every n-th voxel
    row so the loss can be evaluated on a subsampled grid.
    """

    axes: tuple[DoubleArray, DoubleArray, DoubleArray]
    grid_dims: Dims3
    dims: Dims3

    @classmethod
    def build(
        cls, grid_dims: Dims3, stride: int, passes: int, dims: Dims3, sample_stride: int = 1
    ) -> GridOperator:
        expected = tuple(node_count(n, stride) for n in dims)
        if tuple(grid_dims) != expected:
            raise ShapeMismatchError(f"grid dims for stride {stride}", expected, grid_dims)
        mats: list[DoubleArray] = []
        for n, g in zip(dims, grid_dims, strict=True):
            smooth = np.linalg.matrix_power(_smoothing_matrix(g), passes)
            mats.append((_upsampling_matrix(n, g, stride) @ smooth)[::sample_stride])
        return cls((mats[0], mats[1], mats[2]), grid_dims, dims)

    @property
    def sample_dims(self) -> Dims3:
        return (self.axes[0].shape[0], self.axes[1].shape[0], self.axes[2].shape[0])

    def apply(self, params: npt.NDArray[Any]) -> DoubleArray:
        """``(3, gx, gy, gz)`` parameters to a ``(3, *sample_dims)`` field."""
        ax, ay, az = self.axes
        out = np.einsum("xi,cijk->cxjk", ax, params)
        out = np.einsum("yj,cxjk->cxyk", ay, out)
        return np.einsum("zk,cxyk->cxyz", az, out)

    def adjoint(self, field: npt.NDArray[Any]) -> DoubleArray:
        """Transpose of :meth:`apply`."""
        ax, ay, az = self.axes
        out = np.einsum("zk,cxyz->cxyk", az, field)
        out = np.einsum("yj,cxyk->cxjk", ay, out)
        return np.einsum("xi,cxjk->cijk", ax, out)


def smooth_and_upsample(
    params: npt.ArrayLike,
    stride: int,
    passes: int,
    dims: Dims3,
    spacing: Spacing3 = (1.0, 1.0, 1.0),
) -> DisplacementField:
    """Mean-filter coarse parameters ``passes`` times and upsample to ``dims``.

    Node ``g`` sits at voxel ``g*stride + stride//2``; voxel ``x`` reads grid
    coordinate ``clamp((x - stride//2) / stride, 0, g-1)``.

    Raises:
        ShapeMismatchError: The parameter grid is not the node grid of ``dims``.
    """
    grid = np.asarray(params, dtype=np.float64)
    if grid.ndim != 4 or grid.shape[0] != 3:
        raise ShapeMismatchError("parameter shape", "(3, gx, gy, gz)", grid.shape)
    _, gx, gy, gz = grid.shape
    op = GridOperator.build((gx, gy, gz), stride, passes, dims)
    return DisplacementField(op.apply(grid).astype(np.float32), 1, spacing)


class InstanceObjective:
    """Similarity plus diffusion loss of coarse parameters, with its gradient.

    The loss is ``L_sim + lambda * L_diff`` where ``L_sim`` is the mean squared
    feature difference after warping the moving features with the upsampled
    field, and ``L_diff`` is the mean squared difference across 6-neighbour
    edges of the raw parameters divided by ``stride**2``. Everything is
    accumulated in float64.
    """

    __slots__ = ("_op", "_fixed", "_moving", "_base", "_stride", "_weight", "_grid_dims")

    def __init__(
        self,
        f_fixed: FeatureVolume,
        f_moving: FeatureVolume,
        grid_dims: Dims3,
        stride: int,
        cfg: InstanceOptConfig,
    ) -> None:
        if f_fixed.dims != f_moving.dims:
            raise ShapeMismatchError("feature dims", f_fixed.dims, f_moving.dims)
        if f_fixed.channels != f_moving.channels:
            raise ShapeMismatchError("feature channels", f_fixed.channels, f_moving.channels)
        ss = cfg.sample_stride
        self._op = GridOperator.build(
            grid_dims, stride, cfg.smoothing_passes, f_fixed.dims, sample_stride=ss
        )
        self._fixed = f_fixed.data[:, ::ss, ::ss, ::ss].astype(np.float64)
        self._moving = f_moving.data.astype(np.float64)
        self._base = np.stack(
            np.meshgrid(*(np.arange(0, n, ss, dtype=np.float64) for n in f_fixed.dims), indexing="ij")
        )
        self._stride = stride
        self._weight = cfg.diffusion_weight
        self._grid_dims = grid_dims

    def similarity(self, params: DoubleArray) -> tuple[float, DoubleArray]:
        u = self._op.apply(params)
        warped, dwarp = trilinear_with_gradient(self._moving, self._base + u)
        residual = warped - self._fixed
        count = residual.size
        loss = float(np.sum(residual**2) / count)
        d_field = np.einsum("cxyz,caxyz->axyz", residual, dwarp) * (2.0 / count)
        return loss, self._op.adjoint(d_field)

    def diffusion(self, params: DoubleArray) -> tuple[float, DoubleArray]:
        edges = sum(
            (g - 1) * int(np.prod(self._grid_dims)) // g for g in self._grid_dims
        )
        grad = np.zeros_like(params)
        if edges == 0:
            return 0.0, grad
        scale = 1.0 / (self._stride**2 * edges)
        total = 0.0
        for axis in (1, 2, 3):
            delta = np.diff(params, axis=axis)
            total += float(np.sum(delta**2))
            head = [slice(None)] * 4
            tail = [slice(None)] * 4
            head[axis] = slice(1, None)
            tail[axis] = slice(None, -1)
            grad[tuple(head)] += 2.0 * scale * delta
            grad[tuple(tail)] -= 2.0 * scale * delta
        return total * scale, grad

    def __call__(self, params: DoubleArray) -> tuple[float, DoubleArray]:
        sim, grad = self.similarity(params)
        if self._weight == 0.0:
            return sim, grad
        diff, diff_grad = self.diffusion(params)
        return sim + self._weight * diff, grad + self._weight * diff_grad


def loss_and_gradient(
    params: npt.ArrayLike,
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    cfg: InstanceOptConfig,
    *,
    stride: int,
) -> tuple[float, DoubleArray]:
    """Loss and its exact gradient with respect to ``(3, gx, gy, gz)`` parameters.

    At an exact lattice coordinate ``c > 0`` the sampling derivative comes from
    the cell below it, ``[c - 1, c]``; it is zero along clamped axes.
    """
    grid = np.asarray(params, dtype=np.float64)
    if grid.ndim != 4 or grid.shape[0] != 3:
        raise ShapeMismatchError("parameter shape", "(3, gx, gy, gz)", grid.shape)
    _, gx, gy, gz = grid.shape
    return InstanceObjective(f_fixed, f_moving, (gx, gy, gz), stride, cfg)(grid)


@dataclass(frozen=True, slots=True, eq=False)
class AdamState:
    """Bias-corrected Adam moments and step counter."""

    m: DoubleArray
    v: DoubleArray
    t: int = 0

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> AdamState:
        return cls(np.zeros(shape), np.zeros(shape), 0)

    def step(
        self, grad: DoubleArray, cfg: InstanceOptConfig
    ) -> tuple[AdamState, DoubleArray]:
        """Advance one step; returns the new state and the update to subtract."""
        t = self.t + 1
        m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * grad**2
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        update = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        return AdamState(m, v, t), update


def adam_minimise(
    objective: Objective, init: npt.ArrayLike, cfg: InstanceOptConfig
) -> tuple[DoubleArray, list[float]]:
    """Run ``cfg.iterations`` Adam steps on ``objective``.

    Returns:
        Final parameters and the loss evaluated at the start of every step.

    Raises:
        NonFiniteError: The loss or gradient became NaN or infinite.
    """
    params = np.array(init, dtype=np.float64)
    state = AdamState.zeros(params.shape)
    losses: list[float] = []
    for iteration in range(1, cfg.iterations + 1):
        loss, grad = objective(params)
        if not np.isfinite(loss):
            raise NonFiniteError("instance", f"loss is {loss}", iteration)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("instance", "gradient has non-finite entries", iteration)
        log_adam_iteration(iteration, loss)
        losses.append(loss)
        state, update = state.step(grad, cfg)
        params = params - update
    return params, losses


@dataclass(frozen=True, slots=True)
class InstanceOptResult:
    """Refined coarse field and the per-iteration loss trace."""

    field: DisplacementField
    losses: tuple[float, ...]


def adam_optimise(
    init: DisplacementField,
    f_fixed: FeatureVolume,
    f_moving: FeatureVolume,
    cfg: InstanceOptConfig,
) -> InstanceOptResult:
    """Refine a coarse field by Adam on :class:`InstanceObjective`.

    With ``cfg.iterations == 0`` the initial field is returned unchanged.
    """
    if not init.covers(f_fixed.dims):
        raise ShapeMismatchError(
            f"grid dims for stride {init.stride}",
            tuple(node_count(n, init.stride) for n in f_fixed.dims),
            init.grid_dims,
        )
    if cfg.iterations == 0:
        return InstanceOptResult(init, ())
    objective = InstanceObjective(f_fixed, f_moving, init.grid_dims, init.stride, cfg)
    params, losses = adam_minimise(objective, init.vectors, cfg)
    logger.info(
        f"Instance optimisation: {len(losses)} steps, loss {losses[0]:.6g} -> {losses[-1]:.6g}"
    )
    field = DisplacementField(params.astype(np.float32), init.stride, init.spacing)
    return InstanceOptResult(field, tuple(losses))
