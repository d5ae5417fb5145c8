"""End-to-end registration and evaluation.

Stage order is fixed: features, correlation, convex, then (with inverse
consistency) backward and symmetrise, then instance and upsample.
"""

from __future__ import annotations

import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field

from .config import RegistrationConfig
from .convex import consistency_residual, coupled_convex, symmetrise
from .correlation import SearchSpace, build_cost_volume, normalise_costs
from .exceptions import ConfigError, EvaluationError, ShapeMismatchError
from .features import extract_features
from .instance import adam_optimise, smooth_and_upsample
from .logging import log_performance_metric, logger
from .metrics import (
    DiceScores,
    MetricReport,
    SurfaceDistances,
    TreResult,
    dice,
    hd95_scores,
    tre,
)
from .protocols import SpacedGrid
from .transform import Interpolation, folding_fraction, sdlogj, warp
from .types import Spacing3
from .volume import DisplacementField, LabelVolume, LandmarkSet, Volume3D

__all__ = ["Diagnostics", "RegistrationResult", "register", "evaluate"]


@dataclass(slots=True)
class Diagnostics:
    """What a registration run did and how long each stage took (seconds)."""

    search: SearchSpace
    timing: dict[str, float] = field(default_factory=dict)
    adam_losses: tuple[float, ...] = ()
    residual_before: float | None = None
    residual_after: float | None = None

    @property
    def stages(self) -> list[str]:
        return list(self.timing)

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        logger.info(f"Stage '{name}' started")
        start = time.perf_counter()
        yield
        elapsed = time.perf_counter() - start
        self.timing[name] = elapsed
        log_performance_metric(name, elapsed * 1000)


@dataclass(frozen=True, slots=True)
class RegistrationResult:
    """Full-resolution field, the coarse field it came from, and diagnostics."""

    field: DisplacementField
    coarse: DisplacementField
    diagnostics: Diagnostics


def _check_grid(what: str, reference: SpacedGrid, other: SpacedGrid) -> None:
    if reference.dims != other.dims:
        raise ShapeMismatchError(f"{what} dims", reference.dims, other.dims)
    if reference.spacing != other.spacing:
        raise ShapeMismatchError(f"{what} spacing", reference.spacing, other.spacing)


def _check_inputs(
    fixed: Volume3D,
    moving: Volume3D,
    fixed_labels: LabelVolume | None,
    moving_labels: LabelVolume | None,
) -> None:
    _check_grid("volume", fixed, moving)
    for labels in (fixed_labels, moving_labels):
        if labels is not None and labels.dims != fixed.dims:
            raise ShapeMismatchError("label dims", fixed.dims, labels.dims)


def register(
    fixed: Volume3D,
    moving: Volume3D,
    config: RegistrationConfig | None = None,
    *,
    fixed_labels: LabelVolume | None = None,
    moving_labels: LabelVolume | None = None,
) -> RegistrationResult:
    """Register ``moving`` onto ``fixed``.

    The returned field ``u`` satisfies ``warped(x) = moving(x + u(x))``.

    Raises:
        ShapeMismatchError: Volumes differ in dims or spacing.
        ConfigError: The feature mode needs labels that were not given.
        BudgetExceededError: The capture range does not fit the budget.
    """
    config = config or RegistrationConfig()
    _check_inputs(fixed, moving, fixed_labels, moving_labels)
    if config.features.needs_labels and (fixed_labels is None or moving_labels is None):
        raise ConfigError(
            "features", f"mode '{config.features.value}' needs both label volumes"
        )

    search = config.search_space(fixed.spacing)
    diag = Diagnostics(search)
    stride = config.grid_stride

    with diag.stage("features"):
        f_fixed, f_moving = extract_features(
            fixed, moving, config.features, config.mind, fixed_labels, moving_labels
        )

    with diag.stage("correlation"):
        cv = normalise_costs(
            build_cost_volume(f_fixed, f_moving, stride, search, config.patch_radius)
        )
    with diag.stage("convex"):
        coarse = coupled_convex(cv, config.convex)
    del cv

    if config.inverse_consistency:
        with diag.stage("backward"):
            cv = normalise_costs(
                build_cost_volume(f_moving, f_fixed, stride, search, config.patch_radius)
            )
            backward = coupled_convex(cv, config.convex)
            del cv
        with diag.stage("symmetrise"):
            diag.residual_before = consistency_residual(coarse, backward)
            coarse, backward = symmetrise(coarse, backward, config.symmetrise_iterations)
            diag.residual_after = consistency_residual(coarse, backward)
        logger.info(
            f"Inverse-consistency residual {diag.residual_before:.4g} -> "
            f"{diag.residual_after:.4g} voxels"
        )

    with diag.stage("instance"):
        refined = adam_optimise(coarse, f_fixed, f_moving, config.instance)
    diag.adam_losses = refined.losses

    with diag.stage("upsample"):
        dense = smooth_and_upsample(
            refined.field.vectors,
            stride,
            config.instance.smoothing_passes,
            fixed.dims,
            fixed.spacing,
        )
    return RegistrationResult(dense, refined.field, diag)


def _overlap(
    fixed: LabelVolume, moving: LabelVolume, disp: DisplacementField
) -> tuple[LabelVolume, set[int], DiceScores]:
    warped = warp(moving, disp, Interpolation.NEAREST)
    classes = (fixed.present() | moving.present()) - {0}
    return warped, classes, dice(fixed, warped, classes)


def evaluate(
    disp: DisplacementField,
    *,
    fixed_labels: LabelVolume | None = None,
    moving_labels: LabelVolume | None = None,
    landmarks: tuple[LandmarkSet, LandmarkSet] | None = None,
    extra_labels: tuple[LabelVolume, LabelVolume] | None = None,
    spacing: Spacing3 | None = None,
    timing: dict[str, float] | None = None,
) -> MetricReport:
    """Metrics of a full-resolution field against labels and/or landmarks.

    Moving labels are warped with nearest interpolation and compared with the
    fixed labels (Dice, HD95). ``landmarks`` is a ``(fixed, moving)`` pair.
    SDlogJ and the folding fraction are always reported.

    Raises:
        EvaluationError: Neither a label pair nor a landmark pair was given.
    """
    if (fixed_labels is None or moving_labels is None) and landmarks is None:
        raise EvaluationError("nothing to evaluate: pass a label pair or a landmark pair")
    spacing = spacing or disp.spacing

    dice_scores: DiceScores | None = None
    dice_add: DiceScores | None = None
    hd: SurfaceDistances | None = None
    if fixed_labels is not None and moving_labels is not None:
        warped, classes, dice_scores = _overlap(fixed_labels, moving_labels, disp)
        hd = hd95_scores(fixed_labels, warped, classes, spacing)
    if extra_labels is not None:
        dice_add = _overlap(*extra_labels, disp)[2]

    tre_result: TreResult | None = None
    if landmarks is not None:
        tre_result = tre(landmarks[0], landmarks[1], disp, spacing)

    return MetricReport(
        dice=dice_scores,
        dice_add=dice_add,
        hd95=hd,
        tre=tre_result,
        sdlogj=sdlogj(disp),
        folding=folding_fraction(disp),
        timing=dict(timing or {}),
    )
