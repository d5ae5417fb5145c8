"""Segmentation overlap, surface distance, landmark error and cohort statistics.

Reports serialise to a flat JSON object with dotted keys, e.g.
``dice.mean``, ``dice.per_class.3``, ``hd95.mean``, ``tre.per_landmark``,
``sdlogj``, ``jacobian.folding`` and ``timing.<stage>``.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from .exceptions import EvaluationError, ShapeMismatchError
from .sampling import trilinear
from .types import DoubleArray, Spacing3
from .volume import DisplacementField, LabelVolume, LandmarkSet

__all__ = [
    "DiceScores",
    "SurfaceDistances",
    "TreResult",
    "MetricReport",
    "CohortSummary",
    "dice",
    "hd95",
    "hd95_scores",
    "tre",
    "cohort_stats",
    "worst_count",
]

type FlatValue = float | int | list[float] | None


def _mean(values: Iterable[float]) -> float | None:
    items = list(values)
    return float(np.mean(items)) if items else None


def worst_count(n: int) -> int:
    """``ceil(0.3 * n)`` computed in integers."""
    return (3 * n + 9) // 10


@dataclass(frozen=True, slots=True)
class DiceScores:
    """Per-class Dice; ``None`` marks a class absent from both volumes."""

    per_class: Mapping[int, float | None]
    mean: float | None

    def flat(self, prefix: str) -> dict[str, FlatValue]:
        out: dict[str, FlatValue] = {f"{prefix}.mean": self.mean}
        for k, v in sorted(self.per_class.items()):
            out[f"{prefix}.per_class.{k}"] = v
        return out


@dataclass(frozen=True, slots=True)
class SurfaceDistances:
    """Per-class HD95 in mm."""

    per_class: Mapping[int, float]
    mean: float | None

    def flat(self, prefix: str) -> dict[str, FlatValue]:
        out: dict[str, FlatValue] = {f"{prefix}.mean": self.mean}
        for k, v in sorted(self.per_class.items()):
            out[f"{prefix}.per_class.{k}"] = v
        return out


@dataclass(frozen=True, slots=True)
class TreResult:
    """Landmark errors in mm."""

    per_landmark: tuple[float, ...]
    mean: float


def _check_labels(a: LabelVolume, b: LabelVolume) -> None:
    if a.dims != b.dims:
        raise ShapeMismatchError("label dims", a.dims, b.dims)


def dice(a: LabelVolume, b: LabelVolume, classes: Iterable[int] | None = None) -> DiceScores:
    """Dice overlap ``2|A & B| / (|A| + |B|)`` per class.

    ``classes`` defaults to every non-background label present in either
    volume. Classes absent from both are reported as ``None`` and left out
    of the mean.
    """
    _check_labels(a, b)
    wanted = sorted(set(classes) if classes is not None else (a.present() | b.present()) - {0})
    scores: dict[int, float | None] = {}
    for k in wanted:
        mask_a = a.data == k
        mask_b = b.data == k
        total = int(mask_a.sum()) + int(mask_b.sum())
        if total == 0:
            scores[k] = None
            continue
        scores[k] = 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total
    return DiceScores(scores, _mean(v for v in scores.values() if v is not None))


_SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)


def _surface(mask: npt.NDArray[np.bool_]) -> npt.NDArray[np.bool_]:
    # Voxels outside the volume count as background.
    interior = ndimage.binary_erosion(mask, structure=_SIX_CONNECTED, border_value=0)
    return mask & ~interior


def _nearest_rank(distances: DoubleArray, pct: int) -> float:
    ordered = np.sort(distances)
    rank = (pct * ordered.size + 99) // 100
    return float(ordered[rank - 1])


def hd95(a: LabelVolume, b: LabelVolume, k: int, spacing: Spacing3 | None = None) -> float:
    """95th-percentile symmetric surface distance of class ``k`` in mm.

    Surface voxels are class voxels with a 6-neighbour outside the class.
    The percentile uses the nearest-rank rule and the larger of the two
    directed values is returned.

    Raises:
        EvaluationError: Class ``k`` is missing from either volume.
    """
    _check_labels(a, b)
    spacing = spacing or a.spacing
    surf_a = _surface(a.data == k)
    surf_b = _surface(b.data == k)
    if not surf_a.any() or not surf_b.any():
        raise EvaluationError(f"class {k} is absent from one of the label volumes")
    to_b = ndimage.distance_transform_edt(~surf_b, sampling=spacing)
    to_a = ndimage.distance_transform_edt(~surf_a, sampling=spacing)
    return max(_nearest_rank(to_b[surf_a], 95), _nearest_rank(to_a[surf_b], 95))


def hd95_scores(
    a: LabelVolume, b: LabelVolume, classes: Iterable[int], spacing: Spacing3 | None = None
) -> SurfaceDistances:
    """HD95 for every class present in both volumes."""
    both = a.present() & b.present()
    per_class = {k: hd95(a, b, k, spacing) for k in sorted(classes) if k in both}
    return SurfaceDistances(per_class, _mean(per_class.values()))


def tre(
    lm_fixed: LandmarkSet,
    lm_moving: LandmarkSet,
    disp: DisplacementField,
    spacing: Spacing3 | None = None,
) -> TreResult:
    """Distance in mm between ``p + u(p)`` and the moving landmark, per pair.

    Raises:
        EvaluationError: The sets differ in size or are empty.
        ShapeMismatchError: ``disp`` is not full resolution.
    """
    if lm_fixed.count != lm_moving.count:
        raise EvaluationError(
            f"landmark count mismatch: {lm_fixed.count} fixed vs {lm_moving.count} moving"
        )
    if lm_fixed.count == 0:
        raise EvaluationError("no landmarks to evaluate")
    if not disp.is_full_resolution:
        raise ShapeMismatchError("field stride", 1, disp.stride)
    spacing = spacing or disp.spacing
    u = trilinear(disp.vectors, lm_fixed.points.T).T
    offsets = (lm_fixed.points + u - lm_moving.points) * np.asarray(spacing)
    errors = np.sqrt((offsets**2).sum(axis=1))
    return TreResult(tuple(float(e) for e in errors), float(errors.mean()))


@dataclass(frozen=True, slots=True)
class MetricReport:
    """All metrics of one case; ``None`` where a metric was not computed."""

    dice: DiceScores | None = None
    dice_add: DiceScores | None = None
    hd95: SurfaceDistances | None = None
    tre: TreResult | None = None
    sdlogj: float | None = None
    folding: float | None = None
    timing: Mapping[str, float] = field(default_factory=dict)

    def to_flat(self) -> dict[str, FlatValue]:
        out: dict[str, FlatValue] = {}
        if self.dice is not None:
            out.update(self.dice.flat("dice"))
        if self.dice_add is not None:
            out.update(self.dice_add.flat("dice_add"))
        if self.hd95 is not None:
            out.update(self.hd95.flat("hd95"))
        if self.tre is not None:
            out["tre.mean"] = self.tre.mean
            out["tre.per_landmark"] = list(self.tre.per_landmark)
        if self.sdlogj is not None:
            out["sdlogj"] = self.sdlogj
        if self.folding is not None:
            out["jacobian.folding"] = self.folding
        for stage, seconds in self.timing.items():
            out[f"timing.{stage}"] = seconds
        return out

    @classmethod
    def from_flat(cls, flat: Mapping[str, Any]) -> MetricReport:
        """Inverse of :meth:`to_flat`; unknown keys are ignored."""

        def per_class(prefix: str) -> dict[int, Any]:
            head = f"{prefix}.per_class."
            return {int(k[len(head) :]): v for k, v in flat.items() if k.startswith(head)}

        def dice_part(prefix: str) -> DiceScores | None:
            if f"{prefix}.mean" not in flat:
                return None
            return DiceScores(per_class(prefix), flat[f"{prefix}.mean"])

        hd = None
        if "hd95.mean" in flat:
            hd = SurfaceDistances(per_class("hd95"), flat["hd95.mean"])
        tre_part = None
        if "tre.mean" in flat:
            tre_part = TreResult(tuple(flat["tre.per_landmark"]), flat["tre.mean"])
        timing = {k[len("timing.") :]: v for k, v in flat.items() if k.startswith("timing.")}
        return cls(
            dice=dice_part("dice"),
            dice_add=dice_part("dice_add"),
            hd95=hd,
            tre=tre_part,
            sdlogj=flat.get("sdlogj"),
            folding=flat.get("jacobian.folding"),
            timing=timing,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        return cls.from_flat(json.loads(text))


@dataclass(frozen=True, slots=True)
class CohortSummary:
    """Means and worst-30% statistics over a set of cases."""

    n: int
    dice_mean: float | None = None
    dice30: float | None = None
    tre_mean: float | None = None
    tre30: float | None = None
    hd95_mean: float | None = None
    sdlogj_mean: float | None = None

    def to_flat(self, prefix: str = "cohort") -> dict[str, FlatValue]:
        return {
            f"{prefix}.n": self.n,
            f"{prefix}.dice.mean": self.dice_mean,
            f"{prefix}.dice30": self.dice30,
            f"{prefix}.tre.mean": self.tre_mean,
            f"{prefix}.tre30": self.tre30,
            f"{prefix}.hd95.mean": self.hd95_mean,
            f"{prefix}.sdlogj.mean": self.sdlogj_mean,
        }


def cohort_stats(per_case: Sequence[MetricReport]) -> CohortSummary:
    """Plain means plus Dice30 (lowest 30% of case Dice) and TRE30 (highest 30% of case TRE).

    Raises:
        EvaluationError: ``per_case`` is empty.
    """
    if not per_case:
        raise EvaluationError("cohort statistics need at least one case")
    dices = sorted(r.dice.mean for r in per_case if r.dice is not None and r.dice.mean is not None)
    tres = sorted((r.tre.mean for r in per_case if r.tre is not None), reverse=True)
    hds = [r.hd95.mean for r in per_case if r.hd95 is not None and r.hd95.mean is not None]
    sds = [r.sdlogj for r in per_case if r.sdlogj is not None]
    return CohortSummary(
        n=len(per_case),
        dice_mean=_mean(dices),
        dice30=_mean(dices[: worst_count(len(dices))]),
        tre_mean=_mean(tres),
        tre30=_mean(tres[: worst_count(len(tres))]),
        hd95_mean=_mean(hds),
        sdlogj_mean=_mean(sds),
    )
