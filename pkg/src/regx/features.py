"""Contrast-invariant feature extraction: MIND-SSC and weighted one-hot labels.

MIND-SSC channel order
----------------------
The six neighbours ``{±d e_x, ±d e_y, ±d e_z}`` are sorted lexicographically
as ``(x, y, z)`` tuples::

    (-d,0,0) (0,-d,0) (0,0,-d) (0,0,d) (0,d,0) (d,0,0)

and the 12 channels are the orthogonal pairs ``(n_i, n_j)`` with ``i < j`` in
that order (pairs of opposite neighbours are skipped). :data:`MIND_PAIRS`
lists them for ``d = 1``; :func:`channel_permutation` maps the channels under
an axis-aligned rotation.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np
import numpy.typing as npt

from .config import FeatureMode, MindConfig
from .exceptions import ConfigError, ShapeMismatchError
from .logging import logger
from .sampling import box_filter, shift_replicate
from .volume import FeatureVolume, LabelVolume, Volume3D

__all__ = [
    "MIND_PAIRS",
    "mind_ssc",
    "seg_onehot_features",
    "class_weights",
    "channel_permutation",
    "extract_features",
]

type _Offset = tuple[int, int, int]

_NEIGHBOURS: tuple[_Offset, ...] = tuple(
    sorted(
        [(-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
    )
)

MIND_PAIRS: tuple[tuple[_Offset, _Offset], ...] = tuple(
    (a, b)
    for a, b in combinations(_NEIGHBOURS, 2)
    if sum(p * q for p, q in zip(a, b, strict=True)) == 0
)

# Lower bound keeps every value strictly positive once stored as float32.
_FLOOR = float(np.finfo(np.float32).tiny)


def _scaled(offset: _Offset, d: int) -> _Offset:
    return (offset[0] * d, offset[1] * d, offset[2] * d)


def mind_ssc(vol: Volume3D, cfg: MindConfig | None = None) -> FeatureVolume:
    """12-channel MIND-SSC descriptor at full resolution.

    For each channel pair the patch distance is the box-filtered squared
    difference of the two shifted images. Distances are offset by their
    per-voxel minimum, normalised by a per-voxel variance estimate clamped
    to ``[1e-3, 1e3]`` times its global mean, and mapped through ``exp(-.)``.

    Raises:
        ShapeMismatchError: The volume is smaller than ``2d+1`` on some axis.
    """
    cfg = cfg or MindConfig()
    d, r = cfg.dilation, cfg.patch_radius
    if min(vol.dims) < 2 * d + 1:
        raise ShapeMismatchError("volume dims", f">= {2 * d + 1} per axis", vol.dims)

    image = vol.data.astype(np.float64)
    shifted = {n: shift_replicate(image, _scaled(n, d)) for n in _NEIGHBOURS}
    dist = np.stack(
        [box_filter((shifted[a] - shifted[b]) ** 2, r) for a, b in MIND_PAIRS]
    )

    m = dist - dist.min(axis=0)
    variance = m.mean(axis=0)
    mean_variance = float(variance.mean())
    if mean_variance > 0.0:
        variance = np.clip(variance, 1e-3 * mean_variance, 1e3 * mean_variance)
    else:
        variance = np.ones_like(variance)

    features = np.maximum(np.exp(-m / variance), _FLOOR)
    return FeatureVolume(features.astype(np.float32), vol.spacing)


def channel_permutation(rotation: npt.ArrayLike) -> list[int]:
    """Channel mapping of MIND-SSC under an axis-aligned rotation.

    If ``rotation`` maps voxel offsets of the original volume to offsets of the
    rotated one, channel ``c`` of the original features equals channel
    ``perm[c]`` of the rotated features (after rotating the grid).
    """
    matrix = np.asarray(rotation, dtype=np.int64).reshape(3, 3)
    lookup = {frozenset(pair): i for i, pair in enumerate(MIND_PAIRS)}
    perm: list[int] = []
    for a, b in MIND_PAIRS:
        ra = tuple(int(v) for v in matrix @ np.asarray(a))
        rb = tuple(int(v) for v in matrix @ np.asarray(b))
        key = frozenset((ra, rb))
        if key not in lookup:
            raise ConfigError("rotation", "not an axis-aligned rotation")
        perm.append(lookup[key])
    return perm


def class_weights(
    fixed_labels: LabelVolume, moving_labels: LabelVolume
) -> npt.NDArray[np.float64]:
    """Inverse square-root class frequency over both volumes, max rescaled to 1.

    Classes absent from both volumes get weight 0.
    """
    if fixed_labels.dims != moving_labels.dims:
        raise ShapeMismatchError("label dims", fixed_labels.dims, moving_labels.dims)
    if fixed_labels.classes != moving_labels.classes:
        raise ShapeMismatchError(
            "num_classes", fixed_labels.classes, moving_labels.classes
        )
    k = fixed_labels.classes
    counts = np.bincount(fixed_labels.data.ravel(), minlength=k) + np.bincount(
        moving_labels.data.ravel(), minlength=k
    )
    weights = np.zeros(k, dtype=np.float64)
    present = counts > 0
    weights[present] = counts[present].astype(np.float64) ** -0.5
    if weights.max() > 0:
        weights /= weights.max()
    return weights


def _encode(labels: LabelVolume, weights: npt.NDArray[np.float64]) -> FeatureVolume:
    classes = np.arange(labels.classes).reshape(-1, 1, 1, 1)
    onehot = labels.data[np.newaxis] == classes
    return FeatureVolume(
        (onehot * weights.reshape(-1, 1, 1, 1)).astype(np.float32), labels.spacing
    )


def seg_onehot_features(
    fixed_labels: LabelVolume, moving_labels: LabelVolume
) -> tuple[FeatureVolume, FeatureVolume]:
    """Inverse class-weighted one-hot encodings of a label pair.

    Channel ``k`` holds ``w_k`` where the label is ``k`` and 0 elsewhere, with
    ``w_k = count_k^(-1/2)`` over the pooled voxels of both volumes.
    """
    weights = class_weights(fixed_labels, moving_labels)
    logger.info(f"Class weights: {np.round(weights, 4).tolist()}")
    return _encode(fixed_labels, weights), _encode(moving_labels, weights)


def extract_features(
    fixed: Volume3D,
    moving: Volume3D,
    mode: FeatureMode,
    mind: MindConfig | None = None,
    fixed_labels: LabelVolume | None = None,
    moving_labels: LabelVolume | None = None,
) -> tuple[FeatureVolume, FeatureVolume]:
    """Feature pair for the requested mode.

    ``COMBINED`` stacks the MIND channels first, then the label channels.

    Raises:
        ConfigError: A label-based mode is missing either label volume.
    """
    if mode.needs_labels and (fixed_labels is None or moving_labels is None):
        raise ConfigError("features", f"mode '{mode.value}' needs both label volumes")
    match mode:
        case FeatureMode.MIND:
            return mind_ssc(fixed, mind), mind_ssc(moving, mind)
        case FeatureMode.SEGMENTATION:
            assert fixed_labels is not None and moving_labels is not None
            return seg_onehot_features(fixed_labels, moving_labels)
        case FeatureMode.COMBINED:
            assert fixed_labels is not None and moving_labels is not None
            seg_fixed, seg_moving = seg_onehot_features(fixed_labels, moving_labels)
            return (
                FeatureVolume(
                    np.concatenate([mind_ssc(fixed, mind).data, seg_fixed.data]),
                    fixed.spacing,
                ),
                FeatureVolume(
                    np.concatenate([mind_ssc(moving, mind).data, seg_moving.data]),
                    moving.spacing,
                ),
            )
