"""Immutable parameter records for every pipeline stage.

Records validate themselves in ``__post_init__`` and are copied with
``with_*`` helpers or :func:`dataclasses.replace`. :func:`config_from_mapping`
builds a :class:`RegistrationConfig` from a parsed TOML document.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any

from .correlation import DEFAULT_BUDGET, SearchSpace
from .exceptions import ConfigError
from .transform import Interpolation
from .types import Spacing3, Vec3

__all__ = [
    "FeatureMode",
    "MindConfig",
    "ConvexConfig",
    "InstanceOptConfig",
    "RegistrationConfig",
    "config_from_mapping",
]


class FeatureMode(Enum):
    """Which features drive the cost volume.

    Values:
        MIND: 12-channel MIND-SSC computed from the intensities.
        SEGMENTATION: Inverse class-weighted one-hot labels.
        COMBINED: MIND channels followed by the label channels.
    """

    MIND = "mind"
    SEGMENTATION = "segmentation"
    COMBINED = "combined"

    @property
    def needs_labels(self) -> bool:
        return self is not FeatureMode.MIND

    @classmethod
    def parse(cls, value: str | FeatureMode) -> FeatureMode:
        if isinstance(value, FeatureMode):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise ConfigError("features", f"expected one of {names}, got '{value}'") from None


def _require(condition: bool, key: str, cause: str) -> None:
    if not condition:
        raise ConfigError(key, cause)


@dataclass(frozen=True, slots=True)
class MindConfig:
    """MIND-SSC neighbour dilation and patch radius, both in voxels."""

    dilation: int = 2
    patch_radius: int = 2

    def __post_init__(self) -> None:
        _require(int(self.dilation) >= 1, "mind.dilation", f"must be >= 1, got {self.dilation}")
        _require(
            int(self.patch_radius) >= 0,
            "mind.patch_radius",
            f"must be >= 0, got {self.patch_radius}",
        )


@dataclass(frozen=True, slots=True)
class ConvexConfig:
    """Coupling schedule and smoothing for the coupled convex stage.

    The schedule applies to costs normalised by their mean, so its values are
    dimensionless. One iteration runs per schedule entry.
    """

    schedule: tuple[float, ...] = (0.003, 0.01, 0.03, 0.1, 0.3, 1.0)
    passes: int = 2

    def __post_init__(self) -> None:
        schedule = tuple(float(t) for t in self.schedule)
        _require(len(schedule) >= 1, "convex.schedule", "needs at least one value")
        _require(
            all(t > 0 for t in schedule), "convex.schedule", f"values must be positive, got {schedule}"
        )
        _require(
            all(a < b for a, b in zip(schedule, schedule[1:])),
            "convex.schedule",
            f"values must be strictly increasing, got {schedule}",
        )
        _require(int(self.passes) >= 0, "convex.passes", f"must be >= 0, got {self.passes}")
        object.__setattr__(self, "schedule", schedule)

    @property
    def iterations(self) -> int:
        return len(self.schedule)


@dataclass(frozen=True, slots=True)
class InstanceOptConfig:
    """Adam hyperparameters and the instance loss definition.

    Args:
        learning_rate: Step size in voxels.
        iterations: Number of Adam steps.
        beta1: First-moment decay.
        beta2: Second-moment decay.
        eps: Denominator guard.
        diffusion_weight: Weight of the diffusion term on raw grid parameters.
        smoothing_passes: Mean-filter passes applied before upsampling.
        sample_stride: Evaluate the similarity term on every n-th voxel.
    """

    learning_rate: float = 1.0
    iterations: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    diffusion_weight: float = 1.0
    smoothing_passes: int = 3
    sample_stride: int = 1

    def __post_init__(self) -> None:
        _require(self.learning_rate > 0, "instance.learning_rate", "must be > 0")
        _require(self.iterations >= 0, "instance.iterations", "must be >= 0")
        _require(0 <= self.beta1 < 1, "instance.beta1", "must lie in [0, 1)")
        _require(0 <= self.beta2 < 1, "instance.beta2", "must lie in [0, 1)")
        _require(self.eps > 0, "instance.eps", "must be > 0")
        _require(self.diffusion_weight >= 0, "instance.diffusion_weight", "must be >= 0")
        _require(self.smoothing_passes >= 0, "instance.smoothing_passes", "must be >= 0")
        _require(self.sample_stride >= 1, "instance.sample_stride", "must be >= 1")


def _vec3(value: float | Vec3 | list[float], key: str) -> Vec3:
    if isinstance(value, int | float):
        return (float(value), float(value), float(value))
    items = tuple(float(v) for v in value)
    _require(len(items) == 3, key, f"expected 1 or 3 values, got {len(items)}")
    return (items[0], items[1], items[2])


@dataclass(frozen=True, slots=True)
class RegistrationConfig:
    """Complete parameterisation of one registration run.

    ``capture_mm`` is converted to a :class:`SearchSpace` with the fixed
    image's spacing; ``quantisation`` pins the step size instead of searching
    for the smallest one that fits ``max_displacements``.
    """

    features: FeatureMode = FeatureMode.MIND
    mind: MindConfig = field(default_factory=MindConfig)
    capture_mm: Vec3 = (16.0, 16.0, 16.0)
    max_displacements: int = DEFAULT_BUDGET
    quantisation: int | None = None
    grid_stride: int = 2
    patch_radius: int = 1
    convex: ConvexConfig = field(default_factory=ConvexConfig)
    instance: InstanceOptConfig = field(default_factory=InstanceOptConfig)
    inverse_consistency: bool = False
    symmetrise_iterations: int = 10
    interpolation: Interpolation = Interpolation.LINEAR

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", FeatureMode.parse(self.features))
        object.__setattr__(self, "interpolation", Interpolation.parse(self.interpolation))
        capture = _vec3(self.capture_mm, "capture_mm")
        _require(all(c > 0 for c in capture), "capture_mm", f"must be positive, got {capture}")
        object.__setattr__(self, "capture_mm", capture)
        _require(self.max_displacements >= 1, "max_displacements", "must be >= 1")
        _require(
            self.quantisation is None or self.quantisation >= 1,
            "quantisation",
            f"must be >= 1, got {self.quantisation}",
        )
        _require(self.grid_stride >= 1, "grid_stride", f"must be >= 1, got {self.grid_stride}")
        _require(self.patch_radius >= 0, "patch_radius", f"must be >= 0, got {self.patch_radius}")
        _require(self.symmetrise_iterations >= 0, "symmetrise_iterations", "must be >= 0")

    def search_space(self, spacing: Spacing3) -> SearchSpace:
        """Displacement lattice for images with ``spacing``.

        Raises:
            BudgetExceededError: The capture range cannot fit the budget.
        """
        return SearchSpace.from_capture(
            self.capture_mm, spacing, self.max_displacements, self.quantisation
        )

    def with_features(self, mode: FeatureMode | str) -> RegistrationConfig:
        return replace(self, features=FeatureMode.parse(mode))

    def with_interpolation(self, interp: Interpolation | str) -> RegistrationConfig:
        return replace(self, interpolation=Interpolation.parse(interp))


_TABLES: dict[str, type[MindConfig | ConvexConfig | InstanceOptConfig]] = {
    "mind": MindConfig,
    "convex": ConvexConfig,
    "instance": InstanceOptConfig,
}
_SCALARS = {f.name for f in fields(RegistrationConfig)} - set(_TABLES)


def _table(name: str, base: Any, values: Any) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigError(name, "expected a table")
    known = {f.name for f in fields(base)}
    for key in values:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
    overrides = dict(values)
    if "schedule" in overrides:
        overrides["schedule"] = tuple(overrides["schedule"])
    try:
        return replace(base, **overrides)
    except TypeError as e:
        raise ConfigError(name, str(e)) from e


def config_from_mapping(
    data: Mapping[str, Any], base: RegistrationConfig | None = None
) -> RegistrationConfig:
    """Apply a parsed config document on top of ``base``.

    The ``preset`` key is ignored here (see :func:`regx.presets.load_config`).

    Raises:
        ConfigError: Unknown keys or invalid values.
    """
    config = base or RegistrationConfig()
    overrides: dict[str, Any] = {}
    for key, value in data.items():
        if key == "preset":
            continue
        if key in _TABLES:
            overrides[key] = _table(key, getattr(config, key), value)
        elif key in _SCALARS:
            overrides[key] = value
        else:
            raise ConfigError(key, "unknown key")
    try:
        return replace(config, **overrides)
    except TypeError as e:
        raise ConfigError("config", str(e)) from e
