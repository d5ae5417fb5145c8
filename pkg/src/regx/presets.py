"""Named task presets and TOML config loading.

Every preset is checked against its displacement budget at the task's
native spacing when the registry is built, so a shipped preset can never
exceed the budget on the data it was written for.
"""

from __future__ import annotations

import tomllib
from collections.abc import Callable, Iterator
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

from .config import (
    FeatureMode,
    InstanceOptConfig,
    MindConfig,
    RegistrationConfig,
    config_from_mapping,
)
from .exceptions import ConfigError, VolumeIOError
from .logging import logger
from .types import Spacing3

__all__ = ["PresetEntry", "PresetRegistry", "PRESETS", "preset", "load_config"]


@dataclass(frozen=True, slots=True)
class PresetEntry:
    """A preset factory plus the spacing its budget is validated at."""

    name: str
    description: str
    native_spacing: Spacing3
    factory: Callable[[], RegistrationConfig]


class PresetRegistry:
    """Name -> preset mapping; validates each entry on registration.

    Example:
        >>> registry = PresetRegistry()
        >>> registry.set(PresetEntry("mine", "...", (1.0, 1.0, 1.0), RegistrationConfig))
        >>> registry.get_or_raise("mine").factory()
    """

    __slots__ = ("_storage",)

    def __init__(self) -> None:
        self._storage: dict[str, PresetEntry] = {}

    def set(self, entry: PresetEntry) -> None:
        """Register ``entry`` after checking its search space fits the budget.

        Raises:
            BudgetExceededError: The preset needs too many displacements.
        """
        space = entry.factory().search_space(entry.native_spacing)
        logger.debug(
            f"Preset '{entry.name}': {space.count} displacements at {entry.native_spacing} mm"
        )
        self._storage[entry.name] = entry

    def get(self, name: str) -> PresetEntry | None:
        return self._storage.get(name)

    def get_or_raise(self, name: str) -> PresetEntry:
        entry = self._storage.get(name)
        if entry is None:
            known = ", ".join(sorted(self._storage))
            raise ConfigError("preset", f"unknown preset '{name}' (known: {known})")
        return entry

    def names(self) -> list[str]:
        return sorted(self._storage)

    def items(self) -> MappingProxyType[str, PresetEntry]:
        """Read-only view of all entries."""
        return MappingProxyType(self._storage)

    def __contains__(self, name: object) -> bool:
        return name in self._storage

    def __iter__(self) -> Iterator[PresetEntry]:
        return iter(self._storage[name] for name in self.names())

    def __len__(self) -> int:
        return len(self._storage)


def _task1() -> RegistrationConfig:
    return RegistrationConfig(
        features=FeatureMode.MIND,
        mind=MindConfig(dilation=2, patch_radius=2),
        capture_mm=(64.0, 64.0, 64.0),
        grid_stride=2,
        inverse_consistency=True,
    )


def _task2() -> RegistrationConfig:
    return RegistrationConfig(
        features=FeatureMode.MIND,
        mind=MindConfig(dilation=2, patch_radius=2),
        capture_mm=(42.0, 30.0, 42.0),
        grid_stride=2,
        inverse_consistency=False,
    )


def _task3() -> RegistrationConfig:
    return RegistrationConfig(
        features=FeatureMode.SEGMENTATION,
        mind=MindConfig(dilation=1, patch_radius=1),
        capture_mm=(16.0, 16.0, 16.0),
        grid_stride=3,
        inverse_consistency=False,
    )


def _synthetic() -> RegistrationConfig:
    return RegistrationConfig(
        features=FeatureMode.MIND,
        mind=MindConfig(dilation=1, patch_radius=1),
        capture_mm=(10.0, 10.0, 10.0),
        grid_stride=2,
        instance=InstanceOptConfig(learning_rate=0.1),
        inverse_consistency=False,
    )


def _build_registry() -> PresetRegistry:
    registry = PresetRegistry()
    registry.set(
        PresetEntry(
            "task1",
            "thorax-abdomen CT-MR, MIND features, 64 mm capture, inverse consistency",
            (2.0, 2.0, 2.0),
            _task1,
        )
    )
    registry.set(
        PresetEntry(
            "task2",
            "lung CT inspiration-expiration, MIND features, 42x30x42 mm capture",
            (1.75, 1.25, 1.75),
            _task2,
        )
    )
    registry.set(
        PresetEntry(
            "task3",
            "brain MRI, segmentation features, 16 mm capture",
            (1.0, 1.0, 1.0),
            _task3,
        )
    )
    registry.set(
        PresetEntry(
            "synthetic",
            "smooth deformations up to 8 voxels, MIND features, 10 mm capture, small Adam steps",
            (1.0, 1.0, 1.0),
            _synthetic,
        )
    )
    return registry


PRESETS = _build_registry()


def preset(name: str) -> RegistrationConfig:
    """Fresh :class:`RegistrationConfig` for a named preset.

    Raises:
        ConfigError: Unknown preset name.
    """
    return PRESETS.get_or_raise(name).factory()


def load_config(
    path: str | Path,
    base: RegistrationConfig | None = None,
    *,
    preset_name: str | None = None,
) -> RegistrationConfig:
    """Read a TOML config file.

    The starting point is ``preset_name`` if given, then the file's ``preset``
    key, then ``base`` (or the defaults). All other keys override it.

    Raises:
        VolumeIOError: The file cannot be read.
        ConfigError: Invalid TOML, unknown keys or invalid values.
    """
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise VolumeIOError(path, e.strerror or str(e)) from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(str(path), f"invalid TOML: {e}") from e

    name = data.get("preset")
    if name is not None and not isinstance(name, str):
        raise ConfigError("preset", "expected a preset name")
    if preset_name is not None:
        if name is not None and name != preset_name:
            logger.info(f"Preset '{preset_name}' replaces '{name}' from {path}")
        name = preset_name
    if name is not None:
        base = preset(name)
    logger.info(f"Loaded config from {path}" + (f" (preset {name})" if name else ""))
    return config_from_mapping(data, base)
