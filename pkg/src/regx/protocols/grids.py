"""Structural protocol shared by every voxel-grid container."""

from __future__ import annotations

from typing import Protocol, runtime_checkable

from ..types import Dims3, Spacing3


@runtime_checkable
class SpacedGrid(Protocol):
    """Anything with voxel dimensions and per-axis spacing in mm."""

    @property
    def dims(self) -> Dims3: ...

    @property
    def spacing(self) -> Spacing3: ...
