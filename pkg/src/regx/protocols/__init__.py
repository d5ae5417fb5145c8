from .grids import SpacedGrid

__all__ = ["SpacedGrid"]
