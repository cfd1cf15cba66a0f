"""Inverse procedural modeling: split grammars from meshes and point clouds."""

from ._core import (
    GprocError,
    Grammar,
    Model,
    OutOfBoundsError,
    ValidationError,
    approximate,
    complete,
    default_bounds,
    default_params,
    fixture_names,
    optimize,
    parameter_names,
    proceduralize,
    suggest,
)

__all__ = [
    "GprocError",
    "Grammar",
    "Model",
    "OutOfBoundsError",
    "ValidationError",
    "approximate",
    "complete",
    "default_bounds",
    "default_params",
    "fixture_names",
    "optimize",
    "parameter_names",
    "proceduralize",
    "suggest",
]
