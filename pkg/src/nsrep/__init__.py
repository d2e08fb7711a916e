"""Ensemble flow-map simulator for 2D incompressible flow on a periodic box."""

__version__ = "0.1.0"

from .grid import (
    PeriodicGrid,
    ScalarField,
    VectorField,
    TensorField,
    curl2d,
    biot_savart,
    leray_project,
    gradient,
    jacobian,
    divergence,
    interpolate,
    nondim_norm,
)

__all__ = [
    "PeriodicGrid",
    "ScalarField",
    "VectorField",
    "TensorField",
    "curl2d",
    "biot_savart",
    "leray_project",
    "gradient",
    "jacobian",
    "divergence",
    "interpolate",
    "nondim_norm",
    "__version__",
]
