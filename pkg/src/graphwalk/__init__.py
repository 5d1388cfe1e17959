"""Multiresolution graph classification with robust weights, boundary
constraints, SIR guidance and hierarchical CRF fusion."""

from .errors import (
    ConvergenceError,
    GraphwalkError,
    HierarchyError,
    InvalidInputError,
    PopulationDetectionError,
    SingularSystemError,
    StructureError,
)
from .pyramid import Pyramid, SampleSet, build_pyramid

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "GraphwalkError",
    "HierarchyError",
    "InvalidInputError",
    "PopulationDetectionError",
    "Pyramid",
    "SampleSet",
    "SingularSystemError",
    "StructureError",
    "build_pyramid",
]
