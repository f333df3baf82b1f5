"""Spectral Newton solvers for invariant tori of exact symplectic maps,
their hyperbolic splittings, and rank-1 whiskers."""

from .fourier import (
    CohomologyKind,
    DiophantineReport,
    FourierSeries,
    RotationVector,
    diophantine_witness,
    named_frequency,
    solve_cohomology_constant,
    solve_twisted_cohomology,
)
from .geometry import (
    SymplecticMapModel,
    SymplecticStructure,
    WindingMatrix,
    coisotropy_defect,
    hyperbolic_multiplier,
    model_rotator_pendulum,
    model_standard_map,
)

__all__ = [
    "CohomologyKind",
    "DiophantineReport",
    "FourierSeries",
    "RotationVector",
    "SymplecticMapModel",
    "SymplecticStructure",
    "WindingMatrix",
    "coisotropy_defect",
    "diophantine_witness",
    "hyperbolic_multiplier",
    "model_rotator_pendulum",
    "model_standard_map",
    "named_frequency",
    "solve_cohomology_constant",
    "solve_twisted_cohomology",
]

__version__ = "0.1.0"
