"""Numerical laboratory for quasi-periodic Schrodinger operators at high energy.

Modules: potential (quasi-periodic potentials), operator (truncated Hamiltonians
and isolated eigenpairs), geometry (non-resonant sets, isoenergetic surfaces),
extension (smooth cutoffs and the extended dispersion), transforms (generalized
Fourier transforms and projections), dynamics (wave packets and transport),
stationary (stationary-phase asymptotics) and cli (batch runner).
"""

from .fields import FieldState, GaussianPacket, NyquistViolation, XGrid
from .operator import Criterion, GeneralizedEigenpair, build_operator, extract, select_pair
from .potential import FrequencyVector, PotentialSpec, random_potential, sample_frequencies

__version__ = "0.1.0"

__all__ = [
    "FieldState",
    "GaussianPacket",
    "NyquistViolation",
    "XGrid",
    "Criterion",
    "GeneralizedEigenpair",
    "build_operator",
    "extract",
    "select_pair",
    "FrequencyVector",
    "PotentialSpec",
    "random_potential",
    "sample_frequencies",
]
