"""Hyperdissipative Navier-Stokes on the periodic torus.

Pseudo-spectral time stepping plus the partial-regularity toolkit:
fractional extensions, localized scale-invariant quantities,
epsilon-regularity criteria and parabolic covering estimators.
"""

from hypns.spectral import (
    ModelParams,
    PressureField,
    SpectralField,
    VelocityField,
    ball_average,
    cylinder_average,
    frac_laplacian,
    leray_project,
    mollify,
    nonlinear_term,
    pressure_from_velocity,
)
from hypns.cylinder import ParabolicCylinder

__all__ = [
    "ModelParams",
    "SpectralField",
    "VelocityField",
    "PressureField",
    "ParabolicCylinder",
    "frac_laplacian",
    "leray_project",
    "pressure_from_velocity",
    "nonlinear_term",
    "mollify",
    "ball_average",
    "cylinder_average",
]

__version__ = "0.1.0"
