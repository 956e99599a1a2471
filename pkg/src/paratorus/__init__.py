"""Paracontrolled transforms and renormalized elliptic operators on T^d."""

__version__ = "0.1.0"

from .torus import (  # noqa: F401
    Grid,
    SpectralField,
    grid,
    to_spectral,
    to_physical,
    fourier_multiplier,
    sobolev_scale,
    sobolev_norm,
    grad,
    div,
    project_frequencies,
    pointwise_product,
    exp_field,
    l2_norm,
    read_pcf1,
    write_pcf1,
)
