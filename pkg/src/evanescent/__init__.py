"""Evanescent-wave speeds in coupled polariton waveguides.

Finite-difference bound states of a 2D effective-mass Hamiltonian, Bohm and
symmetric velocity fields, pulse dynamics in the eigenbasis, and the speed
inference that compares them with the evanescent De Broglie speed.
"""
from .grid import (HBAR, PAPER_GRID, PAPER_UNITS, ComplexField2D, Grid1D, Grid2D,
                   ScalarField2D, UnitSystem)
from .potential import PotentialParams, calibrate, smooth_potential, transverse_levels, y_slice
from .spectral import BoundSpectrum, assemble_1d, assemble_2d, bound_spectrum, solve_lowest

__all__ = [
    "HBAR", "PAPER_GRID", "PAPER_UNITS", "ComplexField2D", "Grid1D", "Grid2D", "ScalarField2D",
    "UnitSystem", "PotentialParams", "calibrate", "smooth_potential", "transverse_levels",
    "y_slice", "BoundSpectrum", "assemble_1d", "assemble_2d", "bound_spectrum", "solve_lowest",
]
__version__ = "0.1.0"
