"""Transverse levels of the guide cross-sections and the derived J0 and V0.

Solves the 1D y-problems of the single well guide and the raised coupled
pair, then recovers V_s and h0 from the target coupling and barrier by
calibrating from a deliberately poor starting point.

    python demos/transverse_levels.py
"""
import math

from evanescent.grid import PAPER_GRID, PAPER_UNITS
from evanescent.potential import PotentialParams, calibrate, transverse_levels

m = PAPER_UNITS.mass
y_axis = PAPER_GRID.y_axis

lv = transverse_levels(PotentialParams(), y_axis, m)
print(f"E_well_y0 = {lv.E_well_y0:.5f} meV")
print(f"E_step_y0 = {lv.E_step_y0:.5f} meV")
print(f"E_step_y1 = {lv.E_step_y1:.5f} meV")
print(f"J0 = 2 pi x {lv.J0 / (2 * math.pi) * 1e3:.3f} GHz, V0 = {lv.V0:.4f} meV")

res = calibrate(2 * math.pi * 6.34e-3, 0.538, y_axis, m, initial=PotentialParams(0.1, 2.0))
print(f"calibrated from (0.1, 2.0) in {res.iterations} passes: "
      f"V_s = {res.params.V_s:.4f} meV, h0 = {res.params.h0:.3f}")
