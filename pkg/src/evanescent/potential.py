"""Piecewise coupled-waveguide potential, cosine-blend smoothing and the
(V_s, h0) calibration against a target coupling and effective barrier.

All branch formulas are dimensionless and multiplied by ``V_s`` (meV).
Regions along x::

    ramp     -900 <= x < -600   harmonic guide at y=8 plus a linear ramp
    well     -600 <= x < -10    harmonic guide at y=8
    barrier   -10 <= x < 0      guide for y>0, flat 12 for y<=0
    step        0 <= x <= 700   guides at y=+8 and y=-8, raised by h0
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .grid import HBAR, Grid1D, Grid2D, ScalarField2D

log = logging.getLogger(__name__)

CURVATURE = 4.0 / 75.0  # um^-2
RAMP_SLOPE = 2.0 / 75.0  # um^-1
RAMP_OFFSET = 16.0
BARRIER_VALUE = 12.0
GUIDE_CENTER = 8.0  # um
X_BREAKS = (-600.0, -10.0, 0.0)
Y_BREAK = 0.0
DOMAIN = (-900.0, 700.0, -40.0, 40.0)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PotentialParams:
    V_s: float = 0.1581  # meV
    h0: float = 3.587
    blend_halfwidth: float = 2.0  # um

    def __post_init__(self):
        if not self.V_s > 0:
            raise ValueError("V_s must be positive")
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if not self.blend_halfwidth >= 0:
            raise ValueError("blend_halfwidth must be non-negative")

    @property
    def ramp_slope_mev(self) -> float:
        """Ramp gradient in meV/um."""
        return self.V_s * RAMP_SLOPE

    def check_blend_zones(self) -> None:
        w = self.blend_halfwidth
        gaps = np.diff(X_BREAKS)
        if np.any(gaps <= 2 * w):
            raise ValueError(f"blend zones of half-width {w} um overlap (breaks {X_BREAKS})")
        if X_BREAKS[0] - w < DOMAIN[0] or X_BREAKS[-1] + w > DOMAIN[1] or w >= DOMAIN[3]:
            raise ValueError("blend zones extend past the domain")


def _harm(y, center):
    return CURVATURE * (y - center) ** 2


def _ramp(x):
    # extended past x=-600 the ramp would go negative; clamp so the blend stays >= 0
    return np.maximum(-RAMP_SLOPE * x - RAMP_OFFSET, 0.0)


# branch(region, upper) -> f(x, y) in units of V_s
def _branch(region: int, upper: bool, h0: float) -> Callable:
    if region == 0:
        return lambda x, y: _harm(y, GUIDE_CENTER) + _ramp(x)
    if region == 1 or (region == 2 and upper):
        return lambda x, y: _harm(y, GUIDE_CENTER) + 0.0 * x
    if region == 2:
        return lambda x, y: BARRIER_VALUE + 0.0 * (x + y)
    if upper:
        return lambda x, y: _harm(y, GUIDE_CENTER) + h0 + 0.0 * x
    return lambda x, y: _harm(y, -GUIDE_CENTER) + h0 + 0.0 * x


def _region_of(x):
    return np.searchsorted(np.asarray(X_BREAKS), x, side="right")


def _check_domain(x, y):
    x_lo, x_hi, y_lo, y_hi = DOMAIN
    if np.any((x < x_lo) | (x > x_hi) | (y < y_lo) | (y > y_hi)):
        raise ValueError(f"point outside the potential domain {DOMAIN}")


def raw_potential(params: PotentialParams, x, y):
    """Unsmoothed piecewise potential in meV (scalars or broadcastable arrays)."""
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    _check_domain(x, y)
    out = np.empty(x.shape)
    reg = _region_of(x)
    upper = y > Y_BREAK
    for r in range(4):
        for up in (False, True):
            sel = (reg == r) & (upper == up)
            if np.any(sel):
                out[sel] = _branch(r, up, params.h0)(x[sel], y[sel])
    out *= params.V_s
    return float(out) if out.ndim == 0 else out


def blend_weight(u, b: float, w: float):
    """Raised-cosine weight of the left (lower-u) branch around break ``b``."""
    return (1.0 + np.cos(np.pi * (np.asarray(u, float) - b + w) / (2 * w))) / 2


def _blend(u, b, w, left, right):
    # Same weight as blend_weight, written as 1/2(L+R) - 1/2 sin(.)(L-R) so that a
    # profile mirrored about b blends to an exactly mirrored result.
    s = np.sin(np.pi * (u - b) / (2 * w))
    return 0.5 * (left + right) - 0.5 * s * (left - right)


def _x_blended(params: PotentialParams, x, y, upper: bool):
    w = params.blend_halfwidth
    reg = _region_of(x)
    out = np.empty(x.shape)
    for r in range(4):
        sel = reg == r
        if np.any(sel):
            out[sel] = _branch(r, upper, params.h0)(x[sel], y[sel])
    if w > 0:
        for k, b in enumerate(X_BREAKS):
            sel = np.abs(x - b) < w
            if np.any(sel):
                left = _branch(k, upper, params.h0)(x[sel], y[sel])
                right = _branch(k + 1, upper, params.h0)(x[sel], y[sel])
                out[sel] = _blend(x[sel], b, w, left, right)
    return out


def smooth_potential_at(params: PotentialParams, x, y):
    """Smoothed potential (meV): blend across each x-break, then across y=0."""
    params.check_blend_zones()
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    _check_domain(x, y)
    x = x.ravel()
    y = y.ravel()
    w = params.blend_halfwidth
    upper = y > Y_BREAK
    out = np.empty(x.shape)
    out[upper] = _x_blended(params, x[upper], y[upper], True)
    out[~upper] = _x_blended(params, x[~upper], y[~upper], False)
    if w > 0:
        sel = np.abs(y - Y_BREAK) < w
        if np.any(sel):
            lo = _x_blended(params, x[sel], y[sel], False)
            hi = _x_blended(params, x[sel], y[sel], True)
            out[sel] = _blend(y[sel], Y_BREAK, w, lo, hi)
    return params.V_s * out


def smooth_potential(params: PotentialParams, grid: Grid2D) -> ScalarField2D:
    X, Y = grid.mesh()
    return ScalarField2D(grid, smooth_potential_at(params, X, Y).reshape(grid.shape))


def y_slice(params: PotentialParams, region: str) -> Callable[[np.ndarray], np.ndarray]:
    """Transverse cross-section of the smoothed potential, as a function of y.

    ``"well"`` is the single guide at y=8; ``"step"`` is the raised pair of
    guides at y=+-8 blended across y=0.
    """
    V_s, h0, w = params.V_s, params.h0, params.blend_halfwidth
    if region == "well":
        return lambda y: V_s * _harm(np.asarray(y, float), GUIDE_CENTER)
    if region == "step":
        def step(y):
            y = np.asarray(y, float)
            lo = _harm(y, -GUIDE_CENTER) + h0
            hi = _harm(y, GUIDE_CENTER) + h0
            out = np.where(y > Y_BREAK, hi, lo)
            if w > 0:
                sel = np.abs(y - Y_BREAK) < w
                out = np.where(sel, _blend(y, Y_BREAK, w, lo, hi), out)
            return V_s * out
        return step
    raise ValueError(f"unknown region {region!r}; expected 'well' or 'step'")


# -- calibration ---------------------------------------------------------------

@dataclass(frozen=True)
class TransverseLevels:
    E_well_y0: float
    E_step_y0: float
    E_step_y1: float

    @property
    def J0(self) -> float:
        return (self.E_step_y1 - self.E_step_y0) / (2 * HBAR)

    @property
    def V0(self) -> float:
        return self.E_step_y0 - self.E_well_y0


@dataclass(frozen=True)
class CalibrationResult:
    params: PotentialParams
    levels: TransverseLevels
    iterations: int

    @property
    def J0(self) -> float:
        return self.levels.J0

    @property
    def V0(self) -> float:
        return self.levels.V0


def transverse_levels(params: PotentialParams, y_grid: Grid1D, mass: float,
                      solver: Callable | None = None) -> TransverseLevels:
    """Lowest y-levels of the well and step cross-sections.

    ``solver(y_grid, V_values, mass, k)`` must return the ``k`` lowest
    eigenvalues; the default is the tridiagonal finite-difference solver.
    """
    if solver is None:
        from .spectral import lowest_levels_1d as solver
    y = y_grid.points
    well = solver(y_grid, y_slice(params, "well")(y), mass, 1)
    step = solver(y_grid, y_slice(params, "step")(y), mass, 2)
    return TransverseLevels(float(well[0]), float(step[0]), float(step[1]))


def _bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float, what: str) -> float:
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise CalibrationError(
            f"no sign change while bracketing {what} over [{lo:g}, {hi:g}]: "
            f"residuals {flo:.6g} and {fhi:.6g}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < xtol:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate(target_J0: float, target_V0: float, y_grid: Grid1D, mass: float,
              solver: Callable | None = None, initial: PotentialParams | None = None,
              V_s_bracket=(0.02, 2.0), h0_bracket=(0.0, 10.0),
              J0_rtol: float = 1e-4, V0_atol: float = 1e-4,
              max_outer: int = 20) -> CalibrationResult:
    """Tune V_s to hit ``target_J0`` (rad/ps) and h0 to hit ``target_V0`` (meV).

    V_s is bisected at fixed h0, then h0 at fixed V_s, repeating until both
    targets hold.  If ``initial`` already satisfies them it is returned with
    zero iterations.
    """
    if not target_J0 > 0:
        raise ValueError("target_J0 must be positive")
    if not target_V0 >= 0:
        raise ValueError("target_V0 must be non-negative")
    params = initial or PotentialParams()

    def levels_for(p):
        return transverse_levels(p, y_grid, mass, solver)

    def done(lv):
        return (abs(lv.J0 - target_J0) <= J0_rtol * target_J0
                and abs(lv.V0 - target_V0) <= V0_atol)

    lv = levels_for(params)
    if done(lv):
        return CalibrationResult(params, lv, 0)

    # h0 only shifts the whole step slice, so it must stay positive while V_s is scanned
    for it in range(1, max_outer + 1):
        h0 = params.h0
        V_s = _bisect(lambda v: levels_for(PotentialParams(v, h0, params.blend_halfwidth)).J0 - target_J0,
                      *V_s_bracket, xtol=1e-9, what="V_s (coupling J0)")
        params = replace(params, V_s=V_s)
        h_lo = max(h0_bracket[0], 1e-12)
        h0 = _bisect(lambda h: levels_for(PotentialParams(V_s, h, params.blend_halfwidth)).V0 - target_V0,
                     h_lo, h0_bracket[1], xtol=1e-9, what="h0 (barrier V0)")
        params = replace(params, h0=h0)
        lv = levels_for(params)
        log.debug("calibration pass %d: V_s=%.6g h0=%.6g J0=%.6g V0=%.6g", it, V_s, h0, lv.J0, lv.V0)
        if done(lv):
            return CalibrationResult(params, lv, it)
    raise CalibrationError(f"calibration did not converge in {max_outer} passes "
                           f"(J0={lv.J0:.6g}, V0={lv.V0:.6g})")
