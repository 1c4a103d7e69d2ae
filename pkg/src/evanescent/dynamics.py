"""Bound pseudo-Gaussian pulses, exact eigenbasis propagation and
time-averaged densities.

A Gaussian released at rest on the ramp is projected onto the bound
eigenstates and renormalised, so the evolved pulse can never cross the step.
Propagation is a phase rotation of the coefficients; the time average over
[0, T] has the closed form

    rho_bar = sum_mn c_m c_n psi_m psi_n Re W_mn,
    W_mn = exp(-i D T / 2 hbar) sinc(D T / 2 hbar),   D = E_n - E_m.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .grid import HBAR, ComplexField2D, Grid2D, ScalarField2D
from .potential import PotentialParams

SIGMA_Y = 4.932  # um, sqrt(hbar / m omega) of the well guide
SIGMA_X = 2 * SIGMA_Y
MIN_FIDELITY = 0.5


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class PulseSpec:
    x0: float  # um, release point on the ramp
    sigma_x: float = SIGMA_X
    sigma_y: float = SIGMA_Y
    y_c: float = 8.0
    target_mean_Ex: float | None = None

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("pulse widths must be positive")
        if not -900.0 <= self.x0 <= -600.0:
            raise ValueError(f"x0={self.x0} is not on the ramp [-900, -600] um")


@dataclass
class PulseState:
    coefficients: np.ndarray  # renormalised c'_n
    fidelity: float
    mean_E: float
    mean_Ex: float
    spec: PulseSpec | None = None
    warnings: list[str] = field(default_factory=list)


def _gauss(u, center, sigma):
    return np.exp(-((u - center) ** 2) / (2 * sigma**2))


def clipped_mass(spec: PulseSpec, grid: Grid2D) -> float:
    """Probability of the continuous Gaussian lying outside the mesh."""
    def inside(lo, hi, c, s):
        # |psi|^2 is Gaussian with standard deviation s / sqrt(2)
        return 0.5 * (erf((hi - c) / s) - erf((lo - c) / s))
    fx = inside(grid.x_min, grid.x_max, spec.x0, spec.sigma_x)
    fy = inside(grid.y_min, grid.y_max, spec.y_c, spec.sigma_y)
    return float(1.0 - fx * fy)


def pulse_factors(spec: PulseSpec, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Discretely normalised f(x) and g(y) with phi0 = f(x) g(y)."""
    f = _gauss(grid.x, spec.x0, spec.sigma_x)
    g = _gauss(grid.y, spec.y_c, spec.sigma_y)
    f /= math.sqrt(np.sum(f**2) * grid.h_x)
    g /= math.sqrt(np.sum(g**2) * grid.h_y)
    return f, g


def gaussian_pulse(spec: PulseSpec, grid: Grid2D) -> ComplexField2D:
    """Real, positive separable Gaussian with unit discrete norm."""
    lost = clipped_mass(spec, grid)
    if lost > 1e-6:
        warnings.warn(f"pulse at x0={spec.x0} loses {lost:.3g} of its mass past the mesh edge")
    f, g = pulse_factors(spec, grid)
    return ComplexField2D(grid, np.outer(f, g))


def state_from_coefficients(c: np.ndarray, spectrum, spec: PulseSpec | None = None,
                            min_fidelity: float = MIN_FIDELITY) -> PulseState:
    """Renormalise raw projections c_n into a PulseState."""
    c = np.real_if_close(np.asarray(c))
    if np.iscomplexobj(c):
        raise ProjectionError("pulse projections must be real (pulse released at rest)")
    fidelity = float(np.sum(c**2))
    if fidelity < min_fidelity:
        raise ProjectionError(f"only {fidelity:.3f} of the pulse lies in the bound subspace")
    cp = c / math.sqrt(fidelity)
    mean_E = float(np.sum(cp**2 * spectrum.energies))
    return PulseState(cp, fidelity, mean_E, mean_E - spectrum.E_well_y0, spec)


def project_onto_bound(phi0, spectrum, spec: PulseSpec | None = None,
                       min_fidelity: float = MIN_FIDELITY) -> PulseState:
    """c_n = <psi_n | phi0> with weight h_x h_y, then renormalised."""
    grid = spectrum.grid
    values = phi0.values
    norm = np.sum(np.abs(values) ** 2) * grid.cell_area
    if abs(norm - 1) > 1e-8:
        raise ValueError(f"phi0 is not normalised (norm {norm:.12g})")
    c = np.array([np.vdot(np.asarray(spectrum.states[n]), values) for n in range(len(spectrum))])
    c = c * grid.cell_area
    state = state_from_coefficients(c, spectrum, spec, min_fidelity)
    if spec is not None:
        lost = clipped_mass(spec, grid)
        if lost > 1e-6:
            state.warnings.append(f"pulse tail clipped by the mesh edge ({lost:.3g} of the mass)")
    return state


def transverse_projections(spectrum, g: np.ndarray) -> np.ndarray:
    """P[n, i] = sum_j g(y_j) psi_n(x_i, y_j) h_y, for separable pulses."""
    h_y = spectrum.grid.h_y
    return np.stack([np.asarray(spectrum.states[n]) @ g * h_y for n in range(len(spectrum))])


def pulse_series(spectrum, params: PotentialParams, count: int = 42, spacing: float = 0.01,
                 top_gap: float = 0.04, sigma_x: float = SIGMA_X, sigma_y: float = SIGMA_Y,
                 y_c: float = 8.0) -> list[PulseSpec]:
    """Release points whose bound-projected <E_x> values are ``spacing`` apart.

    The targets run down from V0 - ``top_gap``.  Each release point is found by
    root finding on <E_x>(x0) of the projected, renormalised pulse, starting
    from the point where ramp potential plus the Gaussian's kinetic energy
    hbar^2/(4 m sigma_x^2) equals the target.  A target that cannot be
    bracketed on the ramp keeps that starting point.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    grid = spectrum.grid
    slope = params.ramp_slope_mev
    kinetic = HBAR**2 / (4 * spectrum.mass * sigma_x**2)
    top_Ex = spectrum.V0 - top_gap
    targets = [top_Ex - j * spacing for j in range(count)]
    _, g = pulse_factors(PulseSpec(-750.0, sigma_x, sigma_y, y_c), grid)
    P = transverse_projections(spectrum, g) * grid.h_x
    E = spectrum.energies

    def mean_Ex(x0):
        f, _ = pulse_factors(PulseSpec(x0, sigma_x, sigma_y, y_c), grid)
        c = P @ f
        return float(np.sum(c**2 * E) / np.sum(c**2)) - spectrum.E_well_y0

    lo_edge, hi_edge = -900.0, -600.0
    out = []
    for t in targets:
        guess = min(max(-600.0 - (t - kinetic) / slope, lo_edge), hi_edge)
        x0 = guess
        a, b = max(guess - 5.0, lo_edge), min(guess + 5.0, hi_edge)
        fa, fb = mean_Ex(a) - t, mean_Ex(b) - t
        while fa * fb > 0 and (a > lo_edge or b < hi_edge):
            a, b = max(a - 10.0, lo_edge), min(b + 10.0, hi_edge)
            fa, fb = mean_Ex(a) - t, mean_Ex(b) - t
        if fa * fb <= 0:
            x0 = brentq(lambda x: mean_Ex(x) - t, a, b, xtol=1e-9)
        out.append(PulseSpec(float(x0), sigma_x, sigma_y, y_c, target_mean_Ex=t))
    return out


def project_series(specs: list[PulseSpec], spectrum, min_fidelity: float = MIN_FIDELITY) -> list:
    """Project many separable pulses at once.

    Returns PulseState objects, or the ProjectionError for pulses that fall
    mostly outside the bound subspace.
    """
    grid = spectrum.grid
    cache: dict = {}
    out = []
    for spec in specs:
        key = (spec.sigma_y, spec.y_c)
        if key not in cache:
            _, g = pulse_factors(spec, grid)
            cache[key] = transverse_projections(spectrum, g)
        f, _ = pulse_factors(spec, grid)
        c = cache[key] @ f * grid.h_x
        try:
            st = state_from_coefficients(c, spectrum, spec, min_fidelity)
        except ProjectionError as exc:
            out.append(exc)
            continue
        lost = clipped_mass(spec, grid)
        if lost > 1e-6:
            st.warnings.append(f"pulse tail clipped by the mesh edge ({lost:.3g} of the mass)")
        out.append(st)
    return out


def evolve(state: PulseState, t: float, spectrum) -> ComplexField2D:
    """psi(t) = sum_n c'_n exp(-i E_n t / hbar) psi_n."""
    if t < 0:
        raise ValueError("t must be non-negative")
    phase = state.coefficients * np.exp(-1j * spectrum.energies * t / HBAR)
    out = np.zeros(spectrum.grid.shape, dtype=complex)
    for n, a in enumerate(phase):
        if a != 0:
            out += a * np.asarray(spectrum.states[n])
    return ComplexField2D(spectrum.grid, out)


def default_window(state: PulseState, mass: float) -> float:
    """Averaging time covering one approach, reflection and return (ps).

    T = 2 |x0| / v + 4 sigma_x / v with v = sqrt(2 <E_x> / m).
    """
    if state.spec is None or state.mean_Ex <= 0:
        raise ValueError("default window needs a pulse spec and positive <E_x>")
    v = math.sqrt(2 * state.mean_Ex / mass)
    return (2 * abs(state.spec.x0) + 4 * state.spec.sigma_x) / v


def window_weights(energies: np.ndarray, T: float) -> np.ndarray:
    """Re W_mn for the average over [0, T]."""
    if not T > 0:
        raise ValueError("T must be positive")
    D = energies[None, :] - energies[:, None]
    z = D * T / (2 * HBAR)
    return np.cos(z) * np.sinc(z / np.pi)


def time_averaged_density(state: PulseState, T: float, spectrum, restrict=None,
                          chunk: int = 200_000):
    """Closed-form average of |psi(t)|^2 over [0, T].

    With ``restrict=(y_main, y_aux)`` only those two centerlines are evaluated
    and a pair of 1D profiles is returned; otherwise the full ScalarField2D.
    """
    c = state.coefficients
    M = np.outer(c, c) * window_weights(spectrum.energies, T)
    if restrict is not None:
        out = []
        for y_c in restrict:
            P = spectrum.centerlines(y_c)  # (n_states, n_x)
            out.append(np.einsum("mi,mn,ni->i", P, M, P))
        return tuple(out)
    grid = spectrum.grid
    active = np.flatnonzero(c != 0)
    M = M[np.ix_(active, active)]
    rho = np.empty(grid.size)
    for a in range(0, grid.size, chunk):
        P = np.stack([np.asarray(spectrum.states[n]).reshape(-1)[a:a + chunk] for n in active])
        rho[a:a + chunk] = np.sum((M @ P) * P, axis=0)
    return ScalarField2D(grid, rho.reshape(grid.shape))


def position_matrix(spectrum) -> np.ndarray:
    """X_mn = <psi_m | x | psi_n>."""
    x = spectrum.grid.x[:, None]
    n = len(spectrum)
    X = np.empty((n, n))
    for m in range(n):
        xm = (x * np.asarray(spectrum.states[m])).reshape(-1)
        for k in range(m, n):
            X[m, k] = X[k, m] = xm @ np.asarray(spectrum.states[k]).reshape(-1)
    return X * spectrum.grid.cell_area


def mean_position(state: PulseState, times, spectrum, X: np.ndarray | None = None) -> np.ndarray:
    """<x>(t) from the coefficient phases."""
    X = position_matrix(spectrum) if X is None else X
    c = state.coefficients
    out = []
    for t in np.atleast_1d(times):
        a = c * np.exp(-1j * spectrum.energies * t / HBAR)
        out.append(float(np.real(np.conj(a) @ X @ a)))
    return np.asarray(out)
