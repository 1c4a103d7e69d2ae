"""Bohm and symmetric velocity fields.

Both come from the logarithmic derivative of the wavefunction::

    v_B = (hbar/m) Im(grad psi / psi)      (= grad S / m)
    v_s = -(hbar/m) Re(grad psi / psi)     (= -(hbar/m) grad R / R)

which avoids unwrapping the phase S.  Nodes (|psi|^2 below ``node_epsilon``
times the peak density) are masked; masked entries hold 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import HBAR, ComplexField2D, Grid2D, ScalarField2D, gradient, sample_at

NODE_EPSILON = 1e-12


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class VelocityField2D:
    grid: Grid2D
    vx: np.ndarray  # um/ps
    vy: np.ndarray
    valid: np.ndarray  # bool

    def speed(self) -> np.ndarray:
        return np.hypot(self.vx, self.vy)

    def components(self) -> tuple[ScalarField2D, ScalarField2D, ScalarField2D]:
        """(vx, vy, mask) as real fields for export."""
        return (ScalarField2D(self.grid, self.vx), ScalarField2D(self.grid, self.vy),
                ScalarField2D(self.grid, self.valid.astype(float)))


def _as_complex(psi) -> ComplexField2D:
    if isinstance(psi, ComplexField2D):
        return psi
    if isinstance(psi, ScalarField2D):
        return ComplexField2D(psi.grid, psi.values)
    raise TypeError("expected a ComplexField2D")


def _log_derivative(psi: ComplexField2D, node_epsilon: float, check_norm: bool):
    v = psi.values
    rho = np.abs(v) ** 2
    peak = rho.max()
    if peak == 0:
        raise ValueError("wavefunction is identically zero")
    if check_norm:
        norm = rho.sum() * psi.grid.cell_area
        if abs(norm - 1) > 1e-8:
            raise ValueError(f"wavefunction is not normalised (norm {norm:.12g})")
    valid = rho >= node_epsilon * peak
    dx, dy = gradient(v, psi.grid)
    safe = np.where(valid, v, 1.0)
    lx = np.where(valid, dx / safe, 0.0)
    ly = np.where(valid, dy / safe, 0.0)
    return lx, ly, valid


def bohm_velocity(psi, mass: float, node_epsilon: float = NODE_EPSILON,
                  check_norm: bool = True) -> VelocityField2D:
    psi = _as_complex(psi)
    lx, ly, valid = _log_derivative(psi, node_epsilon, check_norm)
    c = HBAR / mass
    return VelocityField2D(psi.grid, c * lx.imag, c * ly.imag, valid)


def symmetric_velocity(psi, mass: float, node_epsilon: float = NODE_EPSILON,
                       check_norm: bool = True) -> VelocityField2D:
    psi = _as_complex(psi)
    lx, ly, valid = _log_derivative(psi, node_epsilon, check_norm)
    c = -HBAR / mass
    return VelocityField2D(psi.grid, c * lx.real, c * ly.real, valid)


def density_weighted_mean(vel: VelocityField2D, psi) -> tuple[float, float]:
    """Discrete integral of rho * v over the valid mask."""
    rho = np.abs(_as_complex(psi).values) ** 2 * vel.valid
    dA = vel.grid.cell_area
    return float(np.sum(rho * vel.vx) * dA), float(np.sum(rho * vel.vy) * dA)


def _patch(values: np.ndarray, grid: Grid2D, x: float, y: float, half: int = 3):
    """Sub-array around (x, y) wide enough for interior central differences."""
    i = int(round((x - grid.x_min) / grid.h_x))
    j = int(round((y - grid.y_min) / grid.h_y))
    i0, i1 = max(i - half, 0), min(i + half + 1, grid.n_x_pts)
    j0, j1 = max(j - half, 0), min(j + half + 1, grid.n_y_pts)
    sub = Grid2D.from_counts(i1 - i0, j1 - j0, grid.x_min + i0 * grid.h_x,
                             grid.y_min + j0 * grid.h_y, grid.h_x, grid.h_y)
    return sub, values[i0:i1, j0:j1]


def evanescent_speed_at_step(state, spectrum, x_eval: float = 3.0, y_eval: float = 8.0,
                             node_epsilon: float = NODE_EPSILON) -> float:
    """|v_s| of a bound eigenstate at a point just inside the step.

    ``state`` is an index into ``spectrum`` or a field on its grid.  Only a
    small neighbourhood is differentiated; the values equal those of the full
    field away from the mesh edge.
    """
    grid = spectrum.grid
    if not x_eval > 0:
        raise ValueError("x_eval must lie on the step (x > 0)")
    if isinstance(state, (int, np.integer)):
        name = f"state {int(state)}"
        values = np.asarray(spectrum.states[state])
    else:
        name = "state"
        values = state.values
    if not grid.contains(x_eval, y_eval):
        raise IndexError(f"({x_eval}, {y_eval}) lies outside the mesh")
    peak = float(np.max(np.abs(values)) ** 2)
    sub, vals = _patch(values, grid, x_eval, y_eval)
    rho = np.abs(vals) ** 2
    valid = rho >= node_epsilon * peak
    dx, dy = gradient(vals.astype(complex), sub)
    if not np.all(valid):
        bad = ~valid
        # only nodes touching the bilinear stencil matter
        ii = np.clip(np.array([np.floor((x_eval - sub.x_min) / sub.h_x)]).astype(int), 0, sub.n_x_pts - 2)[0]
        jj = np.clip(np.array([np.floor((y_eval - sub.y_min) / sub.h_y)]).astype(int), 0, sub.n_y_pts - 2)[0]
        if np.any(bad[ii:ii + 2, jj:jj + 2]):
            raise EvaluationError(f"{name}: ({x_eval}, {y_eval}) is at a node of the wavefunction")
    safe = np.where(valid, vals, 1.0)
    c = -HBAR / spectrum.mass
    vx = np.where(valid, c * (dx / safe).real, 0.0)
    vy = np.where(valid, c * (dy / safe).real, 0.0)
    return float(np.hypot(sample_at(vx, x_eval, y_eval, sub), sample_at(vy, x_eval, y_eval, sub)))


# -- continuity ------------------------------------------------------------------

def bond_currents(psi, mass: float) -> tuple[np.ndarray, np.ndarray]:
    """Probability currents on mesh bonds, (hbar/(m h)) Im(psi_i^* psi_{i+1}).

    This is the discrete rho * v_B that the five-point Hamiltonian conserves:
    d rho / dt + div J = 0 holds exactly for the semi-discrete evolution.
    Shapes are (n_x - 1, n_y) and (n_x, n_y - 1).
    """
    psi = _as_complex(psi)
    v = psi.values
    g = psi.grid
    c = HBAR / mass
    jx = c / g.h_x * np.imag(np.conj(v[:-1]) * v[1:])
    jy = c / g.h_y * np.imag(np.conj(v[:, :-1]) * v[:, 1:])
    return jx, jy


def current_divergence(psi, mass: float) -> np.ndarray:
    """div(rho v_B) on the nodes from the bond currents (zero flux past the edge)."""
    g = _as_complex(psi).grid
    jx, jy = bond_currents(psi, mass)
    div = np.zeros(g.shape)
    div[:-1] += jx / g.h_x
    div[1:] -= jx / g.h_x
    div[:, :-1] += jy / g.h_y
    div[:, 1:] -= jy / g.h_y
    return div
