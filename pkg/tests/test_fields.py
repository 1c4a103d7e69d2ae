import math

import numpy as np
import pytest

from evanescent.fields import (EvaluationError, bohm_velocity, current_divergence,
                               density_weighted_mean, evanescent_speed_at_step,
                               symmetric_velocity)
from evanescent.grid import HBAR, ComplexField2D, Grid2D, PAPER_UNITS, ScalarField2D

M = PAPER_UNITS.mass
C = HBAR / M  # 15.173 um^2/ps


def _normalised(g, values):
    values = np.asarray(values, complex)
    return ComplexField2D(g, values / math.sqrt(np.sum(np.abs(values) ** 2) * g.cell_area))


def test_plane_wave_bohm_velocity():
    g = Grid2D(0.0, 50.0, 0.0, 5.0, 0.05, 0.5)
    k = 0.2
    X, _ = g.mesh()
    v = bohm_velocity(_normalised(g, np.exp(1j * k * X)), M)
    inner = v.vx[1:-1]
    # central differences see sin(kh)/h exactly; the continuum value is hbar k / m
    assert np.allclose(inner, C * math.sin(k * g.h_x) / g.h_x, rtol=1e-10, atol=0)
    assert C * k == pytest.approx(3.035, abs=1e-3)
    assert np.allclose(inner, C * k, rtol=(k * g.h_x) ** 2 / 6 * 1.01)
    assert np.abs(v.vy[:, 1:-1]).max() < 1e-10


def test_plane_wave_has_no_symmetric_velocity():
    g = Grid2D(0.0, 20.0, 0.0, 5.0, 0.1, 0.5)
    X, Y = g.mesh()
    v = symmetric_velocity(_normalised(g, np.exp(1j * (0.3 * X - 0.1 * Y))), M)
    # one-sided edge stencils are only second order, so check interior nodes
    assert np.abs(v.vx[1:-1]).max() < 1e-10 and np.abs(v.vy[:, 1:-1]).max() < 1e-10


def test_gaussian_symmetric_velocity():
    sigma = 4.932
    g = Grid2D(-1.0, 1.0, -30.0, 30.0, 0.5, 0.001)
    _, Y = g.mesh()
    v = symmetric_velocity(_normalised(g, np.exp(-Y**2 / (2 * sigma**2))), M)
    j = int(round((sigma - g.y_min) / g.h_y))
    y, h = g.y[j], g.h_y
    discrete = C * math.exp(-h**2 / (2 * sigma**2)) * math.sinh(y * h / sigma**2) / h
    assert v.vy[1, j] == pytest.approx(discrete, rel=1e-10)
    assert C / sigma == pytest.approx(3.077, abs=1e-3)
    assert v.vy[1, j] == pytest.approx(C * y / sigma**2, rel=1e-6)


def test_evanescent_tail_constant_log_slope():
    g = Grid2D(0.0, 30.0, 0.0, 2.0, 0.5, 0.5)
    kappa = 0.3
    X, _ = g.mesh()
    v = symmetric_velocity(_normalised(g, np.exp(-kappa * X)), M)
    inner = v.vx[1:-1]
    assert np.allclose(inner, inner[0], rtol=1e-12)
    assert inner[0] == pytest.approx(C * kappa, rel=(kappa * g.h_x) ** 2 / 6 * 1.01)


def test_global_phase_invariance():
    g = Grid2D(-5.0, 5.0, -5.0, 5.0, 0.25, 0.25)
    X, Y = g.mesh()
    psi = np.exp(-(X**2 + Y**2) / 4 + 0.7j * X)
    a = bohm_velocity(_normalised(g, psi), M)
    b = bohm_velocity(_normalised(g, psi * np.exp(1.3j)), M)
    assert np.allclose(a.vx, b.vx, atol=1e-12) and np.allclose(a.vy, b.vy, atol=1e-12)


def test_nodes_are_masked_and_errors():
    g = Grid2D(-5.0, 5.0, -5.0, 5.0, 0.5, 0.5)
    X, Y = g.mesh()
    psi = _normalised(g, X * np.exp(-(X**2 + Y**2) / 4))
    v = symmetric_velocity(psi, M)
    assert not v.valid[10].any()  # the x = 0 column is a nodal line
    assert np.all(v.vx[~v.valid] == 0)
    assert v.components()[2].values.sum() == v.valid.sum()
    with pytest.raises(ValueError):
        bohm_velocity(ComplexField2D(g, np.zeros(g.shape)), M)
    with pytest.raises(ValueError):
        bohm_velocity(ComplexField2D(g, np.ones(g.shape)), M)  # not normalised


def test_real_eigenstates_have_zero_bohm_velocity(coarse_spectrum):
    sp = coarse_spectrum
    for n in (0, 7, len(sp) - 1):
        v = bohm_velocity(sp.state(n), sp.mass)
        assert np.abs(v.vx[v.valid]).max(initial=0) <= 1e-8
        assert np.abs(v.vy[v.valid]).max(initial=0) <= 1e-8
        assert np.all(current_divergence(sp.state(n), sp.mass) == 0)


def test_density_weighted_symmetric_velocity_vanishes(coarse_spectrum):
    sp = coarse_spectrum
    g = sp.grid
    for n in (0, 11, 40):
        psi = sp.state(n)
        mx, my = density_weighted_mean(symmetric_velocity(psi, sp.mass), psi)
        assert abs(mx) <= 1e-6 * C / g.h_x
        assert abs(my) <= 1e-6 * C / g.h_y


def test_step_speed_close_to_de_broglie_for_deep_states(coarse_spectrum):
    sp = coarse_spectrum
    n = sp.series(0)[0]
    E_x = sp.energies[n] - sp.E_well_y0
    v = evanescent_speed_at_step(n, sp)
    assert v == pytest.approx(math.sqrt(2 * (sp.V0 - E_x) / sp.mass), rel=0.10)
    with pytest.raises(ValueError):
        evanescent_speed_at_step(n, sp, x_eval=-5.0)
    with pytest.raises(IndexError):
        evanescent_speed_at_step(n, sp, x_eval=800.0)


def test_step_speed_falls_toward_barrier(coarse_spectrum):
    sp = coarse_spectrum
    s0 = sp.series(0)
    speeds = [evanescent_speed_at_step(n, sp) for n in s0[::10]]
    assert np.all(np.diff(speeds) < 0)


def test_step_speed_on_field_input_and_node_error(coarse_spectrum):
    sp = coarse_spectrum
    psi = sp.state(3)
    assert evanescent_speed_at_step(psi, sp) == evanescent_speed_at_step(3, sp)
    g = sp.grid
    hole = np.array(psi.values)
    i = int(round((3.0 - g.x_min) / g.h_x))
    j = int(round((8.0 - g.y_min) / g.h_y))
    hole[i, j] = 0.0
    with pytest.raises(EvaluationError, match="node"):
        evanescent_speed_at_step(ComplexField2D(g, hole), sp)


def test_scalar_fields_accepted():
    g = Grid2D(-3.0, 3.0, -3.0, 3.0, 0.5, 0.5)
    X, Y = g.mesh()
    f = np.exp(-(X**2 + Y**2) / 2)
    f /= math.sqrt(np.sum(f**2) * g.cell_area)
    v = symmetric_velocity(ScalarField2D(g, f), M)
    w = symmetric_velocity(ComplexField2D(g, f), M)
    assert np.array_equal(v.vx, w.vx)
    with pytest.raises(TypeError):
        symmetric_velocity(f, M)
