import math

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from evanescent._blocksolve import ModeReduction, SeparableShiftInvert
from evanescent.grid import HBAR, PAPER_GRID, PAPER_UNITS, Grid1D, Grid2D, MEV_TO_J
from evanescent.potential import PotentialParams, y_slice
from evanescent.spectral import (SolverError, assemble_1d, assemble_2d, classify_modes,
                                 coupling_constant, effective_barrier, lowest_levels_1d,
                                 solve_1d, solve_lowest)

M = PAPER_UNITS.mass
P = PotentialParams()
OMEGA = math.sqrt(2 * P.V_s * (4 / 75) / M)


def test_harmonic_frequency():
    assert OMEGA == pytest.approx(0.62351, abs=1e-5)


def test_free_stencil_diagonal():
    H = assemble_1d(Grid1D(0, 2, 1.0), np.zeros(3), M)
    assert H.matrix[1, 1] == pytest.approx(HBAR**2 / M, rel=1e-15)
    g = Grid2D(0, 2, 0, 2, 1.0, 0.5)
    H2 = assemble_2d(g, np.zeros(g.shape), M)
    assert H2.matrix[7, 7] == pytest.approx(HBAR**2 / M * (1 + 4), rel=1e-15)
    assert np.diff(H2.matrix.indptr).max() <= 5


def test_constant_potential_shifts_levels():
    g = Grid1D(0.5, 99.5, 0.5)
    e0 = lowest_levels_1d(g, np.zeros(g.n), M, 4)
    e1 = lowest_levels_1d(g, np.full(g.n, 0.3), M, 4)
    assert np.allclose(e1 - e0, 0.3, atol=1e-12)


def test_particle_in_a_box():
    # nodes 0.5 .. 99.5 with Dirichlet walls at 0 and 100 um
    e = lowest_levels_1d(Grid1D(0.5, 99.5, 0.5), np.zeros(199), M, 1)[0]
    exact = math.pi**2 * HBAR**2 / (2 * M * 100.0**2)
    assert exact == pytest.approx(0.004929, abs=1e-6)
    assert e == pytest.approx(exact, rel=1e-3)


def test_harmonic_well_slice():
    e = lowest_levels_1d(PAPER_GRID.y_axis, y_slice(P, "well"), M, 7)
    assert e[0] == pytest.approx(0.2052, abs=1e-3)
    assert e[0] == pytest.approx(HBAR * OMEGA / 2, rel=5e-3)
    spacing = np.diff(e[:6])
    assert np.allclose(spacing, HBAR * OMEGA, rtol=5e-3)


def test_step_slice_levels():
    e = lowest_levels_1d(PAPER_GRID.y_axis, y_slice(P, "step"), M, 2)
    assert e == pytest.approx([0.743, 0.796], abs=3e-3)


def test_solve_lowest_in_1d_matches_oscillator():
    H = assemble_1d(PAPER_GRID.y_axis, y_slice(P, "well"), M)
    pairs = solve_lowest(H, 2.0)
    k = np.arange(3)
    assert np.allclose(pairs.energies[:3], HBAR * OMEGA * (k + 0.5), rtol=5e-3)
    assert np.all(pairs.energies < 2.0)
    gram = pairs.vectors @ pairs.vectors.T * pairs.weight
    assert np.allclose(gram, np.eye(len(pairs)), atol=1e-10)


def test_solve_1d_normalisation_and_signs():
    g = PAPER_GRID.y_axis
    w, v = solve_1d(g, y_slice(P, "well"), M, 2)
    assert np.allclose(np.sum(v**2, axis=0) * g.h, 1.0)
    assert np.all(v[np.argmax(np.abs(v), axis=0), [0, 1]] > 0)


# -- small 2D problems against a dense oracle ------------------------------------------

def _dense(H):
    return np.linalg.eigh(H.matrix.toarray())


def _random_well(seed, n_x=40, n_y=36):
    g = Grid2D.from_counts(n_x, n_y, -10.0, -9.0, 0.5, 0.5)
    X, Y = g.mesh()
    rng = np.random.default_rng(seed)
    V = 0.002 * (X**2 + Y**2) + 0.05 * rng.random(g.shape)
    return g, V


def test_hamiltonian_symmetry_and_hermiticity():
    g, V = _random_well(0)
    H = assemble_2d(g, V, M)
    assert H.is_symmetric()
    rng = np.random.default_rng(1)
    u = rng.normal(size=g.size) + 1j * rng.normal(size=g.size)
    w = rng.normal(size=g.size) + 1j * rng.normal(size=g.size)
    lhs, rhs = np.vdot(u, H.matrix @ w), np.vdot(H.matrix @ u, w)
    assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


def test_splu_path_matches_dense():
    g, V = _random_well(2)
    H = assemble_2d(g, V, M)
    E, vec = _dense(H)
    cutoff = 0.5 * (E[24] + E[25])
    pairs = solve_lowest(H, cutoff, method="splu", slice_size=8)
    assert len(pairs) == 25
    assert np.allclose(pairs.energies, E[:25], rtol=1e-9, atol=0)
    # eigenvectors agree up to sign (levels are non-degenerate for a random potential)
    ov = np.abs(np.sum(pairs.vectors * vec[:, :25].T, axis=1)) * math.sqrt(g.cell_area)
    assert np.allclose(ov, 1.0, atol=1e-8)
    assert pairs.residuals.max() <= 1e-8


def test_cutoff_below_ground_gives_empty_result():
    g, V = _random_well(3)
    H = assemble_2d(g, V, M)
    assert len(solve_lowest(H, -1.0)) == 0
    with pytest.raises(ValueError):
        solve_lowest(H, 1.0, method="lanczos")


@pytest.mark.parametrize("seed", [4, 5, 6])
def test_interlacing_under_potential_increase(seed):
    g, V = _random_well(seed, 20, 18)
    rng = np.random.default_rng(seed + 100)
    E0 = _dense(assemble_2d(g, V, M))[0]
    E1 = _dense(assemble_2d(g, V + 0.1 * rng.random(g.shape), M))[0]
    assert np.all(E1 >= E0 - 1e-12)


def _separable_with_defect(n_x=60, n_y=40, seed=7):
    """Potential p(y) + q(x) except on a few middle columns."""
    g = Grid2D.from_counts(n_x, n_y, -15.0, -10.0, 0.5, 0.5)
    x, y = g.x, g.y
    V = 0.004 * y[None, :] ** 2 + 0.001 * x[:, None] ** 2
    rng = np.random.default_rng(seed)
    V[28:33] += 0.08 * rng.random((5, n_y))
    return g, V


def test_block_factor_solve_and_inertia():
    g, V = _separable_with_defect()
    H = assemble_2d(g, V, M)
    op = SeparableShiftInvert(V, g.h_x, g.h_y, H.kinetic)
    assert 0.85 < op.separable_fraction < 1
    E = _dense(H)[0]
    sigma = 0.5 * (E[17] + E[18])
    fac = op.factor(sigma)
    assert fac.negative_count() == 18
    b = np.random.default_rng(8).normal(size=(g.size, 3))
    ref = spla.spsolve((H.matrix - sigma * sp.identity(g.size)).tocsc(), b)
    assert np.allclose(fac.solve(b), ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


def test_mode_reduction_is_principal_and_lifts_isometrically():
    g, V = _separable_with_defect()
    H = assemble_2d(g, V, M)
    op = SeparableShiftInvert(V, g.h_x, g.h_y, H.kinetic)
    red = ModeReduction(op, E_max=0.5)
    A = red.matrix()
    assert red.dimension < g.size
    assert abs(A - A.T).max() == 0
    rng = np.random.default_rng(9)
    y = rng.normal(size=red.dimension)
    v = red.lift(y)
    assert np.linalg.norm(v) == pytest.approx(np.linalg.norm(y), rel=1e-12)
    assert v @ (H.matrix @ v) == pytest.approx(y @ (A @ y), rel=1e-10)


def test_block_path_matches_dense():
    g, V = _separable_with_defect()
    H = assemble_2d(g, V, M)
    E, vec = _dense(H)
    cutoff = 0.5 * (E[19] + E[20])
    pairs = solve_lowest(H, cutoff, method="blocks", slice_size=10)
    assert pairs.inertia_count == 20 == len(pairs)
    assert np.allclose(pairs.energies, E[:20], rtol=1e-9, atol=0)
    ov = np.abs(np.sum(pairs.vectors * vec[:, :20].T, axis=1)) * math.sqrt(g.cell_area)
    assert np.allclose(ov, 1.0, atol=1e-8)


def test_block_path_rejects_nonseparable_potential():
    g, V = _random_well(10, 40, 20)
    with pytest.raises(SolverError):
        solve_lowest(assemble_2d(g, V, M), 0.3, method="blocks")


def test_refinement_changes_low_levels_little():
    def levels(h):
        g = Grid2D(-30.0, 30.0, -12.0, 28.0, h, h / 2)
        X, Y = g.mesh()
        V = P.V_s * (4 / 75) * (Y - 8) ** 2 + 0.0005 * X**2
        return solve_lowest(assemble_2d(g, V, M), 0.5, method="splu").energies[:10]

    coarse, fine = levels(1.0), levels(0.5)
    assert np.all(np.abs(coarse - fine) / fine < 5e-3)


# -- constants and labelling ----------------------------------------------------------

def test_coupling_constant():
    assert coupling_constant(0.743, 0.796) == pytest.approx(0.040261, abs=1e-6)
    assert coupling_constant(0.743, 0.796) / (2 * math.pi) * 1e3 == pytest.approx(6.41, abs=0.01)
    assert coupling_constant(0.7, 0.7) == 0
    assert coupling_constant(0.7, 0.9) == pytest.approx(2 * coupling_constant(0.7, 0.8))
    with pytest.raises(ValueError):
        coupling_constant(0.8, 0.7)


def test_effective_barrier():
    assert effective_barrier(0.743, 0.205) == pytest.approx(0.538)
    assert effective_barrier(0.5, 0.5) == 0
    assert 0.538 * MEV_TO_J == pytest.approx(0.862e-22, rel=1e-3)


def test_classification_of_a_separable_product():
    g = Grid2D(-700.0, 0.0, -20.0, 30.0, 1.0, 0.5)
    _, gy = solve_1d(g.y_axis, y_slice(P, "well"), M, 2)
    fx = np.sin(np.pi * (g.x - g.x_min) / (g.x_max - g.x_min) * 3)  # two interior nodes
    states = np.stack([np.outer(fx, gy[:, 0]), np.outer(fx, gy[:, 1])])
    labels = classify_modes(states, g, gy.T)
    assert [(lb.n_x, lb.n_y) for lb in labels] == [(3, 0), (3, 1)]
    assert all(lb.separable for lb in labels)


def test_coarse_spectrum_census(coarse_spectrum):
    sp = coarse_spectrum
    assert sp.labels[0].n_x == 1 and sp.labels[0].n_y == 0
    assert np.all(sp.energies < sp.cutoff)
    assert len(sp) == sp.inertia_count
    assert abs(len(sp) - 103) <= 8
    gram = np.array([[np.vdot(sp.states[i], sp.states[j]) for j in range(5)] for i in range(5)])
    assert np.allclose(gram * sp.grid.cell_area, np.eye(5), atol=1e-10)
