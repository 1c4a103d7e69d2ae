import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evanescent.grid import (HBAR, KG_TO_INTERNAL, PAPER_GRID, ComplexField2D, Grid1D, Grid2D,
                             ScalarField2D, UnitSystem, centerline, gradient, inner,
                             joule_to_mev, mass_to_internal, mass_to_kg, mev_to_joule, sample_at)


def test_paper_mass_in_internal_units():
    assert mass_to_internal(6.95e-36) == pytest.approx(0.043378, abs=1e-6)


def test_inverse_conversion_factor_is_unit_mass():
    assert mass_to_internal(1 / KG_TO_INTERNAL) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("bad", [0.0, -1e-36])
def test_nonpositive_mass_rejected(bad):
    with pytest.raises(ValueError):
        mass_to_internal(bad)
    with pytest.raises(ValueError):
        UnitSystem(bad)


@given(st.floats(1e-40, 1e-30))
def test_mass_round_trip(m):
    assert mass_to_kg(mass_to_internal(m)) == pytest.approx(m, rel=1e-12)


def test_energy_round_trip_and_hbar():
    assert joule_to_mev(mev_to_joule(0.538)) == pytest.approx(0.538, rel=1e-14)
    assert UnitSystem(1.0).hbar == HBAR == 0.6582119569


def test_paper_grid_counts():
    assert PAPER_GRID.shape == (3201, 801)
    assert PAPER_GRID.scaled(2).shape == (1601, 401)


def test_from_counts_round_trip():
    g = Grid2D.from_counts(7, 5, -1.0, 2.0, 0.25, 0.5)
    assert g.shape == (7, 5)
    assert g.x_max == pytest.approx(0.5)
    assert g.y[-1] == pytest.approx(4.0)


def test_grid_rejects_bad_spacing_and_tiny_meshes():
    with pytest.raises(ValueError):
        Grid2D(0, 1, 0, 1, 0.0, 0.1)
    with pytest.raises(ValueError):
        Grid2D(0, 1, 0, 1, 0.3, 0.1)  # extent not a multiple of h_x
    with pytest.raises(ValueError):
        Grid1D(0, 1, 1.0)  # only two points


@pytest.fixture
def small():
    return Grid2D(-2.0, 3.0, -1.0, 2.0, 0.5, 0.25)


def test_gradient_of_linear_field(small):
    X, Y = small.mesh()
    dx, dy = gradient(ScalarField2D(small, X))
    assert np.allclose(dx.values, 1.0, atol=1e-13)
    assert np.allclose(dy.values, 0.0, atol=1e-13)


def test_gradient_of_constant(small):
    dx, dy = gradient(np.full(small.shape, 3.0), small)
    assert not dx.any() and not dy.any()


def test_gradient_of_quadratic_exact_inside(small):
    X, Y = small.mesh()
    dx, dy = gradient(ScalarField2D(small, X**2 - 3 * X * Y + 2 * Y**2))
    assert np.allclose(dx.values[1:-1, 1:-1], (2 * X - 3 * Y)[1:-1, 1:-1], atol=1e-12)
    assert np.allclose(dy.values[1:-1, 1:-1], (-3 * X + 4 * Y)[1:-1, 1:-1], atol=1e-12)


def test_gradient_of_sine_within_truncation_bound():
    g = Grid2D(0.0, 100.0, 0.0, 1.0, 0.5, 0.5)
    k = 0.1
    X, _ = g.mesh()
    dx, _ = gradient(np.sin(k * X), g)
    err = np.abs(dx - k * np.cos(k * X))[1:-1]
    assert err.max() <= k**3 * 0.5**2 / 6 * (1 + 1e-9)


def test_summed_gradient_of_compact_field_vanishes():
    g = Grid2D(-5, 5, -5, 5, 0.25, 0.25)
    X, Y = g.mesh()
    f = np.exp(-(X**2 + Y**2))
    f[np.abs(X) > 4] = 0
    f[np.abs(Y) > 4] = 0
    dx, dy = gradient(f, g)
    bound = 1e-10 * f.max() / g.h_x
    assert abs(dx.sum()) <= bound and abs(dy.sum()) <= bound


def test_sample_at_nodes_and_midpoints(small):
    X, Y = small.mesh()
    f = ScalarField2D(small, 2 * X - Y)
    assert sample_at(f, 0.5, 0.25) == f.values[5, 5]
    mid = sample_at(f, 0.75, 0.375)
    corners = f.values[5:7, 5:7]
    assert mid == pytest.approx(corners.mean(), rel=1e-14)
    with pytest.raises(IndexError):
        sample_at(f, small.x_max + 1, 0.0)


@settings(max_examples=25)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31 - 1))
def test_sample_at_is_linear(a, b, seed):
    g = Grid2D(0, 4, 0, 3, 0.5, 0.5)
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=g.shape), rng.normal(size=g.shape)
    x, y = rng.uniform(0, 4), rng.uniform(0, 3)
    lhs = sample_at(a * f + b * h, x, y, g)
    rhs = a * sample_at(f, x, y, g) + b * sample_at(h, x, y, g)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)) * 10)


def test_centerline_profiles():
    g = Grid2D(-10, 10, -10, 10, 0.5, 0.1)
    X, Y = g.mesh()
    assert np.all(centerline(ScalarField2D(g, Y), 8.0) == 8.0)  # y = 8 is a node: no interpolation
    assert np.allclose(centerline(ScalarField2D(g, X * Y), -8.0), -8.0 * g.x, atol=1e-12)
    with pytest.raises(IndexError):
        centerline(ScalarField2D(g, X), 11.0)


def test_fields_validate_and_are_read_only(small):
    with pytest.raises(ValueError):
        ScalarField2D(small, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ScalarField2D(small, np.full(small.shape, np.nan))
    f = ComplexField2D(small, np.ones(small.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2
    area = (small.n_x_pts * small.n_y_pts) * small.cell_area
    assert f.norm2() == pytest.approx(area)
    assert inner(f, f, small) == pytest.approx(area)
    assert math.isclose(UnitSystem(2.0).kinetic_scale, HBAR**2 / 4)
