import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evanescent.grid import Grid1D, Grid2D, PAPER_GRID, PAPER_UNITS
from evanescent.potential import (CalibrationError, PotentialParams, blend_weight, calibrate,
                                  raw_potential, smooth_potential, smooth_potential_at,
                                  transverse_levels, y_slice)

P = PotentialParams()
Y_AXIS = PAPER_GRID.y_axis
M = PAPER_UNITS.mass


@pytest.mark.parametrize("x, y, expected", [
    (-300.0, 8.0, 0.0),                 # well floor on the guide axis
    (-5.0, -3.0, 12 * 0.1581),          # flat barrier, 1.8972
    (100.0, -8.0, 3.587 * 0.1581),      # auxiliary guide floor, 0.56711
    (100.0, 8.0, 3.587 * 0.1581),
])
def test_raw_potential_branches(x, y, expected):
    assert raw_potential(P, x, y) == pytest.approx(expected, abs=1e-12)
    assert smooth_potential_at(P, x, y)[0] == pytest.approx(expected, abs=1e-12)


def test_raw_potential_continuous_where_ramp_meets_well():
    left = raw_potential(P, -600.0 - 1e-9, 8.0)
    right = raw_potential(P, -600.0 + 1e-9, 8.0)
    assert abs(left - right) < 1e-9


def test_ramp_slope():
    assert P.ramp_slope_mev == pytest.approx(0.004216, abs=1e-6)
    v1, v2 = raw_potential(P, [-800.0, -700.0], 8.0)
    assert (v1 - v2) / 100 == pytest.approx(P.ramp_slope_mev, rel=1e-12)


def test_out_of_domain_rejected():
    with pytest.raises(ValueError):
        raw_potential(P, 701.0, 0.0)
    with pytest.raises(ValueError):
        smooth_potential_at(P, 0.0, 41.0)


def test_blend_weight_endpoints_and_midpoint():
    assert blend_weight(0.0, 0.0, 2.0) == pytest.approx(0.5)
    assert blend_weight(-2.0, 0.0, 2.0) == pytest.approx(1.0)
    assert blend_weight(2.0, 0.0, 2.0) == pytest.approx(0.0, abs=1e-15)
    assert blend_weight(1.0, 0.0, 2.0) == pytest.approx(0.14645, abs=1e-5)


def test_blend_at_step_edge_on_guide():
    # main guide floor 0 on the left of x = 0, raised floor h0 V_s on the right
    assert smooth_potential_at(P, 1.0, 8.0)[0] == pytest.approx(0.48406, abs=1e-5)


def test_blend_edges_equal_raw_branches():
    for x in (-602.0, -598.0, -12.0, -8.0, -2.0, 2.0):
        for y in (8.0, 20.0, -8.0, -20.0):
            assert smooth_potential_at(P, x, y)[0] == pytest.approx(raw_potential(P, x, y), abs=1e-12)


def test_slices():
    well, step = y_slice(P, "well"), y_slice(P, "step")
    assert well(8.0) == 0.0
    assert step(8.0) == pytest.approx(0.56711, abs=1e-5)
    assert step(-8.0) == pytest.approx(0.56711, abs=1e-5)
    y = Y_AXIS.points
    assert np.array_equal(step(y), step(-y))
    with pytest.raises(ValueError):
        y_slice(P, "ramp")


def test_overlapping_blend_zones_rejected():
    with pytest.raises(ValueError):
        PotentialParams(blend_halfwidth=6.0).check_blend_zones()
    with pytest.raises(ValueError):
        PotentialParams(V_s=0.0)


@pytest.fixture(scope="module")
def coarse_V():
    g = PAPER_GRID.scaled(2)
    return g, smooth_potential(P, g), raw_potential(P, *g.mesh())


def test_smoothing_touches_few_nodes(coarse_V):
    g, V, raw = coarse_V
    same = np.isclose(V.values, raw, rtol=0, atol=1e-12)
    assert same.mean() >= 0.95


def test_smooth_potential_nonnegative_and_zero_only_on_axis(coarse_V):
    g, V, _ = coarse_V
    assert V.values.min() >= 0
    X, Y = g.mesh()
    zero = V.values == 0
    assert np.all(Y[zero] == 8.0)
    assert X[zero].min() >= -600 and X[zero].max() <= -2  # the guide runs on until the step blend


def test_smooth_potential_has_no_jumps(coarse_V):
    g, V, _ = coarse_V
    v = V.values
    # analytic slope bounds: a cosine blend adds pi/(4w) times the branch gap to the
    # branch slopes; the largest gap is guide (y=-40) against barrier at x=-10
    w = P.blend_halfwidth
    gap_x = (4 / 75) * 48**2 - 12
    slope_x = P.V_s * (math.pi / (4 * w) * gap_x + 2 / 75)
    slope_y = P.V_s * (2 * (4 / 75) * 48 + math.pi / (4 * w) * (12 + (4 / 75) * 10**2))
    assert np.abs(np.diff(v, axis=0)).max() <= slope_x * g.h_x
    assert np.abs(np.diff(v, axis=1)).max() <= slope_y * g.h_y


@given(st.floats(-900, 700), st.floats(0.01, 40))
def test_step_region_symmetric_in_y(x, y):
    if x > 2.0:
        assert smooth_potential_at(P, x, y)[0] == pytest.approx(smooth_potential_at(P, x, -y)[0])


def test_transverse_levels_match_reference_values():
    lv = transverse_levels(P, Y_AXIS, M)
    assert lv.E_well_y0 == pytest.approx(0.205, abs=0.003)
    assert lv.E_step_y0 == pytest.approx(0.743, abs=0.003)
    assert lv.E_step_y1 == pytest.approx(0.796, abs=0.003)


def test_calibration_recovers_reference_parameters():
    res = calibrate(2 * math.pi * 6.34e-3, 0.538, Y_AXIS, M,
                    initial=PotentialParams(0.12, 2.5))
    assert res.iterations > 0
    assert res.params.V_s == pytest.approx(0.1581, rel=0.02)
    assert res.params.h0 == pytest.approx(3.587, rel=0.02)


def test_calibration_passes_through_when_already_satisfied():
    lv = transverse_levels(P, Y_AXIS, M)
    res = calibrate(lv.J0, lv.V0, Y_AXIS, M, initial=P)
    assert res.iterations == 0 and res.params == P


def test_doubling_splittings_doubles_J0():
    lv = transverse_levels(P, Y_AXIS, M)
    doubled = type(lv)(lv.E_well_y0, lv.E_step_y0, lv.E_step_y0 + 2 * (lv.E_step_y1 - lv.E_step_y0))
    assert doubled.J0 == pytest.approx(2 * lv.J0, rel=1e-14)


def test_zero_barrier_target():
    # either fails with a bracketing diagnostic or lands where the two ground levels coincide
    try:
        res = calibrate(2 * math.pi * 6.34e-3, 0.0, Y_AXIS, M)
    except CalibrationError as exc:
        assert "bracketing" in str(exc)
    else:
        assert res.V0 == pytest.approx(0.0, abs=1e-4)


def test_impossible_barrier_fails():
    with pytest.raises(CalibrationError, match="h0"):
        calibrate(2 * math.pi * 6.34e-3, 10.0, Y_AXIS, M, h0_bracket=(0.0, 10.0))


def test_levels_with_custom_solver():
    calls = []

    def solver(grid, V, m, k):
        calls.append(k)
        from evanescent.spectral import lowest_levels_1d
        return lowest_levels_1d(grid, V, m, k)

    transverse_levels(P, Grid1D(-40, 40, 0.2), M, solver)
    assert calls == [1, 2]


def test_smooth_potential_rejects_mismatched_grid_shape():
    g = Grid2D(-20, 20, -20, 20, 1.0, 1.0)
    assert smooth_potential(P, g).values.shape == g.shape
