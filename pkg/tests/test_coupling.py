"""Line displacement and coupled-voltage arithmetic."""

import math

import numpy as np
import pytest

from gmdcascade.coupling import (
    CoupledVoltageSeries,
    LineGeometry,
    coupled_voltage,
    couple_case,
    field_at_midpoint,
    line_displacement,
    read_branch_voltages,
    write_branch_voltages,
)
from gmdcascade.geofield import FieldGrid, uniform_field_grid

from conftest import two_bus_case


def test_one_degree_east_at_equator():
    geom = LineGeometry(1, 0.0, 10.0, 0.0, 11.0)
    d_e, d_n = line_displacement(geom)
    assert d_e == pytest.approx(111.2, abs=1e-12)
    assert d_n == pytest.approx(0.0, abs=1e-12)


def test_one_degree_north():
    geom = LineGeometry(1, 40.0, -77.0, 41.0, -77.0)
    d_e, d_n = line_displacement(geom)
    # the cosine applies to the longitudinal term only
    assert d_e == pytest.approx(0.0, abs=1e-12)
    assert d_n == pytest.approx(111.2, abs=1e-12)


def test_zero_length_line():
    geom = LineGeometry(1, 40.0, -77.0, 40.0, -77.0)
    assert line_displacement(geom) == (0.0, 0.0)


def test_coupled_voltage_zero_field():
    assert coupled_voltage((85.0, 40.0), (0.0, 0.0)) == 0.0


def test_coupled_voltage_east_line_at_40deg():
    # 1 degree east at 40N mid-latitude under 1 V/km eastward field
    geom = LineGeometry(1, 40.0, -78.0, 40.0, -77.0)
    d = line_displacement(geom)
    expected = 111.2 * math.cos(math.radians(40.0))
    assert d[0] == pytest.approx(expected, rel=1e-12)
    assert coupled_voltage(d, (1.0, 0.0)) == pytest.approx(expected, rel=1e-12)


def test_orthogonal_field_couples_nothing():
    geom = LineGeometry(1, 0.0, 10.0, 0.0, 11.0)  # purely east displacement
    d = line_displacement(geom)
    assert coupled_voltage(d, (0.0, 2.5)) == pytest.approx(0.0, abs=1e-12)


def test_reversing_direction_negates_voltage():
    fwd = LineGeometry(1, 39.0, -78.0, 40.5, -76.0)
    rev = LineGeometry(1, 40.5, -76.0, 39.0, -78.0)
    field = (0.7, -1.3)
    v1 = coupled_voltage(line_displacement(fwd), field)
    v2 = coupled_voltage(line_displacement(rev), field)
    assert v1 == pytest.approx(-v2, rel=1e-12)


def test_collinear_split_adds_up():
    # two equal-latitude segments recombine to the whole-line coupling
    whole = LineGeometry(1, 40.0, -78.0, 40.0, -76.0)
    seg1 = LineGeometry(2, 40.0, -78.0, 40.0, -77.0)
    seg2 = LineGeometry(3, 40.0, -77.0, 40.0, -76.0)
    field = (1.2, 0.4)
    v_whole = coupled_voltage(line_displacement(whole), field)
    v_split = coupled_voltage(line_displacement(seg1), field) + coupled_voltage(
        line_displacement(seg2), field
    )
    assert v_split == pytest.approx(v_whole, rel=1e-6)


def test_linear_in_field_magnitude():
    geom = LineGeometry(1, 37.0, -79.0, 38.5, -77.0)
    d = line_displacement(geom)
    v1 = coupled_voltage(d, (0.3, 0.8))
    v3 = coupled_voltage(d, (0.9, 2.4))
    assert v3 == pytest.approx(3.0 * v1, rel=1e-12)


def test_field_at_midpoint_nearest_and_ties():
    grid = FieldGrid(
        lats=np.array([0.0, 0.0]),
        lons=np.array([-1.0, 1.0]),
        t0=0.0,
        dt=60.0,
        e_n=np.array([[1.0], [2.0]]),
        e_e=np.array([[3.0], [4.0]]),
    )
    # midpoint at lon -0.5 is nearer the first point
    geom = LineGeometry(1, 0.0, -1.0, 0.0, 0.0)
    assert field_at_midpoint(grid, geom, 0) == (3.0, 1.0)
    # exactly equidistant: lowest index wins
    geom = LineGeometry(2, 0.0, -0.5, 0.0, 0.5)
    assert field_at_midpoint(grid, geom, 0) == (3.0, 1.0)
    # brute-force nearest over a small scattered grid
    rng = np.random.default_rng(3)
    lats = rng.uniform(30, 45, 12)
    lons = rng.uniform(-85, -70, 12)
    grid = FieldGrid(lats, lons, 0.0, 60.0, rng.normal(size=(12, 4)), rng.normal(size=(12, 4)))
    geom = LineGeometry(3, 36.0, -80.0, 38.0, -74.0)
    mid = geom.midpoint()
    from gmdcascade.geofield import great_circle_km

    dists = [great_circle_km(lats[i], lons[i], *mid) for i in range(12)]
    want = int(np.argmin(dists))
    got = grid.nearest_index(*mid)
    assert got == want


def test_couple_case_uniform_field():
    case = two_bus_case()
    grid = uniform_field_grid([38.0], [-77.5], 0.0, 300.0, [1.0, 2.0], [0.0, 0.0])
    series = couple_case(case, grid)
    # the two-bus line spans 1 degree east at 38N
    expect = 111.2 * math.cos(math.radians(38.0))
    assert series[1].volts == pytest.approx([expect, 2 * expect], rel=1e-9)


def test_branch_voltage_roundtrip(tmp_path):
    series = {
        1: CoupledVoltageSeries(1, np.array([0.5, -1.25, 3.0])),
        7: CoupledVoltageSeries(7, np.array([0.0, 0.0, 0.0])),
    }
    path = tmp_path / "volts.txt"
    write_branch_voltages(path, series)
    back = read_branch_voltages(path)
    assert set(back) == {1, 7}
    np.testing.assert_array_equal(back[1].volts, series[1].volts)
    np.testing.assert_array_equal(back[7].volts, series[7].volts)
