import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foodrisk.errors import ValidationError
from foodrisk.trajectories import TrajectorySet, standard_normals, trajectory_rng


def test_stream_depends_only_on_key():
    a = trajectory_rng(11, 5, 1).standard_normal(4)
    b = trajectory_rng(11, 5, 1).standard_normal(4)
    c = trajectory_rng(11, 5, 2).standard_normal(4)
    d = trajectory_rng(11, 6, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_normals_independent_of_batch_composition():
    full = standard_normals(3, np.arange(10), 1, 6)
    part = standard_normals(3, [7, 2], 1, 6)
    assert np.array_equal(part[0], full[7])
    assert np.array_equal(part[1], full[2])


def test_shape_validation():
    with pytest.raises(ValidationError):
        TrajectorySet("x", [0, 1], [2020], np.zeros((3, 1)))
    with pytest.raises(ValidationError):
        TrajectorySet("x", [0, 0], [2020], np.zeros((2, 1)))


def test_select_keeps_sorted_ids():
    ts = TrajectorySet("x", [0, 1, 2, 3], [2020, 2025], np.arange(8.0).reshape(4, 2))
    sub = ts.select([3, 1])
    assert sub.ids.tolist() == [1, 3]
    assert np.array_equal(sub.values, [[2, 3], [6, 7]])
    with pytest.raises(ValidationError):
        ts.select([9])


def test_at_year_unknown():
    ts = TrajectorySet("x", [0], [2020], np.zeros((1, 1)))
    with pytest.raises(KeyError):
        ts.at_year(2021)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_interpolation_linear_and_exact_at_knots(vals):
    ts = TrajectorySet("x", [0], [2020, 2025, 2030], np.array([vals]))
    annual = ts.interpolate_years(np.arange(2020, 2031))
    assert np.array_equal(annual.values[0, [0, 5, 10]], vals)
    oracle = np.interp(np.arange(2020, 2031), [2020, 2025, 2030], vals)
    assert np.allclose(annual.values[0], oracle, rtol=1e-12, atol=1e-9)


def test_interpolation_out_of_range():
    ts = TrajectorySet("x", [0], [2020, 2025], np.zeros((1, 2)))
    with pytest.raises(ValidationError):
        ts.interpolate_years([2019, 2020])
