import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cotx.core import DataError
from cotx.transport1d import MonotoneMap, apply_monotone, empirical_quantile, push_forward_sorted, quantile_map

samples = arrays(np.float64, st.integers(1, 60), elements=st.floats(-100, 100, allow_nan=False))


def test_identity_on_equal_samples():
    xs = np.random.default_rng(0).normal(size=500)
    m = quantile_map(xs, xs)
    grid = np.linspace(xs.min(), xs.max(), 1001)
    assert np.abs(m(grid) - grid).max() <= 1e-12


def test_small_examples():
    assert quantile_map([1, 2, 3], [11, 12, 13])(2.0) == 12.0
    m = MonotoneMap(np.array([1.0, 3.0]), np.array([10.0, 14.0]))
    assert apply_monotone(m, 2.0) == 12.0
    assert apply_monotone(m, 3.0) == 14.0
    assert apply_monotone(m, 5.0) == 18.0
    assert apply_monotone(MonotoneMap(np.array([1.0, 3.0]), np.array([10.0, 14.0]), extrapolate=False), 5.0) == 14.0


def test_gaussian_closed_form():
    rng = np.random.default_rng(1)
    m = quantile_map(rng.normal(0, 1, 100_000), rng.normal(1, 2, 100_000))
    grid = np.linspace(-2, 2, 401)
    assert np.sqrt(np.mean((m(grid) - (1 + 2 * grid)) ** 2)) <= 0.05


def test_unequal_sizes_use_interpolated_quantiles():
    m = quantile_map([0.0, 1.0], [0.0, 1.0, 2.0, 3.0])
    # levels 1/4 and 3/4 of the target sit at 0.5 and 2.5
    np.testing.assert_allclose(m.knots_y, [0.5, 2.5])
    np.testing.assert_allclose(empirical_quantile(np.array([0.0, 1.0]), [0.0, 0.25, 0.5, 1.0]), [0, 0, 0.5, 1])


def test_ties_collapse_to_mean():
    m = quantile_map([1, 1, 2], [0, 2, 5])
    np.testing.assert_array_equal(m.knots_x, [1, 2])
    np.testing.assert_array_equal(m.knots_y, [1, 5])


def test_errors():
    with pytest.raises(DataError):
        quantile_map([], [1.0])
    with pytest.raises(DataError):
        quantile_map([1.0], [np.nan])
    with pytest.raises(DataError):
        MonotoneMap(np.array([1.0, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(DataError):
        MonotoneMap(np.array([0.0, 1.0]), np.array([1.0, 0.0]))


@given(samples, samples, st.integers(0, 2**31 - 1))
def test_monotone(xs, ys, seed):
    m = quantile_map(xs, ys)
    pts = np.random.default_rng(seed).uniform(-300, 300, size=(2, 10_000))
    lo, hi = np.minimum(*pts), np.maximum(*pts)
    assert np.all(m(lo) <= m(hi))
    grid = np.linspace(-300, 300, 5001)
    assert np.all(np.diff(m(grid)) >= 0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 300))
def test_push_forward_exact(seed, n):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=n), rng.normal(3, 2, size=n)
    np.testing.assert_allclose(push_forward_sorted(quantile_map(xs, ys), xs), np.sort(ys), rtol=0, atol=1e-12)


@given(st.integers(0, 2**31 - 1), st.integers(2, 300))
def test_round_trip_on_knots(seed, n):
    rng = np.random.default_rng(seed)
    xs, ys = rng.normal(size=n), rng.exponential(size=n)
    there, back = quantile_map(xs, ys), quantile_map(ys, xs)
    np.testing.assert_allclose(back(there(there.knots_x)), there.knots_x, rtol=0, atol=1e-10)
    np.testing.assert_allclose(there.inverse()(there.knots_y), there.knots_x, atol=1e-10)
