import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gridseries.disagg import (
    ComponentSeries,
    baseline_components,
    baseline_uniform,
    disaggregate,
    interpolate,
    interpolate_regional,
    linear_upsample,
    read_component_csv,
    write_component_csv,
)
from gridseries.errors import ValidationError
from gridseries.grid_model import RegionalSeries, shares_from_weights

START = dt.datetime(2018, 1, 1, tzinfo=dt.timezone.utc)


def _one_region(weights, totals):
    p = shares_from_weights(["r"], [(f"c{k}", "r", w) for k, w in enumerate(weights)])
    L = RegionalSeries("load", ("r",), np.atleast_2d(np.asarray(totals, dtype=float)), 30, START)
    return p, L


def test_hand_example():
    p, L = _one_region([1, 1], [100.0])
    out = disaggregate(L, p, np.array([[1.2], [0.8]]))
    np.testing.assert_allclose(out.values[:, 0], [60.0, 40.0], rtol=1e-15)


def test_single_component_identity(rng):
    p, L = _one_region([5.0], rng.uniform(10, 20, 8))
    out = disaggregate(L, p, rng.uniform(0.5, 1.5, (1, 8)))
    np.testing.assert_allclose(out.values, L.values, rtol=1e-15)


def test_no_volatility_is_share_scaling(rng):
    p, L = _one_region([30.0, 70.0], rng.uniform(10, 20, 5))
    out = disaggregate(L, p, np.ones((2, 5)))
    np.testing.assert_allclose(out.values, np.outer([0.3, 0.7], L.values[0]), rtol=1e-15)


def test_denominator_guard():
    p, L = _one_region([1.0, 1.0], [10.0])
    with pytest.raises(ValidationError, match="guard"):
        disaggregate(L, p, np.zeros((2, 1)))


def test_shape_mismatch():
    p, L = _one_region([1.0, 1.0], [10.0, 11.0])
    with pytest.raises(ValidationError):
        disaggregate(L, p, np.ones((2, 3)))


def test_region_without_components_must_be_zero():
    p = shares_from_weights(["a", "b"], [("x", "a", 1.0)], require_all=False)
    L = RegionalSeries("wind", ("a", "b"), np.array([[5.0], [0.0]]), 30, START)
    assert disaggregate(L, p, np.ones((1, 1))).values[0, 0] == 5.0
    L = RegionalSeries("wind", ("a", "b"), np.array([[5.0], [1.0]]), 30, START)
    with pytest.raises(ValidationError, match="no components"):
        disaggregate(L, p, np.ones((1, 1)))


@st.composite
def disagg_case(draw):
    sizes = draw(st.lists(st.integers(1, 5), min_size=1, max_size=4))
    T = draw(st.integers(1, 6))
    items, k = [], 0
    for r, size in enumerate(sizes):
        for _ in range(size):
            items.append((f"c{k}", f"r{r}", draw(st.floats(0.01, 1e4))))
            k += 1
    regions = [f"r{r}" for r in range(len(sizes))]
    p = shares_from_weights(regions, items)
    totals = draw(arrays(float, (len(regions), T), elements=st.one_of(st.just(0.0), st.floats(1e-3, 1e5))))
    Y = draw(arrays(float, (k, T), elements=st.floats(1e-6, 10.0)))
    return p, RegionalSeries("load", tuple(regions), totals, 30, START), Y


@settings(max_examples=80, deadline=None)
@given(disagg_case(), st.floats(0.01, 100.0))
def test_conservation_nonnegativity_equivariance(case, c):
    p, L, Y = case
    out = disaggregate(L, p, Y)
    sums = out.regional_sums(L.regions)
    assert np.all(np.abs(sums - L.values) <= 1e-9 * L.values)
    assert np.all(out.values >= 0)
    scaled = disaggregate(RegionalSeries("load", L.regions, c * L.values, 30, START), p, Y)
    np.testing.assert_allclose(scaled.values, c * out.values, rtol=1e-12, atol=0)


def test_interpolation_knots_midpoint_and_count():
    s = ComponentSeries("load", ("a",), ("r",), np.array([[100.0, 130.0, 70.0]]), 30, START)
    fine = interpolate(s, 5)
    assert fine.n_periods == 6 * (3 - 1) + 1
    np.testing.assert_array_equal(fine.values[0, ::6], s.values[0])
    assert fine.values[0, 3] == 115.0
    assert fine.period_minutes == 5
    assert interpolate(s, 30) is s


def test_linear_upsample_against_numpy_interp(rng):
    v = rng.normal(size=(3, 7))
    up = linear_upsample(v, 6)
    x = np.arange(7)
    xf = np.arange(37) / 6
    for row, urow in zip(v, up):
        np.testing.assert_allclose(urow, np.interp(xf, x, row), rtol=1e-14, atol=1e-14)


def test_granularity_must_divide():
    s = ComponentSeries("load", ("a",), ("r",), np.ones((1, 3)), 30, START)
    with pytest.raises(ValidationError, match="does not divide"):
        interpolate(s, 7)


def test_interpolated_sums_match_interpolated_totals(rng):
    p, L = _one_region([1.0, 2.0, 3.0], rng.uniform(50, 150, 9))
    out = disaggregate(L, p, rng.uniform(0.8, 1.2, (3, 9)))
    fine = interpolate(out, 5)
    target = interpolate_regional(L, 5)
    # each fine point is a convex combination of exactly conserved knots
    np.testing.assert_allclose(fine.regional_sums(L.regions), target.values, rtol=1e-12)


def test_baseline_zero_noise_exact():
    out = baseline_uniform(np.array([100.0, 200.0]), np.array([0.25, 0.75]), 0.0, seed=1)
    np.testing.assert_array_equal(out, [[25.0, 50.0], [75.0, 150.0]])


@pytest.mark.parametrize("noise", [0.05, 0.10])
def test_baseline_noise_moments(noise):
    out = baseline_uniform(np.ones(200_000), np.array([1.0]), noise, seed=3)
    assert out.mean() == pytest.approx(1.0, abs=3 * noise / np.sqrt(200_000) * 2)
    assert out.std() == pytest.approx(noise, rel=0.02)


def test_baseline_is_not_renormalized():
    out = baseline_uniform(np.full(50, 100.0), np.array([0.5, 0.5]), 0.1, seed=0)
    assert not np.allclose(out.sum(axis=0), 100.0)
    p, L = _one_region([1.0, 1.0], np.full(4, 10.0))
    assert baseline_components(L, p, 0.1, 0).lineage == "baseline"


def test_component_csv_roundtrip(tmp_path, rng):
    s = ComponentSeries("load", ("a", "b"), ("r", "r"), rng.uniform(0, 10, (2, 5)), 5, START, "restored")
    w = ComponentSeries("wind", ("w",), ("r",), rng.uniform(0, 10, (1, 5)), 5, START)
    path = tmp_path / "c.csv"
    write_component_csv([s, w], path)
    back = read_component_csv(path, {"a": "r", "b": "r", "w": "r"})
    np.testing.assert_array_equal(back["load"].values, s.values)
    assert back["load"].lineage == "restored" and back["wind"].lineage == "disaggregated"
    assert back["load"].start == START and back["load"].period_minutes == 5
