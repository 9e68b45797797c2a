import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from suskit.typespace import (TypeSpace, build_finite_space, build_graded_mesh,
                              build_powerlaw_space, build_uniform_mesh, from_csv, integrate,
                              to_csv)


def test_uniform_single_cell():
    ts = build_uniform_mesh(1)
    assert ts.points.tolist() == [0.5]
    assert ts.weights.tolist() == [1.0]


def test_uniform_midpoints():
    ts = build_uniform_mesh(4)
    assert np.allclose(ts.points, [0.125, 0.375, 0.625, 0.875], rtol=0, atol=0)
    assert np.all(ts.weights == 0.25)


def test_uniform_total_mass_exact():
    assert build_uniform_mesh(1000).total_mass == 1.0


def test_uniform_rejects_zero():
    with pytest.raises(ValueError):
        build_uniform_mesh(0)


def test_graded_gamma_one_is_uniform_bitwise():
    for m in (1, 4, 37, 1000):
        g, u = build_graded_mesh(m, 1), build_uniform_mesh(m)
        assert np.array_equal(g.points, u.points)
        assert np.array_equal(g.weights, u.weights)
        assert g.total_mass == u.total_mass


def test_graded_two_cells():
    ts = build_graded_mesh(2, 2.0)
    assert np.allclose(ts.bounds, [0, 0.25, 1])
    assert np.allclose(ts.points, [0.125, 0.625])
    assert np.allclose(ts.weights, [0.25, 0.75])


def test_graded_large_mesh():
    ts = build_graded_mesh(4000, 2.0)
    assert ts.points.min() > 0
    assert abs(ts.total_mass - 1.0) <= 1e-12
    assert np.all(np.diff(ts.points) > 0)


def test_powerlaw_mass_deficit():
    ts = build_powerlaw_space(2.5, 1e4, 4000)
    assert abs(ts.total_mass - (1 - 1e-10)) < 1e-13
    assert "1.000e-10" in ts.description


def test_powerlaw_first_cell_exact():
    # two cells on [1, 4] give boundaries 1, 2, 4
    ts = build_powerlaw_space(3.0, 4.0, 2)
    assert ts.weights[0] == pytest.approx(1 - 2 ** -3, rel=1e-15)


def test_powerlaw_mean():
    ts = build_powerlaw_space(2.5, 1e4, 4000)
    assert integrate(ts, lambda x: x) == pytest.approx(5 / 3, abs=1e-2)


def test_powerlaw_rejects_bad_xmax():
    with pytest.raises(ValueError):
        build_powerlaw_space(2.5, 1.0, 10)


def test_finite_spaces():
    e2 = build_finite_space([0.5, 0.5])
    assert e2.points.tolist() == [1.0, 2.0]
    assert build_finite_space([1.0]).description == "atom"
    assert build_finite_space([0.2, 0.3, 0.5]).total_mass == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        build_finite_space([])
    with pytest.raises(ValueError):
        build_finite_space([0.5, 0.0])


def test_integrate_constant_and_linear():
    ts = build_uniform_mesh(1000)
    assert integrate(ts, lambda x: np.ones_like(x)) == pytest.approx(1.0, abs=1e-15)
    assert integrate(ts, lambda x: 1.0) == pytest.approx(1.0, abs=1e-15)
    assert integrate(ts, lambda x: x) == pytest.approx(0.5, abs=1e-6)


def test_integrate_nonfinite_raises():
    with pytest.raises(FloatingPointError), np.errstate(divide="ignore"):
        integrate(build_uniform_mesh(4), lambda x: 1 / (x - 0.375))


def test_midpoint_error_quarters_on_refinement():
    errs = [abs(integrate(build_uniform_mesh(m), lambda x: x ** 2) - 1 / 3) for m in (10, 20, 40)]
    assert errs[1] < errs[0] and errs[2] < errs[1]
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2 ** 32 - 1))
def test_permutation_leaves_integral_unchanged(m, seed):
    ts = build_graded_mesh(m, 2.0)
    perm = np.random.default_rng(seed).permutation(m)
    f = lambda x: np.sin(3 * x) + x ** 2  # noqa: E731
    assert integrate(ts.permuted(perm), f) == pytest.approx(integrate(ts, f), rel=1e-12, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-3, 10), min_size=1, max_size=20))
def test_finite_space_total_is_sum(masses):
    ts = build_finite_space(masses)
    assert ts.total_mass == pytest.approx(math.fsum(masses), rel=1e-12)


def test_csv_roundtrip():
    ts = build_graded_mesh(7, 2.0)
    back = from_csv(to_csv(ts))
    assert np.array_equal(back.points, ts.points)
    assert np.array_equal(back.weights, ts.weights)
    assert back.total_mass == ts.total_mass
    assert back.description == ts.description


def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        TypeSpace(np.array([0.5]), np.array([-1.0]), -1.0)
    with pytest.raises(ValueError):
        TypeSpace(np.array([0.5]), np.array([1.0]), 2.0)


def test_sampling_within_support():
    rng = np.random.default_rng(0)
    x = build_uniform_mesh(10).sample(rng, 10_000)
    assert x.min() > 0 and x.max() <= 1
    assert abs(x.mean() - 0.5) < 0.02
    y = build_powerlaw_space(2.5, 1e4, 200).sample(rng, 10_000)
    assert y.min() >= 1 and y.max() <= 1e4
