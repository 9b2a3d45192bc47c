import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chb6 import spectral as sp
from chb6.spectral import GridSpec


@pytest.fixture
def grid():
    return GridSpec.square(16)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((15, 16), (1.0, 1.0))
    with pytest.raises(ValueError):
        GridSpec((2, 2), (1.0, 1.0))
    with pytest.raises(ValueError):
        GridSpec((16, 16), (1.0, -1.0))
    with pytest.raises(ValueError):
        GridSpec((4096, 4096), (1.0, 1.0))


def test_grid_geometry():
    g = GridSpec((8, 16), (2.0, 4.0))
    assert g.shape == (8, 16)
    assert g.vshape == (2, 8, 16)
    assert g.cell_volume == pytest.approx(2.0 / 8 * 4.0 / 16)
    assert g.volume == pytest.approx(8.0)
    x, y = g.coordinates()
    assert x.ravel()[1] == pytest.approx(0.25)


def test_laplacian_of_trig_mode(grid):
    x, y = grid.coordinates()
    a = np.sin(2 * x) * np.cos(3 * y)
    np.testing.assert_allclose(sp.laplacian(grid, a), -13 * a, atol=1e-12)


def test_gradient_and_divergence(grid):
    x, y = grid.coordinates()
    g = sp.gradient(grid, np.cos(x) + 0 * y)
    np.testing.assert_allclose(g[0], -np.sin(x) + 0 * y, atol=1e-13)
    np.testing.assert_allclose(g[1], 0.0, atol=1e-13)
    v = np.stack(np.broadcast_arrays(np.sin(y), np.cos(x)))
    np.testing.assert_allclose(sp.divergence(grid, v), 0.0, atol=1e-13)


def test_nyquist_mode_has_zero_derivative(grid):
    x, y = grid.coordinates()
    a = np.cos(8 * x) + 0 * y
    np.testing.assert_allclose(sp.gradient(grid, a), 0.0, atol=1e-13)
    np.testing.assert_allclose(sp.laplacian(grid, a), 0.0, atol=1e-13)


def test_polyharmonic_orders(grid):
    x, y = grid.coordinates()
    a = np.cos(x) * np.cos(y)
    # lap^3 a = -8 a for |k|^2 = 2
    np.testing.assert_allclose(sp.polyharmonic_apply(grid, a, 3), -8 * a, atol=1e-10)
    np.testing.assert_allclose(sp.polyharmonic_apply(grid, a, 2, sign=-1), -4 * a, atol=1e-12)
    with pytest.raises(ValueError):
        sp.polyharmonic_apply(grid, a, 4)


def test_dealias_rule():
    g = GridSpec.square(32)
    x, y = g.coordinates()
    keep = np.cos(10 * x) + 0 * y
    kill = np.cos(11 * x) + 0 * y
    np.testing.assert_allclose(sp.dealias(g, keep), keep, atol=1e-13)
    np.testing.assert_allclose(sp.dealias(g, kill), 0.0, atol=1e-13)


def test_leray_projection(grid):
    rng = np.random.default_rng(1)
    v = rng.standard_normal(grid.vshape)
    p = sp.leray_project(grid, v)
    np.testing.assert_allclose(sp.divergence(grid, p), 0.0, atol=1e-12)
    np.testing.assert_allclose(sp.leray_project(grid, p), p, atol=1e-12)
    x, y = grid.coordinates()
    grad = sp.gradient(grid, np.sin(x) * np.cos(2 * y))
    np.testing.assert_allclose(sp.leray_project(grid, grad), 0.0, atol=1e-13)


def test_leray_needs_two_dims():
    with pytest.raises(ValueError):
        sp.leray_project(GridSpec((8,), (1.0,)), np.zeros((1, 8)))


def test_inner_products(grid):
    x, y = grid.coordinates()
    a = np.sin(x) + 0 * y
    # int_{[0,2pi]^2} sin^2 = 2 pi^2
    assert sp.inner_product(grid, a, a) == pytest.approx(2 * np.pi**2, rel=1e-13)
    # H1 adds |grad a|^2
    assert sp.inner_product(grid, a, a, "H1") == pytest.approx(4 * np.pi**2, rel=1e-13)
    rng = np.random.default_rng(0)
    b, c = rng.standard_normal((2,) + grid.shape)
    assert sp.spectral_inner(grid, b, c) == pytest.approx(sp.inner_product(grid, b, c), rel=1e-12)


def test_gradient_is_skew_adjoint(grid):
    rng = np.random.default_rng(2)
    a = rng.standard_normal(grid.shape)
    v = rng.standard_normal(grid.vshape)
    lhs = np.sum(sp.gradient(grid, a) * v)
    rhs = -np.sum(a * sp.divergence(grid, v))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_smooth_random_field():
    g = GridSpec.square(32)
    a = smooth = sp.smooth_random_field(g, np.random.default_rng(3), amplitude=0.5, zero_mean=True)
    assert abs(a.mean()) < 1e-14
    assert np.sqrt(np.mean(a**2)) == pytest.approx(0.5, rel=1e-12)
    np.testing.assert_allclose(sp.dealias(g, a), a, atol=1e-14)
    b = sp.smooth_random_field(g, np.random.default_rng(3), amplitude=0.5, zero_mean=True)
    assert np.array_equal(smooth, b)
    assert sp.smooth_random_field(g, np.random.default_rng(3), components=2).shape == g.vshape


def test_spectral_field_wrapper(grid):
    x, y = grid.coordinates()
    f = sp.SpectralField(grid, 2.0 + np.cos(x) + 0 * y)
    assert f.mean() == pytest.approx(2.0)
    assert f.coefficients.shape == grid.spectral_shape


@settings(max_examples=25, deadline=None)
@given(n=st.sampled_from([4, 6, 8, 12]), m=st.sampled_from([4, 8, 10]), seed=st.integers(0, 2**31))
def test_property_leray_idempotent_and_orthogonal(n, m, seed):
    g = GridSpec((n, m), (1.0, 3.0))
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(g.vshape)
    p = sp.leray_project(g, v)
    np.testing.assert_allclose(sp.leray_project(g, p), p, atol=1e-12)
    assert np.sum(p * (v - p)) == pytest.approx(0.0, abs=1e-10 * np.sum(v**2))
    assert np.sum(p**2) <= np.sum(v**2) * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_property_div_grad_equals_laplacian(seed):
    g = GridSpec((8, 6, 4), (1.0, 2.0, 3.0))
    a = np.random.default_rng(seed).standard_normal(g.shape)
    np.testing.assert_allclose(sp.divergence(g, sp.gradient(g, a)), sp.laplacian(g, a), atol=1e-10)
