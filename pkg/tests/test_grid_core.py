import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghostflow.grid_core import (
    Grid,
    ScalarField,
    VectorField,
    WallData,
    derivative_seminorm,
    div,
    flux_div,
    grad,
    integrate,
    k_norm,
    laplacian,
    neumann_laplacian,
    pressure_dissipation,
    sobolev_norm,
    tangential_wall_derivative,
)

from conftest import random_scalar, random_vector

SIZES = (16, 32, 64)


def observed_order(errors, sizes=SIZES):
    h = [1.0 / (n - 1) for n in sizes]
    return float(np.polyfit(np.log(h), np.log(errors), 1)[0])


# --- geometry ----------------------------------------------------------------


def test_grid_spacing_and_mask():
    g = Grid(16, 9, lx=2.0, ly=0.5)
    assert g.hx == pytest.approx(2.0 / 16)
    assert g.hy == pytest.approx(0.5 / 8)
    mask = g.wall_mask()
    assert mask[:, 0].all() and mask[:, -1].all() and not mask[:, 1:-1].any()


@pytest.mark.parametrize("nx, ny", [(7, 16), (16, 7), (16.5, 16)])
def test_grid_rejects_bad_sizes(nx, ny):
    with pytest.raises(ValueError):
        Grid(nx, ny)


def test_fields_reject_non_finite_values():
    g = Grid(8, 8)
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))


def test_fields_on_different_grids_do_not_mix():
    with pytest.raises(ValueError):
        ScalarField.zeros(Grid(8, 8)) + ScalarField.zeros(Grid(16, 8))


# --- differential operators ------------------------------------------------------


def test_gradient_of_constant_vanishes():
    g = Grid(16, 16)
    assert grad(ScalarField.constant(g, 3.7)).max_abs() < 1e-12


def test_gradient_of_sine_converges_at_second_order():
    errors = []
    for n in SIZES:
        g = Grid(n, n)
        X, _ = g.mesh()
        d = grad(ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x)))
        errors.append(np.abs(d.x.values - 2 * np.pi * np.cos(2 * np.pi * X)).max())
        assert d.y.max_abs() < 1e-12
    assert observed_order(errors) >= 1.8


def test_gradient_of_quadratic_is_exact_including_walls():
    # second-order one-sided wall stencils differentiate quadratics exactly
    g = Grid(16, 16)
    _, Y = g.mesh()
    d = grad(ScalarField.from_function(g, lambda x, y: y ** 2))
    np.testing.assert_allclose(d.y.values, 2 * Y, atol=1e-12)


def test_divergence_and_laplacian_converge_at_second_order():
    div_err, lap_err, compose_err = [], [], []
    for n in SIZES:
        g = Grid(n, n)
        X, Y = g.mesh()
        v = VectorField.from_function(g, lambda x, y: np.cos(2 * np.pi * x), lambda x, y: 0 * x)
        div_err.append(np.abs(div(v).values + 2 * np.pi * np.sin(2 * np.pi * X)).max())
        f = ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x) * np.sin(np.pi * y))
        exact = -5 * np.pi ** 2 * f.values
        lap_err.append(np.abs(laplacian(f).values - exact).max())
        compose_err.append(np.abs(div(grad(f)).values - laplacian(f).values)[:, 1:-1].max())
    assert observed_order(div_err) >= 1.8
    assert observed_order(lap_err) >= 1.8
    assert observed_order(compose_err) >= 1.8


def test_divergence_of_zero_is_zero():
    assert div(VectorField.zeros(Grid(8, 8))).max_abs() == 0.0


def test_flux_divergence_satisfies_gauss_identity_exactly():
    g = Grid(16, 12)
    v = VectorField(g, random_scalar(g, 1, False), random_scalar(g, 2, False))
    flux = g.hx * (v.y.values[:, -1].sum() - v.y.values[:, 0].sum())
    assert integrate(flux_div(v)) == pytest.approx(flux, abs=1e-12)


def test_neumann_laplacian_and_pressure_dissipation_are_conservative():
    g = Grid(16, 12)
    f = random_scalar(g, 3, False)
    assert abs(integrate(neumann_laplacian(f))) < 1e-12
    assert abs(integrate(pressure_dissipation(f))) < 1e-12


def test_pressure_dissipation_separates_smooth_and_checkerboard_modes():
    # O(h^2) on smooth fields, O(1/h^2) on the odd-even mode
    smooth_sizes, checker_sizes = [], []
    for n in SIZES:
        g = Grid(n, n)
        smooth = ScalarField.from_function(g, lambda x, y: np.cos(2 * np.pi * x) * np.cos(np.pi * y))
        i, j = np.indices(g.shape)
        smooth_sizes.append(pressure_dissipation(smooth).max_abs())
        checker_sizes.append(pressure_dissipation(ScalarField(g, (-1.0) ** (i + j))).max_abs())
    assert observed_order(smooth_sizes) >= 1.8
    assert observed_order(checker_sizes) <= -1.8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_discrete_integration_by_parts(seed):
    # |int f div v + int grad f . v - wall flux| = O(h^2) for smooth fields
    defects = []
    for n in SIZES:
        g = Grid(n, n)
        f = random_scalar(g, seed, False)
        v = VectorField(g, random_scalar(g, seed + 1, False), random_scalar(g, seed + 2, False))
        flux = g.hx * ((f * v.y).values[:, -1].sum() - (f * v.y).values[:, 0].sum())
        defects.append(abs(integrate(f * div(v) + grad(f).dot(v)) - flux))
    h = 1.0 / (SIZES[-1] - 1)
    assert defects[-1] <= 100 * h ** 2


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_operators_are_linear(a, b, seed):
    g = Grid(12, 10)
    f, h = random_scalar(g, seed, False), random_scalar(g, seed + 7, False)
    combined = laplacian(a * f + b * h)
    np.testing.assert_allclose(combined.values, (a * laplacian(f) + b * laplacian(h)).values, atol=1e-9)


# --- quadrature and norms ---------------------------------------------------------


def test_integrate_constants_exactly():
    assert integrate(ScalarField.constant(Grid(16, 16), 1.0)) == 1.0
    assert integrate(ScalarField.constant(Grid(12, 9, lx=2.0, ly=3.0), 1.0)) == pytest.approx(6.0, abs=1e-14)


def test_integrate_periodic_mode_vanishes_and_linear_profile_is_exact():
    g = Grid(16, 16)
    assert abs(integrate(ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x)))) < 1e-15
    # the trapezoid rule is exact on linear functions of y
    assert integrate(ScalarField.from_function(g, lambda x, y: y + 0 * x)) == pytest.approx(0.5, abs=1e-14)


def test_norms_of_zero_vanish_and_k_norm_degenerates():
    g = Grid(16, 16)
    zero = ScalarField.zeros(g)
    assert all(sobolev_norm(zero, k) == 0.0 for k in range(4))
    f = random_scalar(g, 4)
    assert k_norm(f, 0.0) == sobolev_norm(f, 2)
    assert k_norm(f, 0.5) == pytest.approx(sobolev_norm(f, 2) + 0.5 * derivative_seminorm(f, 3))


def test_h1_norm_of_sine():
    errors = []
    for n in SIZES:
        g = Grid(n, n)
        f = ScalarField.from_function(g, lambda x, y: np.sin(2 * np.pi * x) + 0 * y)
        errors.append(abs(sobolev_norm(f, 1) ** 2 - 0.5 * (1 + 4 * np.pi ** 2)))
    assert observed_order(errors) >= 1.8


def test_sobolev_norm_rejects_order_above_three():
    with pytest.raises(ValueError):
        sobolev_norm(ScalarField.zeros(Grid(8, 8)), 4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000))
def test_sobolev_norms_are_monotone_in_order(seed):
    v = random_vector(Grid(12, 12), seed)
    norms = [sobolev_norm(v, k) for k in range(4)]
    assert all(a <= b + 1e-12 for a, b in zip(norms, norms[1:]))


# --- wall data ---------------------------------------------------------------------


def test_wall_derivative_of_uniform_wall_is_zero():
    walls = WallData.cosine(Grid(16, 16), 0.0)
    assert np.all(tangential_wall_derivative(walls, "bottom") == 0.0)


def test_wall_derivative_of_cosine_profile():
    errors = []
    for n in SIZES:
        g = Grid(n, n)
        walls = WallData.cosine(g, 0.05)
        d = tangential_wall_derivative(walls, "top")
        errors.append(np.abs(d + 2 * np.pi * 0.05 * np.sin(2 * np.pi * g.x)).max())
        assert abs(d.sum()) < 1e-12
    assert observed_order(errors) >= 1.8


def test_wall_data_validation_and_delta():
    g = Grid(8, 8)
    with pytest.raises(ValueError):
        WallData(np.zeros(8), np.ones(8), g)
    with pytest.raises(ValueError):
        WallData(np.ones(7), np.ones(8), g)
    with pytest.raises(ValueError):
        WallData(np.ones(8), np.ones(8), g, h_tag="cubic")
    assert WallData.cosine(g, 0.1).delta == pytest.approx(0.1)


def test_power_slip_coefficient():
    g = Grid(8, 8)
    walls = WallData(np.full(8, 2.0), np.ones(8), g, h_tag="power", h_params=(0.5, 2))
    np.testing.assert_allclose(walls.h(walls.t_w_bottom), 2.0)
