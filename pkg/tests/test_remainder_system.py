from types import SimpleNamespace

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ghostflow.errors import BallEscape
from ghostflow.first_order_system import FirstOrderSolution, solve_first_order
from ghostflow.grid_core import (
    Grid,
    ScalarField,
    VectorField,
    WallData,
    advect,
    dissipation,
    div,
    integrate,
    l2_norm,
    sobolev_norm,
)
from ghostflow.limiting_system import LimitingSolution, Params, solve_limiting
from ghostflow.remainder_system import (
    RemainderRun,
    RemainderState,
    assemble_R_terms,
    assemble_sources,
    eval_F_eps,
    eval_F_tilde,
    eval_G_eps,
    eval_G_tilde,
    residual_linearized,
    residual_nonlinear,
    skew_symmetry_defect,
    solve_linearized_remainder,
    solve_remainder_nonlinear,
)

from conftest import limiting_case, random_scalar, random_vector, remainder_case


def bare_tiers(grid: Grid, u1: VectorField | None = None, theta0: ScalarField | None = None):
    """Limiting/first-order containers with unit density and everything else zero."""
    zero, zero_v = ScalarField.zeros(grid), VectorField.zeros(grid)
    one = ScalarField.constant(grid, 1.0)
    u1 = zero_v if u1 is None else u1
    theta0 = one if theta0 is None else theta0
    lim = LimitingSolution(one / theta0, theta0, zero, u1, u1 / theta0, 1.0)
    fo = FirstOrderSolution(zero, zero, zero, zero_v, zero_v, 0.0, zero, zero, 0.0, 0.0)
    return lim, fo


# --- sources -----------------------------------------------------------------------------


def test_sources_vanish_without_first_order_fields():
    g = Grid(16, 16)
    lim, fo = bare_tiers(g, u1=random_vector(g, 1))
    for field in assemble_sources(lim, fo, Params()):
        assert field.max_abs() == 0.0


def test_continuity_source_truncates_at_zero_epsilon(case32):
    _, _, lim, fo, _, _ = case32
    r1, _, _ = assemble_sources(lim, fo, SimpleNamespace(epsilon=0.0))
    expected = -div(fo.rho1 * fo.u2 + fo.rho2 * lim.u1)
    assert (r1 - expected).max_abs() <= 1e-12


def test_right_hand_sides_keep_only_dissipation():
    g = Grid(16, 16)
    lim, fo = bare_tiers(g, u1=random_vector(g, 2))
    params = Params(mu=1.3, lam=0.4)
    terms = assemble_R_terms(assemble_sources(lim, fo, params), lim, fo, VectorField.zeros(g), params)
    assert terms.R1.max_abs() == 0.0 and terms.R2.max_abs() == 0.0
    assert (terms.R3 + dissipation(lim.u1, params.mu, params.lam) / lim.theta0).max_abs() <= 1e-12


def test_shear_flow_dissipation():
    # u = (y, 0): D(u):D(u) = 1/2, div u = 0, so Psi = mu and R3 = -mu/theta0
    g = Grid(16, 16)
    theta0 = ScalarField.from_function(g, lambda x, y: 1.0 + 0.1 * y + 0 * x)
    shear = VectorField.from_function(g, lambda x, y: y + 0 * x, lambda x, y: 0 * x)
    lim, fo = bare_tiers(g, u1=shear, theta0=theta0)
    lim.rho0 = ScalarField.constant(g, 1.0)
    params = Params(mu=0.8)
    terms = assemble_R_terms((ScalarField.zeros(g), VectorField.zeros(g), ScalarField.zeros(g)), lim, fo,
                             VectorField.zeros(g), params)
    np.testing.assert_allclose(terms.R3.values, (-0.8 / theta0).values, atol=1e-12)


# --- nonlinear and linearized terms ----------------------------------------------------------


def test_nonlinear_terms_vanish_for_zero_remainder_or_zero_epsilon(case32):
    _, _, lim, fo, rem, _ = case32
    g = lim.theta0.grid
    zero, zero_v = ScalarField.zeros(g), VectorField.zeros(g)
    assert eval_F_eps(zero, zero_v, zero, lim, fo, 0.1).max_abs() == 0.0
    assert eval_G_eps(zero, zero_v, zero, lim, fo, 0.1).max_abs() == 0.0
    assert eval_F_eps(rem.rhoR, rem.uR, rem.thetaR, lim, fo, 0.0).max_abs() == 0.0
    assert eval_G_eps(rem.rhoR, rem.uR, rem.thetaR, lim, fo, 0.0).max_abs() == 0.0
    assert eval_F_tilde(zero, zero_v, zero, rem.uR, rem.thetaR, lim, fo, 0.1).max_abs() == 0.0
    assert eval_G_tilde(zero, zero_v, zero, rem.uR, rem.thetaR, lim, fo, 0.1).max_abs() == 0.0
    assert eval_F_tilde(rem.rhoR, rem.uR, rem.thetaR, rem.uR, rem.thetaR, lim, fo, 0.0).max_abs() == 0.0


def test_single_term_probe_matches_symbolic_convection():
    # rho_R = 1, every other remainder and first-order field zero: F = eps (u1.grad)u1
    X, Y = sp.symbols("x y")
    ux, uy = sp.sin(sp.pi * Y) * sp.cos(2 * sp.pi * X), sp.sin(sp.pi * Y) ** 2 * sp.sin(2 * sp.pi * X)
    conv = [sp.lambdify((X, Y), ux * sp.diff(c, X) + uy * sp.diff(c, Y), "numpy") for c in (ux, uy)]
    eps, errors = 0.3, []
    for n in (16, 32, 64):
        g = Grid(n, n)
        u1 = VectorField.from_function(g, sp.lambdify((X, Y), ux, "numpy"), sp.lambdify((X, Y), uy, "numpy"))
        lim, fo = bare_tiers(g, u1=u1)
        F = eval_F_eps(ScalarField.constant(g, 1.0), VectorField.zeros(g), ScalarField.zeros(g), lim, fo, eps)
        Xg, Yg = g.mesh()
        errors.append(max(np.abs(F.x.values - eps * conv[0](Xg, Yg)).max(),
                          np.abs(F.y.values - eps * conv[1](Xg, Yg)).max()))
    order = np.polyfit(np.log([1 / 15, 1 / 31, 1 / 63]), np.log(errors), 1)[0]
    assert order >= 1.8


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000))
def test_linearized_terms_reduce_to_nonlinear_terms(seed):
    # freezing u_R~ = u_R, theta_R~ = theta_R reproduces the nonlinear terms;
    # otherwise the gap is (to leading order) linear in the freezing error
    walls, lim = limiting_case(16)
    g = walls.grid
    fo = solve_first_order(lim, 0.02 * random_vector(g, seed + 9), Params())
    rho, u, th = random_scalar(g, seed, False), random_vector(g, seed + 1), random_scalar(g, seed + 2)
    F, G = eval_F_eps(rho, u, th, lim, fo, 0.1), eval_G_eps(rho, u, th, lim, fo, 0.1)
    assert l2_norm(F - eval_F_tilde(rho, u, th, u, th, lim, fo, 0.1)) <= 1e-12 * l2_norm(F)
    assert l2_norm(G - eval_G_tilde(rho, u, th, u, th, lim, fo, 0.1)) <= 1e-12 * l2_norm(G)
    shift_u, shift_th = random_vector(g, seed + 3), random_scalar(g, seed + 4)
    gaps = []
    for d in (1e-3, 2e-3):
        Ft = eval_F_tilde(rho, u, th, u + d * shift_u, th + d * shift_th, lim, fo, 0.1)
        Gt = eval_G_tilde(rho, u, th, u + d * shift_u, th + d * shift_th, lim, fo, 0.1)
        gaps.append(l2_norm(F - Ft) + l2_norm(G - Gt))
    assert gaps[1] / gaps[0] == pytest.approx(2.0, rel=0.02)


def test_split_forms_add_up(case32):
    _, _, lim, fo, rem, _ = case32
    args = (rem.rhoR, rem.uR, rem.thetaR, 0.5 * rem.uR, 0.5 * rem.thetaR, lim, fo, 0.1)
    f1, f2 = eval_F_tilde(*args, split=True)
    g1, g2 = eval_G_tilde(*args, split=True)
    assert (f1 + f2 - eval_F_tilde(*args)).max_abs() == 0.0
    assert (g1 + g2 - eval_G_tilde(*args)).max_abs() == 0.0


# --- solvers ---------------------------------------------------------------------------------------


def test_uniform_wall_gives_zero_remainder():
    g = Grid(16, 16)
    params = Params()
    lim = solve_limiting(WallData.cosine(g, 0.0), params)
    run = RemainderRun()
    fo, rem = solve_remainder_nonlinear(lim, params, record=run)
    assert run.iterations == 1
    assert max(f.max_abs() for f in (rem.rhoR, rem.thetaR, rem.uR)) <= 1e-12
    state = solve_linearized_remainder(lim, fo, VectorField.zeros(g), ScalarField.zeros(g), params)
    assert state.total_norm <= 1e-12
    assert all(v <= 1e-12 for v in residual_linearized(RemainderState.zeros(g, 0.1), lim, fo, VectorField.zeros(g),
                                                       ScalarField.zeros(g), params).values())


def test_linearized_solution_invariants():
    walls, lim = limiting_case(16)
    g = walls.grid
    params = Params()
    fo = solve_first_order(lim, VectorField.zeros(g), params)
    state = solve_linearized_remainder(lim, fo, VectorField.zeros(g), ScalarField.zeros(g), params)
    assert state.total_norm > 1.0
    report = residual_linearized(state, lim, fo, VectorField.zeros(g), ScalarField.zeros(g), params)
    assert report["mass"] <= 1e-8
    assert report["helmholtz"] <= 1e-12
    assert np.abs(state.uR.x.values[:, [0, -1]]).max() == 0.0
    assert np.abs(state.uR.y.values[:, [0, -1]]).max() == 0.0
    assert np.abs(state.thetaR.values[:, [0, -1]]).max() <= 1e-15
    np.testing.assert_allclose(state.wR.x.values, (lim.rho0 * state.uR).x.values, atol=1e-14)


def test_linearized_solver_rejects_bad_relaxation(case32):
    _, params, lim, fo, rem, _ = case32
    with pytest.raises(ValueError):
        solve_linearized_remainder(lim, fo, rem.uR, rem.thetaR, params, omega=0.0)


def test_relaxed_iteration_reaches_the_same_state():
    walls, lim = limiting_case(16)
    g = walls.grid
    params = Params()
    fo = solve_first_order(lim, VectorField.zeros(g), params)
    zero, zero_v = ScalarField.zeros(g), VectorField.zeros(g)
    full = solve_linearized_remainder(lim, fo, zero_v, zero, params)
    relaxed = solve_linearized_remainder(lim, fo, zero_v, zero, params, omega=0.7)
    assert relaxed.iterations > full.iterations
    assert l2_norm(relaxed.thetaR - full.thetaR) <= 1e-7
    assert l2_norm(relaxed.rhoR - full.rhoR) <= 1e-7


def test_nonlinear_solution_invariants(case32):
    walls, params, lim, fo, rem, run = case32
    g = walls.grid
    report = residual_nonlinear(rem, lim, fo, params)
    assert abs(integrate(rem.rhoR)) <= 1e-8
    assert np.abs(rem.uR.x.values[:, [0, -1]]).max() == 0.0
    assert np.abs(rem.thetaR.values[:, [0, -1]]).max() <= 1e-15
    assert report["skew"] <= g.hy ** 2
    # the stabilized Stokes velocity is divergence free up to the O(h^2) Rhie-Chow term
    assert l2_norm(div(rem.vR)) <= 5 * g.hy ** 2
    assert max(run.norms) <= run.radius


def test_nonlinear_residuals_decrease_under_refinement(case32):
    coarse = remainder_case(0.1, 16)
    fine = case32
    r_coarse = residual_nonlinear(coarse[4], coarse[2], coarse[3], coarse[1])
    r_fine = residual_nonlinear(fine[4], fine[2], fine[3], fine[1])
    for key in ("continuity", "momentum", "energy", "skew"):
        assert r_fine[key] < r_coarse[key] / 1.5, key


def test_outer_iteration_contracts(case32):
    changes = np.array(case32[-1].changes)
    assert np.all(changes[1:] / changes[:-1] < 0.9)


def test_remainder_is_uniformly_bounded_in_epsilon():
    totals = [remainder_case(eps)[4].total_norm for eps in (0.2, 0.1, 0.05)]
    assert totals[0] >= totals[1] >= totals[2] > 0
    assert max(totals) / min(totals) <= 3.0


def test_ball_escape_is_reported():
    walls, lim = limiting_case(16)
    with pytest.raises(BallEscape) as info:
        solve_remainder_nonlinear(lim, Params(epsilon=0.1), radius=1e-3)
    assert info.value.radius == 1e-3 and info.value.norms


# --- skew-symmetry diagnostic ------------------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_skew_symmetry_vanishes_when_every_field_vanishes_on_walls(seed):
    g = Grid(16, 16)
    rho0 = ScalarField.from_function(g, lambda x, y: 1 + 0.2 * np.cos(2 * np.pi * x) * np.cos(np.pi * y))
    defect = skew_symmetry_defect(rho0, 1.0 / rho0, random_vector(g, seed), random_scalar(g, seed + 2),
                                  random_scalar(g, seed + 3))
    assert defect <= 1e-13


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_skew_symmetry_defect_is_second_order(seed):
    # u_R and theta_R vanish on the walls, rho_R does not; the defect is
    # bounded by C h^2 relative to the H^2 sizes of the two factors
    defects, scales = [], []
    for n in (16, 32, 64):
        g = Grid(n, n)
        rho0 = ScalarField.from_function(g, lambda x, y: 1 + 0.2 * np.cos(2 * np.pi * x) * np.cos(np.pi * y))
        rhoR = random_scalar(g, seed + 2, wall_vanishing=False) + 1.0
        uR, thetaR = random_vector(g, seed), random_scalar(g, seed + 3)
        defects.append(skew_symmetry_defect(rho0, 1.0 / rho0, uR, rhoR, thetaR))
        scales.append(sobolev_norm(rho0 * uR, 2) * sobolev_norm(rho0 * thetaR + rhoR / rho0, 2))
    h = np.array([1 / 15, 1 / 31, 1 / 63])
    assert np.all(np.array(defects) <= 0.05 * h ** 2 * np.array(scales))
    assert np.polyfit(np.log(h), np.log(defects), 1)[0] >= 1.8
