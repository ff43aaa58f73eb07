"""First-order correction tier and the density corrections ``rho2, rho3``.

For a frozen remainder velocity ``u_R~`` the unknowns ``(rho1, u2, theta1,
P3)`` and the constant ``P1`` solve

    rho0*theta1 + rho1*theta0 = P1,      integrate(rho1) = 0,
    div(rho0*u2) = -div(rho1*u1),
    rho0 (u1.grad)u2 + rho0 (u2.grad)u1 + grad(P3)
        = -rho1 (u1.grad)u1 + mu*lap(u2) + zeta*grad(div u2),
    kappa*lap(theta1) = -theta0 (u2.grad)rho0 + rho1 (u1.grad)theta0
        + rho0 (u1.grad)theta1 + (rho0*theta1 + rho1*theta0) div u1
        + rho0*theta0 div u2 - 2 theta0 (u_R~.grad)rho0,
    u2 = 0,  theta1 = 0  on the walls.

With ``v2 = rho0*u2`` each fixed-point step is one Stokes solve for
``(v2, P0*P3)`` and one Dirichlet Poisson solve for ``theta1``.  The density
corrections follow from the higher Boussinesq relations
``P2 = rho2*theta0 + rho1*theta1 + C1`` and ``P3 = rho3*theta0 + rho2*theta1 + C2``
with the constants chosen so that ``rho2`` and ``rho3`` have zero mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic_kit import DEFAULT_CONFIG, LinearSolverConfig, solve_poisson_dirichlet, solve_stokes
from .errors import FixedPointDivergence, NonPositiveTemperature
from .grid_core import (
    ScalarField,
    VectorField,
    advect,
    div,
    grad,
    grad_contract,
    integrate,
    l2_norm,
    laplacian,
    mean,
    sobolev_norm,
    vector_laplacian,
)
from .limiting_system import LimitingSolution, Params, limiting_stabilization


@dataclass
class FirstOrderSolution:
    rho1: ScalarField
    theta1: ScalarField
    P3: ScalarField
    u2: VectorField
    v2: VectorField
    P1: float
    rho2: ScalarField
    rho3: ScalarField
    C1: float
    C2: float
    iterations: int = 0
    history: list = field(default_factory=list)


def _check_temperature(theta0: ScalarField) -> None:
    if theta0.min() <= 0:
        raise NonPositiveTemperature(f"temperature must be positive (min {theta0.min():.3e})")


def compute_P1(rho0: ScalarField, theta0: ScalarField, theta1t: ScalarField) -> float:
    """Constant ``P1 = integrate(rho0*theta1/theta0) / integrate(1/theta0)``.

    This is the value for which ``rho1 = (P1 - rho0*theta1)/theta0`` has zero mass.
    """
    _check_temperature(theta0)
    return integrate(rho0 * theta1t / theta0) / integrate(1.0 / theta0)


def gauge_constant(pressure: ScalarField, product: ScalarField, theta0: ScalarField) -> float:
    """Constant ``C`` making ``(pressure - product - C)/theta0`` mass free."""
    _check_temperature(theta0)
    return integrate((pressure - product) / theta0) / integrate(1.0 / theta0)


def compute_rho23(P2: ScalarField, P3: ScalarField, rho1: ScalarField, theta1: ScalarField,
                  theta0: ScalarField) -> tuple[ScalarField, ScalarField, float, float]:
    """Density corrections ``(rho2, rho3, C1, C2)`` from the higher Boussinesq relations."""
    C1 = gauge_constant(P2, rho1 * theta1, theta0)
    rho2 = (P2 - rho1 * theta1 - C1) / theta0
    C2 = gauge_constant(P3, rho2 * theta1, theta0)
    rho3 = (P3 - rho2 * theta1 - C2) / theta0
    return rho2, rho3, C1, C2


def first_order_divergence(lim: LimitingSolution, theta1t: ScalarField, P1t: float) -> ScalarField:
    """Divergence data ``div(rho0*theta1*u1/theta0) - P1*div(u1/theta0)`` for ``v2``.

    The integral vanishes in the continuum because ``u1`` is tangential on the
    walls; the O(h^2) quadrature defect of the pointwise divergence is removed
    by subtracting the mean, which leaves every gradient of the data unchanged.
    """
    data = div(lim.rho0 * theta1t / lim.theta0 * lim.u1) - P1t * div(lim.u1 / lim.theta0)
    return data - mean(data)


def first_order_forcing(lim: LimitingSolution, v2t: VectorField, theta1t: ScalarField, P1t: float,
                        params: Params) -> VectorField:
    """Frozen-coefficient Stokes forcing for ``(v2, P0*P3)``."""
    mu, zeta = params.mu, params.zeta
    rho0, theta0, u1, P0 = lim.rho0, lim.theta0, lim.u1, lim.P0
    divergence = first_order_divergence(lim, theta1t, P1t)
    return (
        mu * (theta0 - 1.0) * vector_laplacian(v2t)
        - rho0 * u1.dot(grad(theta0)) * v2t
        - P0 * advect(u1, v2t)
        - P0 * advect(v2t, u1)
        + mu * laplacian(theta0) * v2t
        + 2.0 * mu * grad_contract(theta0, v2t)
        - rho0 * (P1t - rho0 * theta1t) * advect(u1, u1)
        + zeta * grad(theta0 * divergence)
        + zeta * grad(v2t.dot(grad(theta0)))
    )


def first_order_energy(lim: LimitingSolution, v2t: VectorField, theta1t: ScalarField, P1t: float,
                       u_R_tilde: VectorField) -> ScalarField:
    """Energy source ``kappa*lap(theta1)`` of one fixed-point step."""
    rho0, theta0, u1 = lim.rho0, lim.theta0, lim.u1
    grad_theta0 = grad(theta0)
    return (
        -theta0 / rho0 * v2t.dot(grad(rho0))
        + (P1t - rho0 * theta1t) / theta0 * u1.dot(grad_theta0)
        + rho0 * u1.dot(grad(theta1t))
        + v2t.dot(grad_theta0)
        + rho0 * theta1t * div(u1)
        + theta0 * u1.dot(grad(rho0 * theta1t / theta0))
        - P1t * theta0 * u1.dot(grad(1.0 / theta0))
        - 2.0 * theta0 * u_R_tilde.dot(grad(rho0))
    )


def solve_first_order(lim: LimitingSolution, u_R_tilde: VectorField, params: Params,
                      config: LinearSolverConfig = DEFAULT_CONFIG) -> FirstOrderSolution:
    """Banach fixed-point iteration for the first-order tier.

    Starts from ``(v2, theta1) = (0, 0)`` and stops when the H^2 change of
    ``(v2, theta1)`` falls below ``params.fp_tol``.
    """
    grid = lim.theta0.grid
    zero_wall = np.zeros((2, grid.nx))
    zero_trace = np.zeros(grid.nx)
    tau = limiting_stabilization(grid, params, lim.P0)
    v2 = VectorField.zeros(grid)
    theta1 = ScalarField.zeros(grid)
    pressure = ScalarField.zeros(grid)
    history: list[float] = []
    for it in range(1, params.fp_max_iter + 1):
        P1t = compute_P1(lim.rho0, lim.theta0, theta1)
        forcing = first_order_forcing(lim, v2, theta1, P1t, params)
        divergence = first_order_divergence(lim, theta1, P1t)
        stokes = solve_stokes(params.mu, forcing, divergence, zero_wall, zero_wall, 0.0,
                              stabilization=tau, config=config)
        energy = first_order_energy(lim, v2, theta1, P1t, u_R_tilde)
        theta1_new = solve_poisson_dirichlet(energy / params.kappa, zero_trace, zero_trace, config)
        change = sobolev_norm(stokes.velocity - v2, 2) + sobolev_norm(theta1_new - theta1, 2)
        history.append(change)
        v2, theta1, pressure = stokes.velocity, theta1_new, stokes.pressure
        if not np.isfinite(change) or change > 1e8:
            raise FixedPointDivergence("first-order fixed point diverged", history)
        if change < params.fp_tol:
            break
    else:
        raise FixedPointDivergence(
            f"first-order fixed point did not converge in {params.fp_max_iter} iterations", history)
    P1 = compute_P1(lim.rho0, lim.theta0, theta1)
    rho1 = (P1 - lim.rho0 * theta1) / lim.theta0
    P3 = pressure / lim.P0
    u2 = v2 / lim.rho0
    rho2, rho3, C1, C2 = compute_rho23(lim.P2, P3, rho1, theta1, lim.theta0)
    return FirstOrderSolution(rho1, theta1, P3, u2, v2, P1, rho2, rho3, C1, C2, it, history)


def residual_first_order(fo: FirstOrderSolution, lim: LimitingSolution, u_R_tilde: VectorField,
                         params: Params) -> dict:
    """L2 norms of the first-order equation residuals (interior rows for PDEs)."""
    grid = lim.theta0.grid
    interior = ScalarField(grid, (~grid.wall_mask()).astype(float))
    rho0, theta0, u1 = lim.rho0, lim.theta0, lim.u1
    rho1, u2, theta1 = fo.rho1, fo.u2, fo.theta1
    momentum = (rho0 * advect(u1, u2) + rho0 * advect(u2, u1) + grad(fo.P3) + rho1 * advect(u1, u1)
                - params.mu * vector_laplacian(u2) - params.zeta * grad(div(u2)))
    energy = (params.kappa * laplacian(theta1) + theta0 * u2.dot(grad(rho0)) - rho1 * u1.dot(grad(theta0))
              - rho0 * u1.dot(grad(theta1)) - (rho0 * theta1 + rho1 * theta0) * div(u1)
              - rho0 * theta0 * div(u2) + 2.0 * theta0 * u_R_tilde.dot(grad(rho0)))
    walls = np.concatenate([u2.x.values[:, [0, -1]].ravel(), u2.y.values[:, [0, -1]].ravel(),
                            theta1.values[:, [0, -1]].ravel()])
    return {
        "boussinesq": float(np.abs((rho0 * theta1 + rho1 * theta0 - fo.P1).values).max()),
        "continuity": l2_norm(div(rho0 * u2 + rho1 * u1)),
        "momentum": l2_norm(momentum * interior),
        "energy": l2_norm(energy * interior),
        "mass": abs(integrate(rho1)),
        "p3_mean": abs(integrate(fo.P3)),
        "wall": float(np.abs(walls).max()),
    }
