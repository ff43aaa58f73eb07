"""Leading-order (ghost-effect) system and its fixed-point solver.

Unknowns are the leading density and temperature ``rho0, theta0``, the
velocity ``u1`` (the flow is ``epsilon*u1`` to leading order), the pressure
correction ``P2`` and the constant background pressure ``P0``:

    grad(rho0*theta0) = 0,               integrate(rho0) = M,
    div(rho0*u1) = 0,
    rho0 (u1.grad) u1 + grad(P2) = mu*lap(u1) + zeta*grad(div u1),
    kappa*lap(theta0) = 2*rho0*theta0*div(u1),
    theta0 = T_w,  u1 = (h(T_w) dT_w/dx, 0)  on the walls.

Writing ``v1 = rho0*u1`` (divergence free) turns each fixed-point step into
one Stokes solve for ``(v1, P0*P2)`` plus one Dirichlet Poisson solve for
``theta0``, with coefficients frozen at the previous iterate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .elliptic_kit import LinearSolverConfig, DEFAULT_CONFIG, RHIE_CHOW_ALPHA, solve_poisson_dirichlet, solve_stokes
from .errors import FixedPointDivergence, NonPositiveTemperature
from .grid_core import (
    ScalarField,
    VectorField,
    WallData,
    advect,
    div,
    grad,
    grad_contract,
    integrate,
    l2_norm,
    laplacian,
    sobolev_norm,
    vector_laplacian,
)

DELTA_WARNING = 0.2


@dataclass(frozen=True)
class Params:
    """Physical and iteration parameters.

    ``lam`` is the second viscosity coefficient; ``zeta = mu + lam``.  The
    specific heat ``c_v`` is fixed at 1 (the expansion relies on it).
    """

    epsilon: float = 0.1
    mu: float = 1.0
    lam: float = 0.0
    kappa: float = 1.0
    c_v: float = 1.0
    M: float = 1.0
    fp_tol: float = 1e-9
    fp_max_iter: int = 200

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if 2.0 * self.mu + 3.0 * self.lam < 0:
            raise ValueError("viscosities must satisfy 2*mu + 3*lam >= 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.c_v != 1.0:
            raise ValueError("only c_v = 1 is supported")
        if not self.M > 0:
            raise ValueError("total mass M must be positive")
        if not self.fp_tol > 0 or self.fp_max_iter < 1:
            raise ValueError("invalid fixed-point controls")

    @property
    def zeta(self) -> float:
        return self.mu + self.lam

    def with_epsilon(self, epsilon: float) -> "Params":
        return Params(epsilon, self.mu, self.lam, self.kappa, self.c_v, self.M, self.fp_tol, self.fp_max_iter)


@dataclass
class LimitingSolution:
    rho0: ScalarField
    theta0: ScalarField
    P2: ScalarField
    u1: VectorField
    v1: VectorField
    P0: float
    iterations: int = 0
    history: list = field(default_factory=list)


def compute_P0(theta0: ScalarField, M: float) -> float:
    """Background pressure ``M / integrate(1/theta0)`` fixing the total mass."""
    if theta0.min() <= 0:
        raise NonPositiveTemperature(f"temperature must be positive (min {theta0.min():.3e})")
    return M / integrate(1.0 / theta0)


def compute_Z1(v1t: VectorField, theta0t: ScalarField, P0t: float, params: Params) -> VectorField:
    """Frozen-coefficient Stokes forcing in momentum-density variables.

    ``mu(theta-1)lap(v) + (mu - kappa/2) v lap(theta) - theta (v.grad)v
    + zeta grad(v.grad theta) + 2 mu grad(theta).(grad v)^t``.  The forcing does
    not depend on ``P0t``; the argument is accepted for a uniform signature.
    """
    mu, zeta, kappa = params.mu, params.zeta, params.kappa
    lap_theta = laplacian(theta0t)
    return (
        mu * (theta0t - 1.0) * vector_laplacian(v1t)
        + (mu - 0.5 * kappa) * lap_theta * v1t
        - theta0t * advect(v1t, v1t)
        + zeta * grad(v1t.dot(grad(theta0t)))
        + 2.0 * mu * grad_contract(theta0t, v1t)
    )


def compute_Z2(v1t: VectorField, theta0t: ScalarField) -> ScalarField:
    """Energy source ``2 v.grad(theta)`` (so that ``kappa*lap(theta0) = Z2``)."""
    return 2.0 * v1t.dot(grad(theta0t))


def primitive_momentum_defect(u1: VectorField, rho0: ScalarField, params: Params) -> VectorField:
    """``mu*lap(u1) + zeta*grad(div u1) - rho0 (u1.grad)u1`` with the public stencils."""
    return params.mu * vector_laplacian(u1) + params.zeta * grad(div(u1)) - rho0 * advect(u1, u1)


def limiting_stabilization(grid, params: Params, P0: float) -> float:
    """Rhie-Chow coefficient of the leading-order Stokes step.

    Chosen so that the discrete leading-order equations coincide with the
    epsilon -> 0 limit of the discrete full system solved by Newton.
    """
    return RHIE_CHOW_ALPHA * grid.hx * grid.hy * params.M / (params.mu * P0)


def _wall_speed(walls: WallData, P0: float) -> tuple[np.ndarray, np.ndarray]:
    bottom = np.vstack([P0 * walls.slip_velocity("bottom") / walls.t_w_bottom, np.zeros(walls.grid.nx)])
    top = np.vstack([P0 * walls.slip_velocity("top") / walls.t_w_top, np.zeros(walls.grid.nx)])
    return bottom, top


def _limiting_step(v: VectorField, theta: ScalarField, walls: WallData, params: Params, form: str,
                   config: LinearSolverConfig):
    grid = walls.grid
    P0 = compute_P0(theta, params.M)
    if form == "primitive":
        # -mu*lap(v) + P0*(mu*lap(u) + zeta*grad(div u) - rho (u.grad)u) with
        # u = theta*v/P0, written to avoid cancelling two large Laplacians
        rho = P0 / theta
        u = theta * v / P0
        forcing = (params.mu * vector_laplacian((theta - 1.0) * v)
                   + P0 * (params.zeta * grad(div(u)) - rho * advect(u, u)))
        energy = v.dot(grad(theta)) + div(theta * v)
    elif form == "momentum_density":
        forcing = compute_Z1(v, theta, P0, params)
        energy = compute_Z2(v, theta)
    else:
        raise ValueError("form must be 'primitive' or 'momentum_density'")
    bottom, top = _wall_speed(walls, P0)
    stokes = solve_stokes(params.mu, forcing, ScalarField.zeros(grid), bottom, top, 0.0,
                          stabilization=limiting_stabilization(grid, params, P0), config=config)
    theta_new = solve_poisson_dirichlet(energy / params.kappa, walls.t_w_bottom, walls.t_w_top, config)
    return stokes.velocity, theta_new, stokes.pressure / P0


def solve_limiting(walls: WallData, params: Params, form: str = "primitive",
                   config: LinearSolverConfig = DEFAULT_CONFIG) -> LimitingSolution:
    """Banach fixed-point iteration for the leading-order system.

    ``form="primitive"`` (default) evaluates the frozen-coefficient forcing
    from the primitive momentum and energy equations with the public stencils,
    which makes the discrete solution the exact small-epsilon limit of the
    discrete full system.  ``form="momentum_density"`` uses the
    momentum-density forcings :func:`compute_Z1` / :func:`compute_Z2`; both
    forms agree up to O(h^2).
    """
    grid = walls.grid
    if walls.delta > DELTA_WARNING:
        warnings.warn(f"wall oscillation delta={walls.delta:.3g} exceeds {DELTA_WARNING}; "
                      "the fixed point may fail to contract", RuntimeWarning, stacklevel=2)
    theta = solve_poisson_dirichlet(ScalarField.zeros(grid), walls.t_w_bottom, walls.t_w_top, config)
    v = VectorField.zeros(grid)
    P2 = ScalarField.zeros(grid)
    history: list[float] = []
    for it in range(1, params.fp_max_iter + 1):
        v_new, theta_new, P2 = _limiting_step(v, theta, walls, params, form, config)
        change = sobolev_norm(v_new - v, 2) + sobolev_norm(theta_new - theta, 2)
        history.append(change)
        v, theta = v_new, theta_new
        if not np.isfinite(change) or change > 1e8:
            raise FixedPointDivergence("leading-order fixed point diverged", history)
        if change < params.fp_tol:
            break
    else:
        raise FixedPointDivergence(
            f"leading-order fixed point did not converge in {params.fp_max_iter} iterations", history)
    P0 = compute_P0(theta, params.M)
    rho0 = P0 / theta
    u1 = v / rho0
    return LimitingSolution(rho0, theta, P2, u1, v, P0, it, history)


def residual_limiting(sol: LimitingSolution, walls: WallData, params: Params) -> dict:
    """L2 norms of the leading-order equation residuals (interior rows for PDEs)."""
    grid = walls.grid
    interior = ScalarField(grid, (~grid.wall_mask()).astype(float))
    rho0, theta0, u1 = sol.rho0, sol.theta0, sol.u1
    momentum = sol.rho0 * advect(u1, u1) + grad(sol.P2) - params.mu * vector_laplacian(u1) - params.zeta * grad(div(u1))
    energy = params.kappa * laplacian(theta0) - 2.0 * rho0 * theta0 * div(u1)
    slip = np.concatenate([u1.x.values[:, 0] - walls.slip_velocity("bottom"),
                           u1.x.values[:, -1] - walls.slip_velocity("top"),
                           u1.y.values[:, 0], u1.y.values[:, -1]])
    return {
        "boussinesq": l2_norm(grad(rho0 * theta0)),
        "continuity": l2_norm(div(rho0 * u1)),
        "momentum": l2_norm(momentum * interior),
        "energy": l2_norm(energy * interior),
        "mass": abs(integrate(rho0) - params.M),
        "p2_mean": abs(integrate(sol.P2)),
        "wall_slip": float(np.abs(slip).max()),
        "wall_temperature": float(max(np.abs(theta0.values[:, 0] - walls.t_w_bottom).max(),
                                      np.abs(theta0.values[:, -1] - walls.t_w_top).max())),
    }
