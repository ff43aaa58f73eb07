"""Steady compressible Navier-Stokes system at fixed epsilon.

Unknowns ``(rho, u, theta)`` on the channel with pressure ``P = rho*theta``:

    div(rho*u) = 0,
    rho (u.grad)u + grad(rho*theta) = epsilon*(mu*lap(u) + zeta*grad(div u)),
    rho (u.grad)theta + rho*theta*div(u) = epsilon*kappa*lap(theta) + epsilon*Psi(u),
    integrate(rho) = M,
    u = (epsilon*h(T_w)*dT_w/dx, 0),  theta = T_w  on the walls,

with ``Psi`` the viscous dissipation.  Two independent routes produce a
:class:`FullState`: :func:`assemble_expansion` sums the asymptotic tiers,
:func:`solve_full_newton` iterates on the discrete system directly.

The discrete continuity equation of the Newton solver carries the Rhie-Chow
term ``-(alpha*hx*hy*M/(mu*epsilon)) * pressure_dissipation(rho*theta)`` and a
scalar multiplier enforcing the mass row.  Its coefficient is the one for
which the epsilon -> 0 limit of the discrete system is the discrete
leading-order system of :mod:`ghostflow.limiting_system`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elliptic_kit import RHIE_CHOW_ALPHA
from .errors import JacobianSingular, NewtonDivergence
from .first_order_system import FirstOrderSolution
from .grid_core import (
    Grid,
    ScalarField,
    VectorField,
    WallData,
    advect,
    dissipation,
    div,
    grad,
    integrate,
    l2_norm,
    laplacian,
    operators,
    pressure_dissipation,
    vector_laplacian,
)
from .limiting_system import LimitingSolution, Params
from .remainder_system import RemainderState

NEWTON_TOL = 1e-9


@dataclass
class FullState:
    """Density, velocity, temperature and pressure ``P = rho*theta``.

    ``iterations``, ``history`` and ``multiplier`` are filled in by
    :func:`solve_full_newton` (the multiplier is the scalar that enforces the
    mass row in the discrete continuity equation).
    """

    rho: ScalarField
    theta: ScalarField
    P: ScalarField
    u: VectorField
    epsilon: float
    iterations: int = 0
    history: list = field(default_factory=list)
    multiplier: float = 0.0

    @classmethod
    def from_fields(cls, rho: ScalarField, u: VectorField, theta: ScalarField, epsilon: float,
                    **extra) -> "FullState":
        return cls(rho, theta, rho * theta, u, float(epsilon), **extra)

    @classmethod
    def rest(cls, grid: Grid, params: Params, temperature: float = 1.0) -> "FullState":
        """Uniform state ``(rho, u, theta) = (M/area, 0, temperature)``."""
        rho = ScalarField.constant(grid, params.M / grid.area)
        theta = ScalarField.constant(grid, temperature)
        return cls.from_fields(rho, VectorField.zeros(grid), theta, params.epsilon)


def assemble_expansion(lim: LimitingSolution, fo: FirstOrderSolution, rem: RemainderState | None,
                       params: Params) -> FullState:
    """Sum the tiers: ``rho0 + e*rho1 + e^2*rho2 + e^3*rho3 + e^2*rho_R`` etc.

    ``rem=None`` assembles the remainder-free expansion.
    """
    e = params.epsilon
    rho = lim.rho0 + e * fo.rho1 + e ** 2 * fo.rho2 + e ** 3 * fo.rho3
    u = e * lim.u1 + e ** 2 * fo.u2
    theta = lim.theta0 + e * fo.theta1
    if rem is not None:
        rho = rho + e ** 2 * rem.rhoR
        u = u + e ** 2 * rem.uR
        theta = theta + e ** 2 * rem.thetaR
    return FullState.from_fields(rho, u, theta, e)


def wall_velocity(walls: WallData, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Tangential wall velocities ``epsilon*h(T_w)*dT_w/dx`` on (bottom, top)."""
    return epsilon * walls.slip_velocity("bottom"), epsilon * walls.slip_velocity("top")


def _interior(grid: Grid) -> ScalarField:
    return ScalarField(grid, (~grid.wall_mask()).astype(float))


def residual_full(state: FullState, walls: WallData, params: Params) -> dict:
    """L2 residuals of the three balance laws, with term-magnitude references.

    Continuity is the stabilized discrete form
    ``div(rho*u) - newton_stabilization*pressure_dissipation(rho*theta)``
    solved by :func:`solve_full_newton` (the Rhie-Chow term is O(h^2) on
    smooth pressures); the bare ``div(rho*u)`` is reported as
    ``continuity_pointwise``.  Continuity is measured on every node, momentum
    and energy on interior rows.

    ``scale_*`` is the sum of the L2 norms of the individual terms of each
    equation (for continuity: the x- and y-flux derivatives and the
    stabilization) and ``relative_*`` the ratio of residual to scale.  Wall
    data, mass and equation-of-state defects are reported separately.
    """
    e, mu, zeta, kappa = state.epsilon, params.mu, params.zeta, params.kappa
    grid = state.rho.grid
    ops = operators(grid)
    interior = _interior(grid)
    rho, u, theta = state.rho, state.u, state.theta
    pressure = rho * theta

    stabilized = newton_stabilization(grid, params.with_epsilon(e)) * pressure_dissipation(pressure)
    terms = {
        "continuity": [ScalarField(grid, (ops.dx @ (rho * u.x).flat()).reshape(grid.shape)),
                       ScalarField(grid, (ops.dy @ (rho * u.y).flat()).reshape(grid.shape)),
                       -stabilized],
        "momentum": [t * interior for t in (rho * advect(u, u), grad(pressure), -e * mu * vector_laplacian(u),
                                            -e * zeta * grad(div(u)))],
        "energy": [t * interior for t in (rho * advect(u, theta), pressure * div(u), -e * kappa * laplacian(theta),
                                          -e * dissipation(u, mu, params.lam))],
    }
    report = {}
    for key, parts in terms.items():
        residual = l2_norm(sum(parts[1:], parts[0]))
        scale = sum(l2_norm(t) for t in parts)
        report[key] = residual
        report[f"scale_{key}"] = scale
        report[f"relative_{key}"] = residual / scale if scale > 0 else residual
    report["continuity_pointwise"] = l2_norm(div(rho * u))
    bottom, top = wall_velocity(walls, e)
    wall = np.concatenate([u.x.values[:, 0] - bottom, u.x.values[:, -1] - top, u.y.values[:, 0], u.y.values[:, -1],
                           theta.values[:, 0] - walls.t_w_bottom, theta.values[:, -1] - walls.t_w_top])
    report["wall"] = float(np.abs(wall).max())
    report["mass"] = abs(integrate(rho) - params.M)
    report["pressure"] = float(np.abs((state.P - pressure).values).max())
    return report


# ---------------------------------------------------------------------------
# Newton solver
# ---------------------------------------------------------------------------


def newton_stabilization(grid: Grid, params: Params) -> float:
    """Rhie-Chow coefficient of the continuity rows, ``alpha*hx*hy*M/(mu*epsilon)``."""
    return RHIE_CHOW_ALPHA * grid.hx * grid.hy * params.M / (params.mu * params.epsilon)


class _System:
    """Residual and analytic Jacobian of the discrete full system.

    The unknown vector is ``[rho, u_x, u_y, theta, multiplier]`` (C-order
    flattened nodal arrays).  Rows: continuity on every node, x/y momentum and
    energy on interior nodes with Dirichlet wall rows, and the mass row.
    """

    def __init__(self, walls: WallData, params: Params):
        grid = walls.grid
        self.grid, self.walls, self.params = grid, walls, params
        self.ops = ops = operators(grid)
        self.n = n = grid.size
        self.tau = newton_stabilization(grid, params)
        self.is_wall = np.zeros(n, dtype=bool)
        self.is_wall[ops.wall] = True
        self.keep = sp.diags((~self.is_wall).astype(float))
        self.pin = sp.diags(self.is_wall.astype(float))
        bottom, top = wall_velocity(walls, params.epsilon)
        ux_wall = np.zeros(grid.shape)
        ux_wall[:, 0], ux_wall[:, -1] = bottom, top
        th_wall = np.zeros(grid.shape)
        th_wall[:, 0], th_wall[:, -1] = walls.t_w_bottom, walls.t_w_top
        self.ux_wall, self.th_wall = ux_wall.ravel(), th_wall.ravel()
        e, mu, zeta, kappa = params.epsilon, params.mu, params.zeta, params.kappa
        dx, dy, lap = ops.dx, ops.dy, ops.lap
        # constant (state independent) linear parts of the momentum and energy rows
        self.visc_xx = -e * (mu * lap + zeta * (dx @ dx))
        self.visc_xy = -e * zeta * (dx @ dy)
        self.visc_yx = -e * zeta * (dy @ dx)
        self.visc_yy = -e * (mu * lap + zeta * (dy @ dy))
        self.conduction = -e * kappa * lap

    def split(self, x: np.ndarray):
        n = self.n
        return x[:n], x[n:2 * n], x[2 * n:3 * n], x[3 * n:4 * n], x[4 * n]

    def pack(self, state: FullState, multiplier: float = 0.0) -> np.ndarray:
        return np.concatenate([state.rho.flat(), state.u.x.flat(), state.u.y.flat(), state.theta.flat(), [multiplier]])

    def unpack(self, x: np.ndarray) -> tuple[ScalarField, VectorField, ScalarField, float]:
        g = self.grid
        rho, ux, uy, th, lam = self.split(x)
        return (ScalarField(g, rho.reshape(g.shape)), VectorField(g, ux.reshape(g.shape), uy.reshape(g.shape)),
                ScalarField(g, th.reshape(g.shape)), float(lam))

    def residual(self, x: np.ndarray) -> np.ndarray:
        ops, p, e = self.ops, self.params, self.params.epsilon
        dx, dy = ops.dx, ops.dy
        rho, ux, uy, th, lam = self.split(x)
        pressure = rho * th
        cont = dx @ (rho * ux) + dy @ (rho * uy) - self.tau * (ops.pressure_dissipation @ pressure) + lam
        ux_x, ux_y, uy_x, uy_y = dx @ ux, dy @ ux, dx @ uy, dy @ uy
        mom_x = rho * (ux * ux_x + uy * ux_y) + dx @ pressure + self.visc_xx @ ux + self.visc_xy @ uy
        mom_y = rho * (ux * uy_x + uy * uy_y) + dy @ pressure + self.visc_yx @ ux + self.visc_yy @ uy
        divergence = ux_x + uy_y
        shear = 0.5 * (ux_y + uy_x)
        psi = 2.0 * p.mu * (ux_x ** 2 + uy_y ** 2 + 2.0 * shear ** 2) + p.lam * divergence ** 2
        energy = (rho * (ux * (dx @ th) + uy * (dy @ th)) + pressure * divergence + self.conduction @ th - e * psi)
        wall = self.is_wall
        mom_x[wall] = (ux - self.ux_wall)[wall]
        mom_y[wall] = uy[wall]
        energy[wall] = (th - self.th_wall)[wall]
        mass = ops.weights @ rho - p.M
        return np.concatenate([cont, mom_x, mom_y, energy, [mass]])

    def jacobian(self, x: np.ndarray) -> sp.csc_matrix:
        ops, p, e = self.ops, self.params, self.params.epsilon
        dx, dy, S = ops.dx, ops.dy, ops.pressure_dissipation
        D = sp.diags
        rho, ux, uy, th, _ = self.split(x)
        ux_x, ux_y, uy_x, uy_y = dx @ ux, dy @ ux, dx @ uy, dy @ uy
        th_x, th_y = dx @ th, dy @ th
        divergence = ux_x + uy_y
        shear = 0.5 * (ux_y + uy_x)
        transport = D(ux) @ dx + D(uy) @ dy  # (u.grad)
        rho_transport = D(rho) @ transport

        c_rho = dx @ D(ux) + dy @ D(uy) - self.tau * S @ D(th)
        c_ux = dx @ D(rho)
        c_uy = dy @ D(rho)
        c_th = -self.tau * S @ D(rho)

        mx_rho = D(ux * ux_x + uy * ux_y) + dx @ D(th)
        mx_ux = rho_transport + D(rho * ux_x) + self.visc_xx
        mx_uy = D(rho * ux_y) + self.visc_xy
        mx_th = dx @ D(rho)
        my_rho = D(ux * uy_x + uy * uy_y) + dy @ D(th)
        my_ux = D(rho * uy_x) + self.visc_yx
        my_uy = rho_transport + D(rho * uy_y) + self.visc_yy
        my_th = dy @ D(rho)

        # d(Psi)/du: Psi = 2 mu (a^2 + d^2 + 2 s^2) + lam (a + d)^2
        dpsi_ux = D(4.0 * p.mu * ux_x + 2.0 * p.lam * divergence) @ dx + D(4.0 * p.mu * shear) @ dy
        dpsi_uy = D(4.0 * p.mu * uy_y + 2.0 * p.lam * divergence) @ dy + D(4.0 * p.mu * shear) @ dx
        en_rho = D(ux * th_x + uy * th_y + th * divergence)
        en_ux = D(rho * th_x) + D(rho * th) @ dx - e * dpsi_ux
        en_uy = D(rho * th_y) + D(rho * th) @ dy - e * dpsi_uy
        en_th = rho_transport + D(rho * divergence) + self.conduction

        keep, pin = self.keep, self.pin
        n = self.n
        ones = sp.csr_matrix(np.ones((n, 1)))
        blocks = [
            [c_rho, c_ux, c_uy, c_th, ones],
            [keep @ mx_rho, keep @ mx_ux + pin, keep @ mx_uy, keep @ mx_th, None],
            [keep @ my_rho, keep @ my_ux, keep @ my_uy + pin, keep @ my_th, None],
            [keep @ en_rho, keep @ en_ux, keep @ en_uy, keep @ en_th + pin, None],
            [sp.csr_matrix(ops.weights.reshape(1, n)), None, None, None, None],
        ]
        return sp.bmat(blocks, format="csc")


def _newton_step(jac: sp.csc_matrix, res: np.ndarray) -> np.ndarray:
    try:
        lu = spla.splu(jac)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise JacobianSingular(f"Newton Jacobian is singular: {exc}") from exc
    step = lu.solve(-res)
    step += lu.solve(-res - jac @ step)  # one step of iterative refinement
    if not np.all(np.isfinite(step)):
        raise JacobianSingular("Newton step is not finite")
    return step


def solve_full_newton(walls: WallData, params: Params, initial: FullState, newton_tol: float = NEWTON_TOL,
                      max_iter: int = 50, max_halvings: int = 12) -> FullState:
    """Damped Newton iteration on the discrete full system.

    Converges when the max-norm of the nonlinear residual falls below
    ``newton_tol``.  A step is halved until the residual L2 norm decreases
    (Armijo condition with constant 1e-4); exhausting ``max_halvings`` or
    ``max_iter`` raises :class:`NewtonDivergence` with the residual history.
    """
    if not 0.0 < params.epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {params.epsilon}")
    if initial.rho.grid != walls.grid:
        raise ValueError("initial state and wall data live on different grids")
    system = _System(walls, params)
    x = system.pack(initial, initial.multiplier)
    res = system.residual(x)
    history = [float(np.abs(res).max())]
    iterations = 0
    while history[-1] >= newton_tol:
        if iterations >= max_iter:
            raise NewtonDivergence(f"Newton did not converge in {max_iter} iterations", history)
        step = _newton_step(system.jacobian(x), res)
        norm = np.linalg.norm(res)
        alpha = 1.0
        for _ in range(max_halvings + 1):
            trial = x + alpha * step
            trial_res = system.residual(trial)
            if np.all(np.isfinite(trial_res)) and np.linalg.norm(trial_res) <= (1.0 - 1e-4 * alpha) * norm:
                break
            alpha *= 0.5
        else:
            raise NewtonDivergence("Newton step halving exhausted", history)
        x, res = trial, trial_res
        iterations += 1
        history.append(float(np.abs(res).max()))
    rho, u, theta, lam = system.unpack(x)
    return FullState.from_fields(rho, u, theta, params.epsilon, iterations=iterations, history=history,
                                 multiplier=lam)


def newton_residual(state: FullState, walls: WallData, params: Params) -> np.ndarray:
    """Residual vector of the discrete system solved by :func:`solve_full_newton`."""
    system = _System(walls, params)
    return system.residual(system.pack(state, state.multiplier))


def newton_jacobian(state: FullState, walls: WallData, params: Params) -> sp.csc_matrix:
    """Analytic Jacobian of :func:`newton_residual` at ``state``."""
    system = _System(walls, params)
    return system.jacobian(system.pack(state, state.multiplier))
