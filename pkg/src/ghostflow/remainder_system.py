"""Remainder tier: source assembly, the linearized solver and the outer fixed point.

The remainder ``(rho_R, u_R, theta_R)`` collects everything beyond the first
two tiers of the expansion

    rho = rho0 + eps*rho1 + eps^2*rho2 + eps^3*rho3 + eps^2*rho_R,
    u   = eps*u1 + eps^2*u2 + eps^2*u_R,
    theta = theta0 + eps*theta1 + eps^2*theta_R.

For frozen ``(u_R~, theta_R~)`` the linearized remainder equations are solved
by splitting them into a Dirichlet Poisson problem for ``theta_R``, a Neumann
Poisson problem for the potential ``q_R`` of ``w_R = rho0*u_R = v_R + grad q_R``,
a Stokes problem for ``(v_R, P_R)`` where ``P_R`` is the effective viscous
flux, and a steady transport problem for ``rho_R``.  Iterating these four
solves gives the inner scheme; re-solving the first-order tier with the new
``u_R`` and repeating gives the outer map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic_kit import (
    DEFAULT_CONFIG,
    LinearSolverConfig,
    solve_poisson_dirichlet,
    solve_poisson_neumann,
    solve_steady_transport,
    solve_stokes,
)
from .errors import BallEscape, FixedPointDivergence
from .first_order_system import FirstOrderSolution, solve_first_order
from .grid_core import (
    ScalarField,
    VectorField,
    advect,
    dissipation,
    div,
    grad,
    grad_contract,
    integrate,
    k_norm,
    l2_norm,
    laplacian,
    mean,
    sobolev_norm,
    vector_laplacian,
)
from .limiting_system import LimitingSolution, Params

A = advect  # (a.grad) b, for scalar or vector b


# ---------------------------------------------------------------------------
# State and source containers
# ---------------------------------------------------------------------------


@dataclass
class RemainderState:
    """Remainder fields with the Helmholtz diagnostics of the inner scheme.

    ``norms`` is ``(||rho_R||_H2, ||u_R||_K, ||theta_R||_H3)``.
    """

    rhoR: ScalarField
    thetaR: ScalarField
    uR: VectorField
    wR: VectorField
    vR: VectorField
    qR: ScalarField
    PR: ScalarField
    PR_tilde: ScalarField
    epsilon: float
    iterations: int = 0
    history: list = field(default_factory=list)
    omega: float = 1.0

    @property
    def norms(self) -> tuple[float, float, float]:
        return (sobolev_norm(self.rhoR, 2), k_norm(self.uR, self.epsilon), sobolev_norm(self.thetaR, 3))

    @property
    def total_norm(self) -> float:
        return sum(self.norms)

    @classmethod
    def zeros(cls, grid, epsilon: float) -> "RemainderState":
        z, zv = ScalarField.zeros(grid), VectorField.zeros(grid)
        return cls(z, z, zv, zv, zv, z, z, z, epsilon)


@dataclass
class SourceTerms:
    """Source fields of the remainder equations.

    ``r1, r2, r3`` are the tier leftovers; ``R1, R2, R3`` the right-hand sides
    of the linearized system for a given ``u_R~``.
    """

    r1: ScalarField
    r2: VectorField
    r3: ScalarField
    R1: ScalarField
    R2: VectorField
    R3: ScalarField


def _tiers(lim: LimitingSolution, fo: FirstOrderSolution):
    return (lim.rho0, fo.rho1, fo.rho2, fo.rho3, lim.u1, fo.u2, lim.theta0, fo.theta1)


def _continuity_source(lim, fo, eps: float) -> ScalarField:
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    return -div(rho1 * u2 + rho2 * u1) - eps * div(rho2 * u2 + rho3 * u1) - eps ** 2 * div(rho3 * u2)


def assemble_sources(lim: LimitingSolution, fo: FirstOrderSolution,
                     params: Params) -> tuple[ScalarField, VectorField, ScalarField]:
    """Leftover fields ``(r1, r2, r3)`` of the first two tiers.

    ``r2`` carries no O(1) term: the products ``rho0 (u2.grad u1 + u1.grad u2)``
    are already balanced by the first-order momentum equation.
    """
    e = params.epsilon
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    r1 = _continuity_source(lim, fo, e)
    r2 = (
        e * (rho0 * A(u2, u2) + rho1 * (A(u2, u1) + A(u1, u2)) + rho2 * A(u1, u1))
        + e ** 2 * (rho1 * A(u2, u2) + rho2 * (A(u1, u2) + A(u2, u1)) + rho3 * A(u1, u1))
        + e ** 3 * (rho2 * A(u2, u2) + rho3 * (A(u1, u2) + A(u2, u1)))
        + e ** 4 * rho3 * A(u2, u2)
        + e * grad(rho3 * th1)
    )
    div_u1, div_u2 = div(u1), div(u2)
    r3 = (
        rho0 * A(u2, th1) + rho1 * (A(u2, th0) + A(u1, th1)) + rho2 * A(u1, th0)
        + e * (rho1 * A(u2, th1) + rho2 * (A(u2, th0) + A(u1, th1)) + rho3 * A(u1, th0))
        + e ** 2 * (rho2 * A(u2, th1) + rho3 * (A(u2, th0) + A(u1, th1)))
        + e ** 3 * rho3 * A(u2, th1)
        + (rho0 * th1 + rho1 * th0) * div_u2 + (rho2 * th0 + rho1 * th1) * div_u1
        + e * ((rho2 * th0 + rho1 * th1) * div_u2 + (rho2 * th1 + rho3 * th0) * div_u1)
        + e ** 2 * ((rho2 * th1 + rho3 * th0) * div_u2 + rho3 * th1 * div_u1)
        + e ** 3 * rho3 * th1 * div_u2
    )
    return r1, r2, r3


def assemble_R_terms(sources: tuple, lim: LimitingSolution, fo: FirstOrderSolution, u_R_tilde: VectorField,
                     params: Params) -> SourceTerms:
    """Right-hand sides ``(R1, R2, R3)`` of the linearized remainder system.

    ``R1 = -div((rho1 + eps*rho2 + eps^2*rho3) u_R~) + r1``, ``R2 = r2`` and
    ``R3 = (r3 - Psi(grad(u1 + eps*(u2 + u_R~))))/theta0`` with the viscous
    dissipation ``Psi``.
    """
    r1, r2, r3 = sources
    e = params.epsilon
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    carried = (rho1 + e * rho2 + e ** 2 * rho3) * u_R_tilde
    R1 = -div(carried) + r1
    psi = dissipation(u1 + e * (u2 + u_R_tilde), params.mu, params.lam)
    R3 = (r3 - psi) / th0
    return SourceTerms(r1, r2, r3, R1, r2, R3)


# ---------------------------------------------------------------------------
# Nonlinear terms and their linearizations
# ---------------------------------------------------------------------------


def eval_F_eps(rhoR: ScalarField, uR: VectorField, thR: ScalarField, lim: LimitingSolution,
               fo: FirstOrderSolution, epsilon: float) -> VectorField:
    """Nonlinear momentum terms of the remainder equations (every term carries epsilon)."""
    e = epsilon
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    return (
        e * (rho0 * (A(u2, uR) + A(uR, u2) + A(uR, uR)) + rho1 * (A(uR, u1) + A(u1, uR)) + rhoR * A(u1, u1))
        + e ** 2 * (rho1 * (A(uR, u2) + A(u2, uR) + A(uR, uR))
                    + rhoR * (A(u1, uR) + A(uR, u1) + A(u2, u1) + A(u1, u2))
                    + rho2 * (A(uR, u1) + A(u1, uR)))
        + e ** 2 * grad(rho3 * thR)
        + e ** 3 * (rho2 * (A(uR, u2) + A(u2, uR) + A(uR, uR)) + rho3 * (A(uR, u1) + A(u1, uR))
                    + rhoR * (A(uR, u2) + A(u2, uR) + A(u2, u2) + A(uR, uR)))
        + e ** 4 * rho3 * (A(uR, u2) + A(u2, uR) + A(uR, uR))
        + e * grad(rho2 * thR + rhoR * thR)
    )


def eval_G_eps(rhoR: ScalarField, uR: VectorField, thR: ScalarField, lim: LimitingSolution,
               fo: FirstOrderSolution, epsilon: float) -> ScalarField:
    """Nonlinear energy terms of the remainder equations (every term carries epsilon)."""
    e = epsilon
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    d1, d2, dR = div(u1), div(u2), div(uR)
    return (
        e * (rho0 * (A(u2, thR) + A(uR, thR)) + rho2 * A(uR, th0)
             + rhoR * (A(u2, th0) + A(uR, th0) + A(u1, th1)) + rho1 * (A(uR, th1) + A(u1, thR)))
        + e ** 2 * (rho1 * (A(u2, thR) + A(uR, thR)) + rhoR * (A(u2, th1) + A(uR, th1) + A(u1, thR))
                    + rho2 * (A(uR, th1) + A(u1, thR)) + rho3 * A(uR, th0))
        + e ** 3 * (rho2 * (A(u2, thR) + A(uR, thR)) + rho3 * (A(u1, thR) + A(uR, th1))
                    + rhoR * (A(u2, thR) + A(uR, thR)))
        + e ** 4 * rho3 * (A(u2, thR) + A(uR, thR))
        + e * ((rho0 * thR + rhoR * th0) * d2 + (rho0 * thR + rhoR * th0 + rho1 * th1 + rho2 * th0) * dR
               + (rho1 * thR + rhoR * th1) * d1)
        + e ** 2 * ((rho1 * thR + rhoR * th1) * d2 + (rho2 * thR + rhoR * thR) * d1
                    + (rho2 * th1 + rho1 * thR + rhoR * th1 + rho3 * th0) * dR)
        + e ** 3 * ((rho2 * thR + rhoR * thR) * d2 + rho3 * thR * d1 + (rho2 * thR + rhoR * thR + rho3 * th1) * dR)
        + e ** 4 * (rho3 * thR * d2 + rho3 * thR * dR)
    )


def eval_F_tilde(rhoR: ScalarField, uR: VectorField, thR: ScalarField, u_R_tilde: VectorField,
                 theta_R_tilde: ScalarField, lim: LimitingSolution, fo: FirstOrderSolution, epsilon: float,
                 split: bool = False):
    """Linearized momentum terms: ``f1(u_R, theta_R) + f2(rho_R)`` with frozen ``u_R~, theta_R~``.

    With ``split=True`` the pair ``(f1, f2)`` is returned instead of the sum.
    """
    e, uRt, thRt = epsilon, u_R_tilde, theta_R_tilde
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    f1 = (
        e * (rho0 * (A(u2, uR) + A(uR, u2) + A(uRt, uR)) + rho1 * (A(uR, u1) + A(u1, uR)))
        + e ** 2 * (rho1 * (A(uR, u2) + A(u2, uR) + A(uRt, uR)) + rho2 * (A(uR, u1) + A(u1, uR)))
        + e ** 3 * (rho2 * (A(uR, u2) + A(u2, uR) + A(uRt, uR)) + rho3 * (A(uR, u1) + A(u1, uR)))
        + e ** 4 * rho3 * (A(uR, u2) + A(u2, uR) + A(uRt, uR))
        + e * grad(rho2 * thR) + e ** 2 * grad(rho3 * thR)
    )
    f2 = (
        e * rhoR * A(u1, u1)
        + e ** 2 * rhoR * (A(u1, uRt) + A(uRt, u1) + A(u2, u1) + A(u1, u2))
        + e ** 3 * rhoR * (A(uRt, u2) + A(u2, uRt) + A(u2, u2) + A(uRt, uRt))
        + e * grad(rhoR * thRt)
    )
    return (f1, f2) if split else f1 + f2


def eval_G_tilde(rhoR: ScalarField, uR: VectorField, thR: ScalarField, u_R_tilde: VectorField,
                 theta_R_tilde: ScalarField, lim: LimitingSolution, fo: FirstOrderSolution, epsilon: float,
                 split: bool = False):
    """Linearized energy terms: ``g1(u_R, theta_R) + g2(rho_R)`` with frozen ``u_R~, theta_R~``."""
    e, uRt, thRt = epsilon, u_R_tilde, theta_R_tilde
    rho0, rho1, rho2, rho3, u1, u2, th0, th1 = _tiers(lim, fo)
    d1, d2, dR, dRt = div(u1), div(u2), div(uR), div(uRt)
    g1 = (
        e * (rho0 * (A(u2, thR) + A(uRt, thR)) + rho2 * A(uR, th0) + rho1 * (A(uR, th1) + A(u1, thR)))
        + e ** 2 * (rho1 * (A(u2, thR) + A(uRt, thR)) + rho2 * (A(uR, th1) + A(u1, thR)) + rho3 * A(uR, th0))
        + e ** 3 * (rho2 * (A(u2, thR) + A(uRt, thR)) + rho3 * (A(u1, thR) + A(uR, th1)))
        + e * (rho0 * thR * d2 + (rho1 * th1 + rho2 * th0) * dR + rho0 * thR * dRt + rho1 * thR * d1)
        + e ** 2 * (rho1 * thR * d2 + (rho2 * th1 + rho3 * th0) * dR + rho1 * thR * dRt + rho2 * thR * d1)
        + e ** 3 * (rho3 * thR * d1 + rho2 * thR * d2 + rho3 * th1 * dR + rho2 * thR * dRt)
        + e ** 4 * rho3 * (A(u2, thR) + A(uRt, thR))
        + e ** 4 * (rho3 * thR * d2 + rho3 * thR * dRt)
    )
    g2 = (
        e * rhoR * (A(u2, th0) + A(uRt, th0) + A(u1, th1))
        + e ** 2 * rhoR * (A(u2, th1) + A(uRt, th1) + A(u1, thRt))
        + e ** 3 * rhoR * (A(u2, thRt) + A(uRt, thRt))
        + e * rhoR * (th0 * d2 + th0 * dRt + th1 * d1)
        + e ** 2 * rhoR * (th1 * d2 + th1 * dRt + thRt * d1)
        + e ** 3 * rhoR * (thRt * dRt + thRt * d2)
    )
    return (g1, g2) if split else g1 + g2


# ---------------------------------------------------------------------------
# Linearized solver
# ---------------------------------------------------------------------------


@dataclass
class _Frozen:
    """Everything the inner iteration holds fixed."""

    lim: LimitingSolution
    fo: FirstOrderSolution
    src: SourceTerms
    uRt: VectorField
    thRt: ScalarField
    params: Params

    def __post_init__(self):
        e = self.params.epsilon
        self.advecting = self.lim.u1 + e * (self.fo.u2 + self.uRt)
        self.density_sum = self.lim.rho0 + e * self.fo.rho1 + e ** 2 * self.fo.rho2 + e ** 3 * self.fo.rho3
        self.temperature_excess = self.lim.theta0 - 1.0 + e * self.fo.theta1 + e ** 2 * self.thRt
        self.grad_theta0 = grad(self.lim.theta0)
        self.lap_theta0 = laplacian(self.lim.theta0)
        self.div_u1 = div(self.lim.u1)
        self.transport_coef = e ** 2 * (self.params.mu + self.params.zeta) / self.lim.P0


def _energy_rhs(fz: _Frozen, rho: ScalarField, w: VectorField, theta: ScalarField) -> ScalarField:
    """Right-hand side ``R_1`` of ``(kappa/theta0) lap(theta_R) = R_1``."""
    lim, fo, e = fz.lim, fz.fo, fz.params.epsilon
    rho0, th0, P0 = lim.rho0, lim.theta0, lim.P0
    u = w / rho0
    G = eval_G_tilde(rho, u, theta, fz.uRt, fz.thRt, lim, fo, e)
    return (
        -div(rho * fz.advecting) + fz.src.R1 + G / th0 + fz.src.R3
        + fo.P1 / (P0 * th0) * (w.dot(fz.grad_theta0) + th0 * div(w))
        + (rho0 * theta + rho * th0) * fz.div_u1 / th0
        + (w.dot(grad(fo.theta1)) + rho0 * lim.u1.dot(grad(theta))
           + fo.rho1 / rho0 * w.dot(fz.grad_theta0) + rho * lim.u1.dot(fz.grad_theta0)) / th0
    )


def _momentum_rhs(fz: _Frozen, rho: ScalarField, w: VectorField, v: VectorField, theta: ScalarField) -> VectorField:
    """Right-hand side ``R_3`` of ``mu lap(v_R) + grad(P_R) = R_3``."""
    lim, fo, p = fz.lim, fz.fo, fz.params
    e, mu, zeta = p.epsilon, p.mu, p.zeta
    rho0, th0, u1, P0 = lim.rho0, lim.theta0, lim.u1, lim.P0
    F = eval_F_tilde(rho, w / rho0, theta, fz.uRt, fz.thRt, lim, fo, e)
    script_f = P0 * F - P0 * e * grad(rho * fz.thRt + fo.rho2 * theta) - P0 * e ** 2 * grad(fo.rho3 * theta)
    return (
        rho0 * (u1.dot(fz.grad_theta0) * w + th0 * A(u1, w) + th0 * A(w, u1))
        - mu * (th0 - 1.0) * vector_laplacian(v)
        - mu * fz.lap_theta0 * w
        + mu * div(w) * fz.grad_theta0
        - 2.0 * mu * grad_contract(th0, w)
        - zeta * grad(w.dot(fz.grad_theta0))
        + script_f
        + P0 * fz.src.R2
    )


def _pressure_mean(fz: _Frozen, rho: ScalarField, theta_new: ScalarField) -> float:
    """Mean of ``P_R`` that makes the density update mass free."""
    lim, p = fz.lim, fz.params
    e, P0, visc = p.epsilon, lim.P0, p.mu + p.zeta
    return (
        P0 * visc * e * integrate(fz.src.R1 / lim.rho0)
        - P0 / e * integrate(fz.density_sum * theta_new)
        + e * visc * integrate(rho * fz.advecting.dot(fz.grad_theta0))
        - P0 / e * integrate(fz.temperature_excess * rho)
    )


def _zero_walls(w: VectorField) -> VectorField:
    x, y = w.x.values.copy(), w.y.values.copy()
    x[:, [0, -1]] = 0.0
    y[:, [0, -1]] = 0.0
    return VectorField(w.grid, x, y)


def _inner_step(fz: _Frozen, rho, theta, v, q, w, config):
    lim, p = fz.lim, fz.params
    e, P0, grid = p.epsilon, lim.P0, lim.theta0.grid
    zero_trace = np.zeros(grid.nx)
    theta_new = solve_poisson_dirichlet(lim.theta0 * _energy_rhs(fz, rho, w, theta) / p.kappa,
                                        zero_trace, zero_trace, config)
    # the continuum data integrate to zero (all carried velocities are tangential
    # on the walls); removing the O(h^2) quadrature defect keeps every gradient
    neumann_data = -div(rho * fz.advecting) + fz.src.R1
    q_new = solve_poisson_neumann(e * (neumann_data - mean(neumann_data)), config)
    # the Neumann condition makes the wall-normal part of grad(q) vanish; only
    # the tangential part has to be cancelled by v_R
    dqx = grad(q_new).x.values
    bottom = np.vstack([-dqx[:, 0], np.zeros(grid.nx)])
    top = np.vstack([-dqx[:, -1], np.zeros(grid.nx)])
    forcing = _momentum_rhs(fz, rho, w, v, theta)
    # mu lap(v) + grad(P_R) = R_3 is the Stokes problem for (v, -P_R) with forcing -R_3
    stokes = solve_stokes(p.mu, -forcing, ScalarField.zeros(grid), bottom, top,
                          -_pressure_mean(fz, rho, theta_new), config=config)
    v_new, PR = stokes.velocity, -stokes.pressure
    w_new = _zero_walls(v_new + grad(q_new))
    rhs = (-e / P0 * PR + fz.transport_coef * P0 / lim.rho0 * fz.src.R1
           - fz.density_sum * theta_new - fz.temperature_excess * rho
           + fz.transport_coef * rho * fz.advecting.dot(fz.grad_theta0))
    rho_new = solve_steady_transport(fz.transport_coef, fz.advecting, lim.theta0, rhs, config)
    return rho_new, theta_new, v_new, q_new, w_new, PR


def _change(a, b) -> float:
    return sum(sobolev_norm(x - y, 2) for x, y in zip(a, b))


def solve_linearized_remainder(lim: LimitingSolution, fo: FirstOrderSolution, u_R_tilde: VectorField,
                               theta_R_tilde: ScalarField, params: Params, sources: SourceTerms | None = None,
                               omega: float = 1.0, config: LinearSolverConfig = DEFAULT_CONFIG) -> RemainderState:
    """Inner iteration for the linearized remainder system.

    Starting from the zero state, each sweep solves for ``theta_R`` (Dirichlet
    Poisson), ``q_R`` (Neumann Poisson), ``(v_R, P_R)`` (Stokes, with the mean
    of ``P_R`` fixed so that the density update stays mass free) and ``rho_R``
    (steady transport).  Updates are relaxed with factor ``omega``; if the
    iterate change grows the factor falls back to 0.5 once.  Stops when the H^2
    change of ``(rho_R, w_R, theta_R)`` is below ``params.fp_tol``.
    """
    if not 0.0 < omega <= 1.0:
        raise ValueError("relaxation factor must lie in (0, 1]")
    grid = lim.theta0.grid
    if sources is None:
        sources = assemble_R_terms(assemble_sources(lim, fo, params), lim, fo, u_R_tilde, params)
    fz = _Frozen(lim, fo, sources, u_R_tilde, theta_R_tilde, params)
    rho, theta, q = ScalarField.zeros(grid), ScalarField.zeros(grid), ScalarField.zeros(grid)
    v = w = VectorField.zeros(grid)
    PR = ScalarField.zeros(grid)
    history: list[float] = []
    for it in range(1, params.fp_max_iter + 1):
        rho_n, theta_n, v_n, q_n, w_n, PR = _inner_step(fz, rho, theta, v, q, w, config)
        if omega < 1.0:
            rho_n = omega * rho_n + (1 - omega) * rho
            theta_n = omega * theta_n + (1 - omega) * theta
            v_n = omega * v_n + (1 - omega) * v
            q_n = omega * q_n + (1 - omega) * q
            w_n = _zero_walls(v_n + grad(q_n))
        change = _change((rho_n, w_n, theta_n), (rho, w, theta))
        history.append(change)
        rho, theta, v, q, w = rho_n, theta_n, v_n, q_n, w_n
        if not math.isfinite(change) or change > 1e8:
            raise FixedPointDivergence("linearized remainder iteration diverged", history)
        if change < params.fp_tol:
            break
        if omega == 1.0 and it >= 3 and history[-1] > history[-2] > history[-3]:
            omega = 0.5
    else:
        raise FixedPointDivergence(
            f"linearized remainder iteration did not converge in {params.fp_max_iter} iterations", history)
    uR = w / lim.rho0
    PR_tilde = PR - params.mu * lim.theta0 * div(w)
    return RemainderState(rho, theta, uR, w, v, q, PR, PR_tilde, params.epsilon, it, history, omega)


# ---------------------------------------------------------------------------
# Outer map
# ---------------------------------------------------------------------------


@dataclass
class RemainderRun:
    """Outer-iteration record of :func:`solve_remainder_nonlinear`."""

    changes: list = field(default_factory=list)
    norms: list = field(default_factory=list)
    radius: float = 0.0
    inner_iterations: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.changes)


def solve_remainder_nonlinear(lim: LimitingSolution, params: Params, radius: float | None = None,
                              radius_factor: float = 10.0, config: LinearSolverConfig = DEFAULT_CONFIG,
                              record: RemainderRun | None = None) -> tuple[FirstOrderSolution, RemainderState]:
    """Outer fixed point ``(u_R~, theta_R~) -> (u_R, theta_R)`` coupling all tiers.

    Each outer step re-solves the first-order tier with the current ``u_R~``,
    rebuilds ``rho2, rho3`` and the sources, and runs the linearized solver.
    Stops when the H^1 x H^1 change of ``(u_R, theta_R)`` is below
    ``params.fp_tol``.  Iterates must stay in the ball
    ``||u_R||_K + ||theta_R||_H3 <= radius`` (default ``radius_factor`` times
    the first iterate's value), otherwise :class:`BallEscape` is raised.
    """
    grid = lim.theta0.grid
    record = record if record is not None else RemainderRun()
    uRt, thRt = VectorField.zeros(grid), ScalarField.zeros(grid)
    for _ in range(params.fp_max_iter):
        fo = solve_first_order(lim, uRt, params, config)
        sources = assemble_R_terms(assemble_sources(lim, fo, params), lim, fo, uRt, params)
        state = solve_linearized_remainder(lim, fo, uRt, thRt, params, sources, config=config)
        change = sobolev_norm(state.uR - uRt, 1) + sobolev_norm(state.thetaR - thRt, 1)
        ball = k_norm(state.uR, params.epsilon) + sobolev_norm(state.thetaR, 3)
        if radius is None:
            radius = radius_factor * ball
        record.changes.append(change)
        record.norms.append(ball)
        record.radius = radius
        record.inner_iterations.append(state.iterations)
        if not math.isfinite(change) or ball > radius:
            raise BallEscape(f"remainder iterate left the ball: norm {ball:.3e} > radius {radius:.3e}",
                             list(record.norms), radius)
        uRt, thRt = state.uR, state.thetaR
        if change < params.fp_tol:
            return fo, state
    raise FixedPointDivergence(
        f"remainder outer iteration did not converge in {params.fp_max_iter} iterations", list(record.changes))


# ---------------------------------------------------------------------------
# Residuals and diagnostics
# ---------------------------------------------------------------------------


def skew_symmetry_defect(rho0: ScalarField, theta0: ScalarField, uR: VectorField, rhoR: ScalarField,
                         thetaR: ScalarField) -> float:
    """``|integrate(rho0 u_R.grad(s) + div(rho0 u_R) s)|`` with ``s = rho0*theta_R + rho_R*theta0``.

    The singular terms of the remainder equations cancel through this
    integration-by-parts identity when ``u_R`` vanishes on the walls; the
    discrete value measures the summation-by-parts defect of the stencils.
    """
    s = rho0 * thetaR + rhoR * theta0
    w = rho0 * uR
    return abs(integrate(w.dot(grad(s)) + div(w) * s))


def _interior(grid) -> ScalarField:
    return ScalarField(grid, (~grid.wall_mask()).astype(float))


def _remainder_residuals(state: RemainderState, lim: LimitingSolution, fo: FirstOrderSolution, params: Params,
                         F: VectorField, G: ScalarField, src: SourceTerms, uRt: VectorField) -> dict:
    e, mu, zeta, kappa = params.epsilon, params.mu, params.zeta, params.kappa
    rho0, th0, u1 = lim.rho0, lim.theta0, lim.u1
    rho, u, th = state.rhoR, state.uR, state.thetaR
    interior = _interior(th0.grid)
    singular = rho0 * th + rho * th0
    continuity = div(rho * (u1 + e * (fo.u2 + uRt))) + div(rho0 * u) / e - src.R1
    momentum = (mu * vector_laplacian(u) + zeta * grad(div(u)) - grad(singular) / e
                - rho0 * (A(u1, u) + A(u, u1)) - grad(rho * fo.theta1 + fo.rho1 * th) - F - src.R2)
    energy = (kappa / th0 * laplacian(th) - div(rho0 * u) / e - fo.P1 / th0 * div(u)
              - singular * div(u1) / th0 - G / th0 - src.R3
              - (rho0 * (A(u, fo.theta1) + A(u1, th)) + fo.rho1 * A(u, th0) + rho * A(u1, th0)) / th0)
    return {
        "continuity": l2_norm(continuity * interior),
        "momentum": l2_norm(momentum * interior),
        "energy": l2_norm(energy * interior),
        "mass": abs(integrate(rho)),
        "skew": skew_symmetry_defect(rho0, th0, u, rho, th),
    }


def residual_linearized(state: RemainderState, lim: LimitingSolution, fo: FirstOrderSolution,
                        u_R_tilde: VectorField, theta_R_tilde: ScalarField, params: Params) -> dict:
    """L2 residuals (interior rows) of the linearized remainder equations plus diagnostics."""
    e = params.epsilon
    src = assemble_R_terms(assemble_sources(lim, fo, params), lim, fo, u_R_tilde, params)
    F = eval_F_tilde(state.rhoR, state.uR, state.thetaR, u_R_tilde, theta_R_tilde, lim, fo, e)
    G = eval_G_tilde(state.rhoR, state.uR, state.thetaR, u_R_tilde, theta_R_tilde, lim, fo, e)
    report = _remainder_residuals(state, lim, fo, params, F, G, src, u_R_tilde)
    report["helmholtz"] = l2_norm(_zero_walls(state.wR - state.vR - grad(state.qR)))
    return report


def residual_nonlinear(state: RemainderState, lim: LimitingSolution, fo: FirstOrderSolution,
                       params: Params) -> dict:
    """L2 residuals (interior rows) of the nonlinear remainder equations plus diagnostics."""
    e = params.epsilon
    src = assemble_R_terms(assemble_sources(lim, fo, params), lim, fo, state.uR, params)
    F = eval_F_eps(state.rhoR, state.uR, state.thetaR, lim, fo, e)
    G = eval_G_eps(state.rhoR, state.uR, state.thetaR, lim, fo, e)
    return _remainder_residuals(state, lim, fo, params, F, G, src, state.uR)
