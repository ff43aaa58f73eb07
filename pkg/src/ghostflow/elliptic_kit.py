"""Linear subproblem solvers: Dirichlet/Neumann Poisson, Stokes, steady transport.

All solvers assemble sparse matrices from :mod:`ghostflow.grid_core` and
solve them with a cached sparse LU factorization (``method="direct"``) or
ILU-preconditioned GMRES (``method="iterative"``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityViolation, LinearSolverError, SmallnessViolation
from .grid_core import Grid, ScalarField, VectorField, div, grad, integrate, operators, pressure_dissipation

COMPATIBILITY_TOL = 1e-8
RHIE_CHOW_ALPHA = 0.25


@dataclass(frozen=True)
class LinearSolverConfig:
    """Linear solver selection; ``tol`` is a relative residual tolerance."""

    method: str = "direct"
    tol: float = 1e-10
    max_iter: int = 2000

    def __post_init__(self):
        if self.method not in ("direct", "iterative"):
            raise ValueError("method must be 'direct' or 'iterative'")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


DEFAULT_CONFIG = LinearSolverConfig()


@dataclass
class StokesSolution:
    velocity: VectorField
    pressure: ScalarField
    residual_norm: float
    multiplier: float = 0.0
    stabilization: float = 0.0


# ---------------------------------------------------------------------------
# Generic linear solve
# ---------------------------------------------------------------------------


def _relative_residual(mat, x, b) -> float:
    bnorm = np.linalg.norm(b)
    return float(np.linalg.norm(mat @ x - b) / (bnorm if bnorm > 0 else 1.0))


def _solve(mat: sp.csc_matrix, lu, b: np.ndarray, config: LinearSolverConfig) -> tuple[np.ndarray, float]:
    if config.method == "direct":
        x = lu().solve(b)
        x += lu().solve(b - mat @ x)  # one step of iterative refinement
        return x, _relative_residual(mat, x, b)
    try:
        ilu = spla.spilu(mat, drop_tol=1e-5, fill_factor=20)
        prec = spla.LinearOperator(mat.shape, ilu.solve)
    except RuntimeError:
        prec = None
    x, info = spla.gmres(mat, b, M=prec, rtol=config.tol, atol=0.0, maxiter=config.max_iter, restart=100)
    res = _relative_residual(mat, x, b)
    if info != 0 and res > config.tol:
        raise LinearSolverError(f"GMRES did not converge (info={info}, relative residual {res:.3e})", res)
    return x, res


class _Factorization:
    """Lazily computed sparse LU of a fixed matrix."""

    def __init__(self, mat: sp.csc_matrix):
        self.mat = mat
        self._lu = None

    def __call__(self):
        if self._lu is None:
            self._lu = spla.splu(self.mat)
        return self._lu


# ---------------------------------------------------------------------------
# Poisson problems
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _dirichlet_system(grid: Grid) -> _Factorization:
    ops = operators(grid)
    mat = ops.lap.tolil()
    for k in ops.wall:
        mat.rows[k] = [k]
        mat.data[k] = [1.0]
    return _Factorization(mat.tocsc())


def solve_poisson_dirichlet(rhs: ScalarField, bc_bottom, bc_top, config: LinearSolverConfig = DEFAULT_CONFIG) -> ScalarField:
    """Solve ``laplacian(u) = rhs`` with ``u = bc`` on the walls, periodic in x."""
    grid = rhs.grid
    b = rhs.values.copy()
    b[:, 0] = np.broadcast_to(np.asarray(bc_bottom, dtype=float), grid.nx)
    b[:, -1] = np.broadcast_to(np.asarray(bc_top, dtype=float), grid.nx)
    fac = _dirichlet_system(grid)
    x, _ = _solve(fac.mat, fac, b.ravel(), config)
    return ScalarField(grid, x.reshape(grid.shape))


@lru_cache(maxsize=8)
def _neumann_system(grid: Grid) -> _Factorization:
    # bordered system [L 1; w^T 0]: the multiplier absorbs the (projected)
    # compatibility defect and the last row fixes the zero mean
    ops = operators(grid)
    n = grid.size
    ones = sp.csc_matrix(np.ones((n, 1)))
    w = sp.csr_matrix(ops.weights.reshape(1, n))
    mat = sp.bmat([[ops.neumann_lap, ones], [w, None]], format="csc")
    return _Factorization(mat)


def solve_poisson_neumann(rhs: ScalarField, config: LinearSolverConfig = DEFAULT_CONFIG,
                          compatibility_tol: float = COMPATIBILITY_TOL) -> ScalarField:
    """Solve ``laplacian(q) = rhs`` with zero normal derivative and ``integrate(q) = 0``.

    The wall rows use the finite-volume (half-cell) balance, so the discrete
    operator maps onto exactly the fields with zero integral.
    """
    grid = rhs.grid
    total = integrate(rhs)
    if abs(total) >= compatibility_tol:
        raise CompatibilityViolation(f"Neumann data is incompatible: integral of rhs = {total:.3e}", total)
    b = (rhs.values - total / grid.area).ravel()
    fac = _neumann_system(grid)
    x, _ = _solve(fac.mat, fac, np.append(b, 0.0), config)
    return ScalarField(grid, x[:-1].reshape(grid.shape))


# ---------------------------------------------------------------------------
# Stokes
# ---------------------------------------------------------------------------


def default_stabilization(grid: Grid, mu: float) -> float:
    """Rhie-Chow coefficient ``alpha*hx*hy/mu`` used by :func:`solve_stokes`."""
    return RHIE_CHOW_ALPHA * grid.hx * grid.hy / mu


@lru_cache(maxsize=12)
def _stokes_system(grid: Grid, mu: float, tau: float) -> _Factorization:
    ops = operators(grid)
    n = grid.size
    interior = np.zeros(n)
    interior[ops.interior] = 1.0
    wall = 1.0 - interior
    keep, pin = sp.diags(interior), sp.diags(wall)
    visc = keep @ (-mu * ops.lap) + pin
    mat = sp.bmat(
        [
            [visc, None, keep @ ops.dx, None],
            [None, visc, keep @ ops.dy, None],
            [ops.dx, ops.dy, -tau * ops.pressure_dissipation, sp.csc_matrix(np.ones((n, 1)))],
            [None, None, sp.csr_matrix(ops.weights.reshape(1, n)), None],
        ],
        format="csc",
    )
    return _Factorization(mat)


def _wall_vector(bc, nx: int) -> np.ndarray:
    arr = np.asarray(bc, dtype=float)
    if arr.shape == (2,):
        arr = np.repeat(arr[:, None], nx, axis=1)
    if arr.shape == (nx, 2):
        arr = arr.T
    if arr.shape != (2, nx):
        raise ValueError(f"wall velocity data must have shape (2, nx); got {arr.shape}")
    return arr


def solve_stokes(mu: float, forcing: VectorField, div_data: ScalarField, bc_bottom, bc_top,
                 pressure_mean: float = 0.0, stabilization: float | None = None,
                 config: LinearSolverConfig = DEFAULT_CONFIG) -> StokesSolution:
    """Solve ``-mu*lap(v) + grad(p) = forcing``, ``div v = div_data`` with wall data.

    The continuity rows use the pointwise divergence :func:`div` plus a
    Rhie-Chow term ``-stabilization*pressure_dissipation(p)``, which is
    O(h^4) on smooth pressures and removes the collocated checkerboard mode.
    An appended row imposes ``integrate(p) = pressure_mean``; a scalar
    multiplier added to every continuity row absorbs the O(h^2) defect of the
    discrete Gauss identity (reported as ``multiplier``).  The discrete
    continuity ``div(v) - stabilization*pressure_dissipation(p) + multiplier
    = div_data`` holds to solver tolerance, see :func:`stokes_continuity_defect`.
    """
    if not mu > 0:
        raise ValueError("viscosity must be positive")
    grid = forcing.grid
    nx, n = grid.nx, grid.size
    bottom, top = _wall_vector(bc_bottom, nx), _wall_vector(bc_top, nx)
    flux = grid.hx * (top[1].sum() - bottom[1].sum())
    total = integrate(div_data)
    if abs(total - flux) > COMPATIBILITY_TOL * max(1.0, abs(total), abs(flux)):
        raise CompatibilityViolation(
            f"Stokes data is incompatible: integral of div data {total:.3e} vs wall flux {flux:.3e}", total - flux)
    tau = default_stabilization(grid, mu) if stabilization is None else float(stabilization)

    fx, fy = forcing.x.values.copy(), forcing.y.values.copy()
    fx[:, 0], fy[:, 0] = bottom
    fx[:, -1], fy[:, -1] = top
    b = np.concatenate([fx.ravel(), fy.ravel(), div_data.flat(), [pressure_mean]])
    fac = _stokes_system(grid, float(mu), tau)
    x, res = _solve(fac.mat, fac, b, config)
    vx, vy, p = (x[k * n:(k + 1) * n].reshape(grid.shape) for k in range(3))
    return StokesSolution(VectorField(grid, vx, vy), ScalarField(grid, p), res, float(x[-1]), tau)


def stokes_continuity_defect(sol: StokesSolution, div_data: ScalarField) -> ScalarField:
    """Residual of the stabilized discrete continuity equation solved by :func:`solve_stokes`."""
    return div(sol.velocity) - sol.stabilization * pressure_dissipation(sol.pressure) + sol.multiplier - div_data


# ---------------------------------------------------------------------------
# Steady transport
# ---------------------------------------------------------------------------


def transport_operator(flux_velocity: VectorField) -> sp.csr_matrix:
    """Matrix ``A`` with ``A @ rho`` the first-order upwind divergence of ``rho*a``.

    Face velocities are node averages; the upwind density is taken on each
    face.  Wall rows are half cells whose outer flux is ``a_y*rho`` at the
    wall node, so ``integrate(A @ rho)`` equals the wall outflow exactly.
    """
    grid = flux_velocity.grid
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    ax, ay = flux_velocity.x.values, flux_velocity.y.values
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []

    def add_face(left, right, speed, width_left, width_right):
        # flux from node "left" to node "right" through the shared face
        up = np.where(speed > 0, left, right)
        for node, sign, width in ((left, 1.0, width_left), (right, -1.0, width_right)):
            rows.append(node.ravel())
            cols.append(up.ravel())
            vals.append((sign * speed / width).ravel())

    # x faces i+1/2 (periodic)
    right = np.roll(idx, -1, axis=0)
    speed_x = 0.5 * (ax + np.roll(ax, -1, axis=0))
    add_face(idx, right, speed_x, hx, hx)
    # y faces j+1/2
    width = np.full(ny, hy)
    width[[0, -1]] = 0.5 * hy
    speed_y = 0.5 * (ay[:, :-1] + ay[:, 1:])
    add_face(idx[:, :-1], idx[:, 1:], speed_y, np.broadcast_to(width[:-1], speed_y.shape), np.broadcast_to(width[1:], speed_y.shape))
    # wall fluxes: outward normal is -y at the bottom, +y at the top
    rows += [idx[:, 0], idx[:, -1]]
    cols += [idx[:, 0], idx[:, -1]]
    vals += [-ay[:, 0] / (0.5 * hy), ay[:, -1] / (0.5 * hy)]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(grid.size, grid.size))


def transport_smallness(coef: float, flux_velocity: VectorField) -> float:
    """Smallness measure ``coef * (max|a| + max|grad a|)`` of the transport operator."""
    g = [grad(flux_velocity.x), grad(flux_velocity.y)]
    w1inf = flux_velocity.max_abs() + max(c.max_abs() for gc in g for c in gc.components)
    return abs(coef) * w1inf


def solve_steady_transport(coef: float, advecting: VectorField, weight: ScalarField, rhs: ScalarField,
                           config: LinearSolverConfig = DEFAULT_CONFIG, smallness_bound: float = 0.5) -> ScalarField:
    """Solve ``rho + coef*div(rho*weight*advecting) = rhs`` with upwinded fluxes.

    Raises :class:`SmallnessViolation` unless
    ``coef*||weight*advecting||_{W^{1,inf}} < smallness_bound``; under that
    condition the upwind system is an M-matrix perturbation of the identity.
    """
    grid = rhs.grid
    if coef == 0.0:
        return rhs.copy()
    a = advecting * weight
    measure = transport_smallness(coef, a)
    if measure >= smallness_bound:
        raise SmallnessViolation(f"transport smallness check failed: {measure:.3e} >= {smallness_bound}", measure)
    mat = (sp.identity(grid.size, format="csr") + coef * transport_operator(a)).tocsc()
    x, res = _solve(mat, _Factorization(mat), rhs.flat(), config)
    return ScalarField(grid, x.reshape(grid.shape))
