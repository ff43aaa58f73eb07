"""Discrete geometry, finite-difference operators, quadrature and norms.

The computational domain is the periodic channel ``[0, lx) x [0, ly]``.  The
x-direction is periodic with ``nx`` nodes ``x_i = i*hx``; the y-direction has
``ny`` nodes ``y_j = j*hy`` including both walls.  Nodal arrays are stored
with shape ``(nx, ny)`` and flattened in C order (index ``i*ny + j``).

Two families of divergence are provided:

* :func:`div` -- second-order central differences in the interior and
  one-sided second-order differences on the wall rows (a pointwise
  approximation);
* :func:`flux_div` -- the finite-volume divergence of node-averaged face
  fluxes, which coincides with :func:`div` in the interior but uses half-cell
  balances on the wall rows.  It satisfies the discrete Gauss identity
  ``integrate(flux_div(F)) = sum_x hx*(F_y(top) - F_y(bottom))`` exactly, which
  is what makes Neumann solvability and mass conservation hold to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

Number = Union[int, float, np.floating]


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Collocated grid on the periodic channel."""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("grid sizes must be integers")
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid too small: nx={self.nx}, ny={self.ny} (need >= 8)")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.hx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.hy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodal coordinate arrays ``(X, Y)`` of shape ``(nx, ny)``."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def area(self) -> float:
        return self.lx * self.ly

    def wall_mask(self) -> np.ndarray:
        """Boolean ``(nx, ny)`` mask of the wall rows ``j = 0`` and ``j = ny-1``."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[:, 0] = True
        mask[:, -1] = True
        return mask


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


def _values_of(other, grid: Grid):
    if isinstance(other, ScalarField):
        if other.grid != grid:
            raise ValueError("fields live on different grids")
        return other.values
    if isinstance(other, (int, float, np.floating, np.integer)):
        return float(other)
    if isinstance(other, np.ndarray):
        return other
    return None


class ScalarField:
    """Nodal scalar field with elementwise arithmetic."""

    __slots__ = ("grid", "values")
    __array_priority__ = 1000

    def __init__(self, grid: Grid, values):
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 0:
            vals = np.full(grid.shape, float(vals))
        elif vals.shape != grid.shape:
            vals = vals.reshape(grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("ScalarField values must be finite")
        self.grid = grid
        self.values = vals

    # constructors -----------------------------------------------------------
    @classmethod
    def zeros(cls, grid: Grid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ScalarField":
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(fn(X, Y), grid.shape))

    # helpers ----------------------------------------------------------------
    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())

    # arithmetic -------------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, VectorField):
            return NotImplemented
        vals = _values_of(other, self.grid)
        if vals is None:
            return NotImplemented
        return ScalarField(self.grid, op(self.values, vals))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __radd__(self, other):
        return self._binary(other, lambda a, b: b + a)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._binary(other, np.multiply)

    def __rmul__(self, other):
        return self._binary(other, lambda a, b: b * a)

    def __truediv__(self, other):
        return self._binary(other, np.divide)

    def __rtruediv__(self, other):
        return self._binary(other, lambda a, b: b / a)

    def __pow__(self, power):
        return ScalarField(self.grid, self.values ** power)

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __repr__(self) -> str:
        return f"ScalarField(grid={self.grid.nx}x{self.grid.ny}, range=[{self.min():.4g}, {self.max():.4g}])"


class VectorField:
    """Nodal vector field ``(x, y)``: x is tangential to the walls, y wall-normal."""

    __slots__ = ("grid", "x", "y")
    __array_priority__ = 1000

    def __init__(self, grid: Grid, x, y):
        self.grid = grid
        self.x = x if isinstance(x, ScalarField) else ScalarField(grid, x)
        self.y = y if isinstance(y, ScalarField) else ScalarField(grid, y)
        if self.x.grid != grid or self.y.grid != grid:
            raise ValueError("components live on a different grid")

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, fx, fy) -> "VectorField":
        return cls(grid, ScalarField.from_function(grid, fx), ScalarField.from_function(grid, fy))

    @property
    def components(self) -> tuple[ScalarField, ScalarField]:
        return (self.x, self.y)

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.x.copy(), self.y.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.x.flat(), self.y.flat()])

    def dot(self, other: "VectorField") -> ScalarField:
        return self.x * other.x + self.y * other.y

    def max_abs(self) -> float:
        return max(self.x.max_abs(), self.y.max_abs())

    def _binary(self, other, op):
        if isinstance(other, VectorField):
            return VectorField(self.grid, op(self.x, other.x), op(self.y, other.y))
        if isinstance(other, (ScalarField, int, float, np.floating, np.integer)):
            return VectorField(self.grid, op(self.x, other), op(self.y, other))
        return NotImplemented

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b)

    def __rsub__(self, other):
        return self._binary(other, lambda a, b: b - a)

    def __mul__(self, other):
        if isinstance(other, VectorField):
            return NotImplemented
        return self._binary(other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, VectorField):
            return NotImplemented
        return self._binary(other, lambda a, b: a / b)

    def __neg__(self):
        return VectorField(self.grid, -self.x, -self.y)

    def __repr__(self) -> str:
        return f"VectorField(grid={self.grid.nx}x{self.grid.ny}, max|v|={self.max_abs():.4g})"


# ---------------------------------------------------------------------------
# Wall data
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WallData:
    """Wall temperatures on both walls plus the slip coefficient ``h(T)``.

    ``h_tag`` selects the slip-coefficient family: ``"constant"`` gives
    ``h(T) = c`` with ``h_params = (c,)``; ``"power"`` gives ``h(T) = c*T**p``
    with ``h_params = (c, p)``.
    """

    t_w_bottom: np.ndarray
    t_w_top: np.ndarray
    grid: Grid
    h_tag: str = "constant"
    h_params: tuple = (1.0,)

    def __post_init__(self):
        bottom = np.asarray(self.t_w_bottom, dtype=float).copy()
        top = np.asarray(self.t_w_top, dtype=float).copy()
        if bottom.shape != (self.grid.nx,) or top.shape != (self.grid.nx,):
            raise ValueError("wall temperature arrays must be 1D of length grid.nx")
        if not (np.all(np.isfinite(bottom)) and np.all(np.isfinite(top))):
            raise ValueError("wall temperatures must be finite")
        if bottom.min() <= 0 or top.min() <= 0:
            raise ValueError("wall temperatures must be positive")
        if self.h_tag not in ("constant", "power"):
            raise ValueError(f"unknown h tag {self.h_tag!r}")
        bottom.setflags(write=False)
        top.setflags(write=False)
        object.__setattr__(self, "t_w_bottom", bottom)
        object.__setattr__(self, "t_w_top", top)
        object.__setattr__(self, "h_params", tuple(float(p) for p in self.h_params))

    @classmethod
    def cosine(cls, grid: Grid, delta: float, h_tag: str = "constant", h_params: tuple = (1.0,)) -> "WallData":
        """In-phase profile ``T_w = 1 + delta*cos(2*pi*x/lx)`` on both walls."""
        profile = 1.0 + delta * np.cos(2.0 * np.pi * grid.x / grid.lx)
        return cls(profile, profile.copy(), grid, h_tag, h_params)

    @property
    def delta(self) -> float:
        """Wall oscillation ``max |T_w - 1|`` over both walls."""
        return float(max(np.abs(self.t_w_bottom - 1.0).max(), np.abs(self.t_w_top - 1.0).max()))

    def h(self, temperature: np.ndarray) -> np.ndarray:
        t = np.asarray(temperature, dtype=float)
        if self.h_tag == "constant":
            return np.full_like(t, self.h_params[0])
        c, p = self.h_params
        return c * t ** p

    def side(self, side: str) -> np.ndarray:
        if side == "bottom":
            return self.t_w_bottom
        if side == "top":
            return self.t_w_top
        raise ValueError("side must be 'bottom' or 'top'")

    def slip_velocity(self, side: str) -> np.ndarray:
        """Tangential wall slip ``h(T_w) dT_w/dx`` (to be multiplied by epsilon)."""
        return self.h(self.side(side)) * tangential_wall_derivative(self, side)


def tangential_wall_derivative(walls: WallData, side: str) -> np.ndarray:
    """Periodic central difference of ``T_w`` along the given wall."""
    t = walls.side(side)
    hx = walls.grid.hx
    return (np.roll(t, -1) - np.roll(t, 1)) / (2.0 * hx)


# ---------------------------------------------------------------------------
# Sparse operator matrices
# ---------------------------------------------------------------------------


def _periodic_first(n: int, h: float) -> sp.csr_matrix:
    off = np.full(n, 1.0 / (2 * h))
    m = sp.diags([off[:-1], -off[:-1]], [1, -1], shape=(n, n), format="lil")
    m[0, n - 1] = -1.0 / (2 * h)
    m[n - 1, 0] = 1.0 / (2 * h)
    return m.tocsr()


def _periodic_second(n: int, h: float) -> sp.csr_matrix:
    m = sp.diags([np.full(n - 1, 1.0), np.full(n, -2.0), np.full(n - 1, 1.0)], [-1, 0, 1], shape=(n, n), format="lil")
    m[0, n - 1] = 1.0
    m[n - 1, 0] = 1.0
    return (m / h ** 2).tocsr()


def _wall_first(n: int, h: float) -> sp.csr_matrix:
    m = sp.lil_matrix((n, n))
    for j in range(1, n - 1):
        m[j, j - 1] = -0.5 / h
        m[j, j + 1] = 0.5 / h
    m[0, 0:3] = np.array([-3.0, 4.0, -1.0]) / (2 * h)
    m[n - 1, n - 3:n] = np.array([1.0, -4.0, 3.0]) / (2 * h)
    return m.tocsr()


def _wall_second(n: int, h: float) -> sp.csr_matrix:
    m = sp.lil_matrix((n, n))
    for j in range(1, n - 1):
        m[j, j - 1:j + 2] = np.array([1.0, -2.0, 1.0]) / h ** 2
    m[0, 0:4] = np.array([2.0, -5.0, 4.0, -1.0]) / h ** 2
    m[n - 1, n - 4:n] = np.array([-1.0, 4.0, -5.0, 2.0]) / h ** 2
    return m.tocsr()


def _wall_flux_first(n: int, h: float) -> sp.csr_matrix:
    """1D finite-volume derivative: central inside, half-cell balance at ends."""
    m = sp.lil_matrix((n, n))
    for j in range(1, n - 1):
        m[j, j - 1] = -0.5 / h
        m[j, j + 1] = 0.5 / h
    m[0, 0:2] = np.array([-1.0, 1.0]) / h
    m[n - 1, n - 2:n] = np.array([-1.0, 1.0]) / h
    return m.tocsr()


def _wall_neumann_second(n: int, h: float) -> sp.csr_matrix:
    """1D finite-volume second derivative with zero flux through the ends."""
    m = sp.lil_matrix((n, n))
    for j in range(1, n - 1):
        m[j, j - 1:j + 2] = np.array([1.0, -2.0, 1.0]) / h ** 2
    m[0, 0:2] = np.array([-2.0, 2.0]) / h ** 2
    m[n - 1, n - 2:n] = np.array([2.0, -2.0]) / h ** 2
    return m.tocsr()


@dataclass(frozen=True)
class Operators:
    """Sparse matrices acting on C-order flattened nodal arrays."""

    dx: sp.csr_matrix
    dy: sp.csr_matrix
    lap: sp.csr_matrix
    flux_dy: sp.csr_matrix
    neumann_lap: sp.csr_matrix
    pressure_dissipation: sp.csr_matrix
    weights: np.ndarray = field(repr=False)
    wall: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)


@lru_cache(maxsize=16)
def operators(grid: Grid) -> Operators:
    """Build (and cache) the sparse operator set for ``grid``."""
    nx, ny, hx, hy = grid.nx, grid.ny, grid.hx, grid.hy
    ix, iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")
    d1x, d2x = _periodic_first(nx, hx), _periodic_second(nx, hx)
    d1y, d2y = _wall_first(ny, hy), _wall_second(ny, hy)
    dx = sp.kron(d1x, iy, format="csr")
    dy = sp.kron(ix, d1y, format="csr")
    lap = (sp.kron(d2x, iy) + sp.kron(ix, d2y)).tocsr()
    flux_dy = sp.kron(ix, _wall_flux_first(ny, hy), format="csr")
    neumann_lap = (sp.kron(d2x, iy) + sp.kron(ix, _wall_neumann_second(ny, hy))).tocsr()

    # Rhie-Chow pressure dissipation: divergence of the face-jump corrections
    # c_f = (p_b - p_a)/h - (Gp_a + Gp_b)/2, with no flux through the walls.
    shift = sp.kron(_periodic_shift(nx), iy, format="csr")  # f_{i+1}
    eye = sp.identity(nx * ny, format="csr")
    face_x = (shift - eye) / hx - 0.5 * (eye + shift) @ dx  # c_{i+1/2}
    sx = (face_x - shift.T @ face_x) / hx

    nf = ny - 1  # y faces j+1/2, j = 0..ny-2
    faces = np.arange(nf)
    jump = sp.csr_matrix((np.r_[-np.ones(nf), np.ones(nf)] / hy, (np.r_[faces, faces], np.r_[faces, faces + 1])), shape=(nf, ny))
    avg = sp.csr_matrix((np.full(2 * nf, 0.5), (np.r_[faces, faces], np.r_[faces, faces + 1])), shape=(nf, ny))
    face_y = jump - avg @ d1y
    balance = sp.csr_matrix((np.r_[np.ones(nf), -np.ones(nf)], (np.r_[faces, faces + 1], np.r_[faces, faces])), shape=(ny, nf))
    inv_width = np.full(ny, 1.0 / hy)
    inv_width[[0, -1]] = 2.0 / hy
    sy = sp.kron(ix, sp.diags(inv_width) @ balance @ face_y)
    pressure_dissipation = (sx + sy).tocsr()

    w = np.full(grid.shape, hx * hy)
    w[:, 0] *= 0.5
    w[:, -1] *= 0.5
    wall = np.flatnonzero(grid.wall_mask().ravel())
    interior = np.flatnonzero(~grid.wall_mask().ravel())
    return Operators(dx, dy, lap, flux_dy, neumann_lap, pressure_dissipation, w.ravel(), wall, interior)


def _periodic_shift(n: int) -> sp.csr_matrix:
    """Matrix S with (S f)_i = f_{i+1 mod n}."""
    rows = np.arange(n)
    return sp.csr_matrix((np.ones(n), (rows, (rows + 1) % n)), shape=(n, n))


# ---------------------------------------------------------------------------
# Differential operators on fields
# ---------------------------------------------------------------------------


def _apply(mat: sp.spmatrix, f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, (mat @ f.flat()).reshape(f.grid.shape))


def grad(f: ScalarField) -> VectorField:
    """Second-order gradient: periodic central in x, one-sided at the walls in y."""
    ops = operators(f.grid)
    return VectorField(f.grid, _apply(ops.dx, f), _apply(ops.dy, f))


def div(v: VectorField) -> ScalarField:
    """Pointwise second-order divergence (same stencils as :func:`grad`)."""
    ops = operators(v.grid)
    return _apply(ops.dx, v.x) + _apply(ops.dy, v.y)


def flux_div(v: VectorField) -> ScalarField:
    """Conservative (finite-volume) divergence satisfying the discrete Gauss identity."""
    ops = operators(v.grid)
    return _apply(ops.dx, v.x) + _apply(ops.flux_dy, v.y)


def laplacian(f: ScalarField) -> ScalarField:
    """Five-point Laplacian; wall rows use the one-sided four-point stencil."""
    return _apply(operators(f.grid).lap, f)


def neumann_laplacian(f: ScalarField) -> ScalarField:
    """Five-point Laplacian with half-cell zero-flux wall rows (the Neumann operator)."""
    return _apply(operators(f.grid).neumann_lap, f)


def vector_laplacian(v: VectorField) -> VectorField:
    return VectorField(v.grid, laplacian(v.x), laplacian(v.y))


def pressure_dissipation(p: ScalarField) -> ScalarField:
    """Rhie-Chow face-jump dissipation of ``p``; integrates to zero exactly.

    Vanishes on smooth fields up to O(h^2) but is O(1/h^2) on the
    odd-even (checkerboard) mode, which it therefore suppresses.
    """
    return _apply(operators(p.grid).pressure_dissipation, p)


def advect(a: VectorField, b):
    """Directional derivative ``(a . grad) b`` of a scalar or vector field ``b``."""
    if isinstance(b, VectorField):
        return VectorField(b.grid, a.dot(grad(b.x)), a.dot(grad(b.y)))
    return a.dot(grad(b))


def grad_contract(theta: ScalarField, v: VectorField) -> VectorField:
    """``grad(theta) . (grad v)^t``: component i is ``sum_j d_j theta * d_j v_i``."""
    g = grad(theta)
    return VectorField(v.grid, g.dot(grad(v.x)), g.dot(grad(v.y)))


def dissipation(u: VectorField, mu: float, lam: float) -> ScalarField:
    """Viscous dissipation ``2*mu*D(u):D(u) + lam*(div u)^2`` with ``D`` the symmetric gradient."""
    gx, gy = grad(u.x), grad(u.y)
    dxx, dyy = gx.x, gy.y
    shear = 0.5 * (gx.y + gy.x)
    return 2.0 * mu * (dxx * dxx + dyy * dyy + 2.0 * shear * shear) + lam * (dxx + dyy) ** 2


# ---------------------------------------------------------------------------
# Quadrature and norms
# ---------------------------------------------------------------------------


def integrate(f: ScalarField) -> float:
    """Rectangle rule in x (periodic), trapezoid rule in y."""
    return float(operators(f.grid).weights @ f.flat())


def mean(f: ScalarField) -> float:
    return integrate(f) / f.grid.area


def _components(f) -> list[ScalarField]:
    if isinstance(f, ScalarField):
        return [f]
    if isinstance(f, VectorField):
        return [f.x, f.y]
    raise TypeError("expected ScalarField or VectorField")


def _next_derivatives(fields: list[ScalarField]) -> list[ScalarField]:
    out = []
    for comp in fields:
        g = grad(comp)
        out.extend([g.x, g.y])
    return out


def l2_norm(f) -> float:
    return float(np.sqrt(sum(integrate(c * c) for c in _components(f))))


def derivative_seminorm(f, order: int) -> float:
    """L2 norm of the full tensor of ``order``-th derivatives (composed gradients)."""
    comps = _components(f)
    for _ in range(order):
        comps = _next_derivatives(comps)
    return float(np.sqrt(sum(integrate(c * c) for c in comps)))


def sobolev_norm(f, k: int) -> float:
    """Discrete H^k norm ``(sum_{m<=k} ||grad^m f||^2)^(1/2)`` for ``k`` in 0..3."""
    if int(k) != k or k < 0 or k > 3:
        raise ValueError(f"sobolev_norm supports k in 0..3, got {k}")
    comps = _components(f)
    total = sum(integrate(c * c) for c in comps)
    for _ in range(int(k)):
        comps = _next_derivatives(comps)
        total += sum(integrate(c * c) for c in comps)
    return float(np.sqrt(total))


def k_norm(f, eps: float) -> float:
    """epsilon-weighted norm ``||f||_H2 + eps*||grad^3 f||_L2``."""
    return sobolev_norm(f, 2) + eps * derivative_seminorm(f, 3)
