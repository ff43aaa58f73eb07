"""Manufactured-solution corpus for the linear solvers.

Each case returns the max-norm errors of the solver output against the
analytic fields on one grid; forcings are derived symbolically.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp

from ghostflow.elliptic_kit import solve_poisson_dirichlet, solve_poisson_neumann, solve_stokes
from ghostflow.grid_core import Grid, ScalarField, VectorField

X, Y = sp.symbols("x y")


@lru_cache(maxsize=None)
def _stokes_fields(mu: float):
    # stream function vanishing with its normal derivative on both walls
    stream = sp.sin(sp.pi * Y) ** 2 * sp.sin(2 * sp.pi * X) / (2 * sp.pi)
    vx, vy = sp.diff(stream, Y), -sp.diff(stream, X)
    p = sp.cos(2 * sp.pi * X)
    fx = -mu * (sp.diff(vx, X, 2) + sp.diff(vx, Y, 2)) + sp.diff(p, X)
    fy = -mu * (sp.diff(vy, X, 2) + sp.diff(vy, Y, 2)) + sp.diff(p, Y)
    return tuple(sp.lambdify((X, Y), e, "numpy") for e in (vx, vy, p, fx, fy))


def _on(grid: Grid, fn) -> np.ndarray:
    Xg, Yg = grid.mesh()
    return np.broadcast_to(fn(Xg, Yg), grid.shape).astype(float)


def dirichlet_sine(n: int) -> dict:
    g = Grid(n, n)
    exact = _on(g, lambda x, y: np.sin(2 * np.pi * x) * np.sin(np.pi * y))
    u = solve_poisson_dirichlet(ScalarField(g, -5 * np.pi ** 2 * exact), 0.0, 0.0)
    return {"u": float(np.abs(u.values - exact).max())}


def neumann_cosine(n: int) -> dict:
    g = Grid(n, n)
    exact = _on(g, lambda x, y: np.cos(2 * np.pi * x) * np.cos(np.pi * y))
    q = solve_poisson_neumann(ScalarField(g, -5 * np.pi ** 2 * exact))
    return {"q": float(np.abs(q.values - exact).max())}


def stokes_stream(n: int, mu: float = 1.0) -> dict:
    g = Grid(n, n)
    vx, vy, p, fx, fy = (_on(g, fn) for fn in _stokes_fields(mu))
    zero_wall = np.zeros((2, n))
    sol = solve_stokes(mu, VectorField(g, fx, fy), ScalarField.zeros(g), zero_wall, zero_wall)
    return {
        "velocity": float(max(np.abs(sol.velocity.x.values - vx).max(), np.abs(sol.velocity.y.values - vy).max())),
        "pressure": float(np.abs(sol.pressure.values - p).max()),
    }


CORPUS = {"dirichlet_sine": dirichlet_sine, "neumann_cosine": neumann_cosine, "stokes_stream": stokes_stream}


def observed_orders(case, sizes=(16, 32, 64)) -> dict:
    """Least-squares slope of log(error) against log(h) for every field of a case."""
    errors = [case(n) for n in sizes]
    h = np.log([1.0 / (n - 1) for n in sizes])
    return {key: float(np.polyfit(h, np.log([e[key] for e in errors]), 1)[0]) for key in errors[0]}
