"""Shared fixtures: solved tiers on small grids, cached per session."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import pytest

from ghostflow.grid_core import Grid, ScalarField, VectorField, WallData
from ghostflow.limiting_system import Params, solve_limiting
from ghostflow.remainder_system import RemainderRun, solve_remainder_nonlinear


@lru_cache(maxsize=None)
def limiting_case(n: int = 32, delta: float = 0.05):
    grid = Grid(n, n)
    walls = WallData.cosine(grid, delta)
    params = Params(epsilon=0.1)
    return walls, solve_limiting(walls, params)


@lru_cache(maxsize=None)
def remainder_case(epsilon: float, n: int = 32, delta: float = 0.05):
    """``(walls, params, lim, fo, rem, run)`` for the coupled tiers at one epsilon."""
    walls, lim = limiting_case(n, delta)
    params = Params(epsilon=epsilon)
    run = RemainderRun()
    fo, rem = solve_remainder_nonlinear(lim, params, record=run)
    return walls, params, lim, fo, rem, run


@pytest.fixture(scope="session")
def case32():
    return remainder_case(0.1)


def smooth_random_field(grid: Grid, rng: np.random.Generator, wall_vanishing: bool = True) -> np.ndarray:
    """Random low-mode trigonometric field, optionally vanishing on both walls."""
    X, Y = grid.mesh()
    out = np.zeros(grid.shape)
    for k in range(3):
        for m in range(1, 3):
            a, b = rng.normal(size=2)
            profile = np.sin(m * np.pi * Y) if wall_vanishing else np.cos((m - 1) * np.pi * Y + 0.3)
            out += (a * np.cos(2 * np.pi * k * X) + b * np.sin(2 * np.pi * k * X)) * profile / (1 + k * m)
    return out


def random_scalar(grid: Grid, seed: int, wall_vanishing: bool = True) -> ScalarField:
    return ScalarField(grid, smooth_random_field(grid, np.random.default_rng(seed), wall_vanishing))


def random_vector(grid: Grid, seed: int) -> VectorField:
    rng = np.random.default_rng(seed)
    return VectorField(grid, smooth_random_field(grid, rng), smooth_random_field(grid, rng))
