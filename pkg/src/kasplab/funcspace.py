"""Uniform symmetric grids on [-L, L] and sampled functions on them."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Grid:
    half_width: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.half_width) and self.half_width > 0):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if int(self.n_points) != self.n_points or self.n_points < 3 or self.n_points % 2 == 0:
            raise ValueError(f"n_points must be an odd integer >= 3, got {self.n_points}")

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        # h (j - mid) is exactly antisymmetric, unlike -L + j h
        return self.spacing * (np.arange(self.n_points) - self.n_points // 2)

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights: spacing everywhere, halved at the two endpoints."""
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    def refined(self, levels: int = 1) -> "Grid":
        """Same interval, spacing halved `levels` times (nodes nested)."""
        n = self.n_points
        for _ in range(levels):
            n = 2 * n - 1
        return Grid(self.half_width, n)

    def widened(self, factor: float) -> "Grid":
        """Interval scaled by `factor` at the same spacing (rounded to a node)."""
        h = self.spacing
        half_nodes = int(round(self.half_width * factor / h))
        return Grid(half_nodes * h, 2 * half_nodes + 1)


def make_grid(half_width: float, n_points: int) -> Grid:
    return Grid(float(half_width), int(n_points))


@dataclass(frozen=True)
class GridFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.grid.n_points,):
            raise ValueError(
                f"expected {self.grid.n_points} values, got shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_real(self) -> bool:
        return bool(np.all(self.values.imag == 0))


def sample(f: Callable[[np.ndarray], np.ndarray] | float, grid: Grid) -> GridFunction:
    x = grid.nodes
    if callable(f):
        vals = np.asarray(f(x), dtype=complex)
        if vals.ndim == 0:
            vals = np.full(x.shape, vals)
    else:
        vals = np.full(x.shape, f, dtype=complex)
    bad = ~np.isfinite(vals)
    if bad.any():
        j = int(np.argmax(bad))
        raise ValueError(f"non-finite value at node x={x[j]!r}")
    return GridFunction(grid, vals)


def _check_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {v.grid}")


def inner(u: GridFunction, v: GridFunction) -> complex:
    """Trapezoid-weighted Hermitian inner product, conjugate-linear in `u`."""
    _check_same_grid(u, v)
    return complex(np.sum(u.grid.weights * (u.values.conj() * v.values)))


def tail_weights(grid: Grid, R: float) -> np.ndarray:
    """Weights w with sum(w |u|^2) = trapezoid integral of |u|^2 over |x| >= R.

    The cell containing the cut is integrated against the linear interpolant
    of |u|^2, so the rule stays second order for any R.
    """
    if not 0 <= R <= grid.half_width:
        raise ValueError(f"R must lie in [0, {grid.half_width}], got {R}")
    h = grid.spacing
    x = grid.nodes
    n = grid.n_points
    w = np.zeros(n)
    mid = n // 2
    # right half, cells [x_j, x_{j+1}] for j >= mid; left half mirrors it
    for j in range(mid, n - 1):
        lo, hi = x[j], x[j + 1]
        if hi <= R:
            continue
        t = max(0.0, (R - lo) / h)
        if t <= 0.0:
            wl = wr = 0.5 * h
        else:
            wl = 0.5 * h * (1 - t) ** 2
            wr = 0.5 * h * (1 - t) * (1 + t)
        w[j] += wl
        w[j + 1] += wr
        w[n - 1 - j] += wl
        w[n - 2 - j] += wr
    return w


def tail_mass(u: GridFunction, R: float) -> float:
    w = tail_weights(u.grid, R)
    return float(np.sum(w * (u.values.conj() * u.values)).real)
