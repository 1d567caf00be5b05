"""Time grids and the left-anchor discretization map.

A grid is a strictly increasing set of times 0 = t_0 < ... < t_n = T with
every gap below 1. The associated discretization map sends t to the grid
point at or before it, with the half-open convention: [t_0, t_1] maps to
t_0 and (t_{i-1}, t_i] maps to t_{i-1}. The mesh is the largest gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised when grid points violate the admissibility conditions."""


@dataclass(frozen=True)
class Grid:
    """Ordered time points on [0, T]. Immutable and safe to share."""

    points: np.ndarray
    horizon_T: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise GridError("grid needs at least 2 points")
        if pts[0] != 0.0:
            raise GridError("first grid point must be 0")
        if pts[-1] != self.horizon_T:
            raise GridError("last grid point must equal the horizon T")
        gaps = np.diff(pts)
        if np.any(gaps <= 0):
            raise GridError("grid points must be strictly increasing")
        if gaps.max() >= 1.0:
            raise GridError("gap >= 1: every consecutive gap must be < 1")
        pts.flags.writeable = False

    @property
    def n_cells(self) -> int:
        return self.points.size - 1

    def gaps(self) -> np.ndarray:
        return np.diff(self.points)


@dataclass(frozen=True)
class DiscretizationMap:
    """A grid together with its mesh (the largest cell width)."""

    grid: Grid
    mesh: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mesh", float(self.grid.gaps().max()))

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @property
    def horizon_T(self) -> float:
        return self.grid.horizon_T

    @property
    def n_cells(self) -> int:
        return self.grid.n_cells

    def __call__(self, t: float) -> float:
        return self.delta_eval(t)

    def delta_eval(self, t: float) -> float:
        """Grid anchor of t: t_0 on [t_0, t_1], t_{i-1} on (t_{i-1}, t_i]."""
        pts = self.grid.points
        if t < 0.0 or t > self.grid.horizon_T:
            raise ValueError(f"t={t} outside [0, {self.grid.horizon_T}]")
        idx = int(np.searchsorted(pts, t, side="left"))
        if idx == 0:  # t == 0 exactly
            return float(pts[0])
        return float(pts[idx - 1])

    def cell_index(self, t: float) -> int:
        """Index i of the cell (t_i, t_{i+1}] containing t; 0 for t in [0, t_1]."""
        pts = self.grid.points
        if t < 0.0 or t > self.grid.horizon_T:
            raise ValueError(f"t={t} outside [0, {self.grid.horizon_T}]")
        idx = int(np.searchsorted(pts, t, side="left"))
        return max(idx - 1, 0)


def build_uniform_grid(n: int, T: float) -> DiscretizationMap:
    """Uniform map with n cells on [0, T]; requires T/n < 1.

    Args:
        n: number of cells (>= 1).
        T: horizon (> 0).
    """
    if n < 1:
        raise GridError("n must be a positive integer")
    if T <= 0:
        raise GridError("T must be positive")
    if T / n >= 1.0:
        raise GridError(f"gap >= 1: T/n = {T / n} is not an admissible mesh")
    points = np.linspace(0.0, T, n + 1)
    return DiscretizationMap(Grid(points, float(T)))


def build_map(points: np.ndarray, T: float | None = None) -> DiscretizationMap:
    """Map over explicit (possibly non-uniform) grid points."""
    pts = np.asarray(points, dtype=float)
    horizon = float(pts[-1]) if T is None else float(T)
    return DiscretizationMap(Grid(pts, horizon))
