"""Rectangular space-time lattice on [0, T] x [-L, L]^d."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ArgumentError


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid.

    Cells are indexed time-major: the flat index of (time cell ``k``,
    spatial cell ``j``) is ``k * n_space + j``, where ``j`` is the
    row-major flattening of the ``d`` spatial cell indices.
    """

    T: float
    nt: int
    L: float
    nx: int
    d: int = 1

    def __post_init__(self):
        if self.nt < 1 or self.nx < 1:
            raise ArgumentError("nt and nx must be >= 1")
        if not (self.T > 0 and self.L > 0):
            raise ArgumentError("T and L must be positive")
        if self.d not in (1, 2):
            raise ArgumentError("field simulation supports d in {1, 2}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def dx(self) -> float:
        return 2.0 * self.L / self.nx

    @property
    def n_space(self) -> int:
        return self.nx**self.d

    @property
    def M(self) -> int:
        return self.nt * self.n_space

    @property
    def cell_volume(self) -> float:
        return self.dt * self.dx**self.d

    @property
    def space_volume(self) -> float:
        return self.dx**self.d

    @cached_property
    def time_edges(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    @cached_property
    def time_centers(self) -> np.ndarray:
        return 0.5 * (self.time_edges[:-1] + self.time_edges[1:])

    @cached_property
    def space_edges(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.nx + 1)

    @cached_property
    def space_centers_1d(self) -> np.ndarray:
        return 0.5 * (self.space_edges[:-1] + self.space_edges[1:])

    @cached_property
    def space_centers(self) -> np.ndarray:
        """Spatial cell centers, shape ``(n_space, d)``."""
        c = self.space_centers_1d
        if self.d == 1:
            return c[:, None]
        g = np.meshgrid(*([c] * self.d), indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    def n_active_times(self, t: float) -> int:
        """Number of time cells whose center lies strictly before ``t``."""
        return int(np.count_nonzero(self.time_centers < t))

    def flat_index(self, k: int, j: int) -> int:
        return k * self.n_space + j

    def split_index(self, i):
        return np.divmod(i, self.n_space)

    def ball_mask(self, R: float) -> np.ndarray:
        """Boolean mask of spatial cells whose center lies in the closed ball B_R."""
        if R > self.L:
            raise ArgumentError(f"R={R} exceeds grid half-width L={self.L}")
        r = np.linalg.norm(self.space_centers, axis=1)
        return r <= R + 1e-12 * max(1.0, R)

    def refined(self, factor: int = 2) -> "Grid":
        """Grid with every cell split ``factor`` times along each axis."""
        return Grid(self.T, self.nt * factor, self.L, self.nx * factor, self.d)

    def to_dict(self) -> dict:
        return {"T": self.T, "nt": self.nt, "L": self.L, "nx": self.nx, "d": self.d}
