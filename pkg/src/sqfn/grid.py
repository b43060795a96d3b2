"""Lattice discretization of a box in R^d with ball geometry and dilation."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import gamma, pi

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ._validation import ArgumentError, DomainError, as_point, check_field, check_positive

__all__ = [
    "Grid",
    "Ball",
    "unit_ball_volume",
    "sphere_area",
    "distances",
    "ball_mask",
    "integrate_ball",
    "ball_average",
    "dilate",
]


def unit_ball_volume(d: int) -> float:
    """Volume v_d of the unit ball in R^d."""
    return pi ** (d / 2) / gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface measure sigma_{d-1} of the unit sphere in R^d (equals d * v_d)."""
    return d * unit_ball_volume(d)


@dataclass(frozen=True)
class Grid:
    """Nodes ``-half_width + k*h`` for ``k = 0..points_per_axis-1`` on every axis.

    Nodes are numbered in C (lexicographic) order of their multi-index, which
    is also the lexicographic order of their coordinates.
    """

    d: int = 3
    half_width: float = 1.0
    points_per_axis: int = 20

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ArgumentError(f"dimension must be a positive integer, got {self.d!r}")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 2:
            raise ArgumentError("points_per_axis must be an integer >= 2")
        check_positive(self.half_width, "half_width")

    @classmethod
    def from_dict(cls, spec: dict) -> "Grid":
        return cls(d=int(spec["d"]), half_width=float(spec["half_width"]),
                   points_per_axis=int(spec["points_per_axis"]))

    def to_dict(self) -> dict:
        return {"d": self.d, "half_width": self.half_width, "points_per_axis": self.points_per_axis}

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points_per_axis - 1)

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.d

    @property
    def node_count(self) -> int:
        return self.points_per_axis ** self.d

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.spacing * np.arange(self.points_per_axis)

    @cached_property
    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)

    def contains(self, x) -> bool:
        x = as_point(x, self.d)
        return bool(np.all(np.abs(x) <= self.half_width * (1 + 1e-12)))

    def multi_index(self, idx) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(np.moveaxis(multi, -1, 0)), self.shape)

    def nearest_node(self, x) -> int:
        x = as_point(x, self.d)
        k = np.clip(np.rint((x + self.half_width) / self.spacing), 0, self.points_per_axis - 1)
        return int(self.flat_index(k.astype(int)))

    def interior_mask(self, fraction: float = 0.25) -> np.ndarray:
        """Nodes at least ``fraction * half_width`` away from every wall."""
        limit = (1.0 - fraction) * self.half_width * (1 + 1e-12)
        return np.all(np.abs(self.nodes) <= limit, axis=1)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.ravel(self.center)))
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ArgumentError(f"ball radius must be positive, got {self.radius!r}")

    def scaled(self, c: float) -> "Ball":
        """The ball cB: same center, radius multiplied by ``c``."""
        return Ball(self.center, c * self.radius)

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


def distances(points: np.ndarray, center) -> np.ndarray:
    """Euclidean distances from ``center`` to each row of ``points``.

    Every ball-membership decision in the package goes through this function
    so that ties are resolved identically everywhere.
    """
    diff = points - np.asarray(center, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def ball_mask(grid: Grid, ball: Ball) -> np.ndarray:
    """Nodes y with ``|y - center| <= radius`` (closed ball)."""
    return distances(grid.nodes, ball.center) <= ball.radius


def _check_center(grid: Grid, ball: Ball) -> None:
    if not grid.contains(ball.center):
        raise DomainError(f"ball center {ball.center} lies outside the grid box")


def integrate_ball(f, ball: Ball, grid: Grid):
    """Riemann sum of ``f`` over the nodes of the closed ball, weight ``h^d``.

    Returns 0 when no node lies in the ball. Vector-valued fields integrate
    componentwise.
    """
    _check_center(grid, ball)
    f = check_field(f, grid.node_count)
    mask = ball_mask(grid, ball)
    return np.sum(f[mask], axis=0) * grid.cell_volume


def ball_average(f, ball: Ball, grid: Grid):
    """Mean of ``f`` over the nodes of the ball (node-count weighted)."""
    _check_center(grid, ball)
    f = check_field(f, grid.node_count)
    mask = ball_mask(grid, ball)
    count = int(mask.sum())
    if count == 0:
        raise DomainError(f"ball {ball} contains no grid node")
    return np.sum(f[mask], axis=0) / count


def dilate(f, r: float, grid: Grid) -> np.ndarray:
    """Resample ``x -> f(r x)`` by multilinear interpolation, zero outside the box."""
    if not np.isfinite(r) or r <= 0:
        raise ArgumentError(f"dilation factor must be positive, got {r!r}")
    f = check_field(f, grid.node_count, allow_nd=False)
    if r == 1:
        return f.copy()
    values = f.reshape(grid.shape + f.shape[1:])
    interp = RegularGridInterpolator([grid.axis] * grid.d, values, method="linear",
                                     bounds_error=False, fill_value=0.0)
    return interp(r * grid.nodes)
