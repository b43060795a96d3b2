"""The probe zoo: random test fields defined in physical coordinates.

Probe parameters are drawn from per-probe, per-component RNG streams, so a
probe means the same function on every grid resolution, and the first m
components of an n-component probe do not depend on n.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import ArgumentError
from ..grid import Grid, distances
from ..potential import PotentialProfile
from ..spaces import BanachSurrogate

KINDS = ("gaussian", "indicator", "eigenmix", "atom_small", "atom_big")
ATOM_KINDS = ("atom_small", "atom_big")
MAX_COMPONENTS = 64


@dataclass(frozen=True)
class Probe:
    id: str
    kind: str
    values: np.ndarray  # (N, n)
    ball: tuple | None = None  # (center node, radius) for atoms


def _component_rng(seed: int, index: int, component: int) -> np.random.Generator:
    return np.random.default_rng([seed, index, component])


def _gaussian(grid: Grid, rng) -> np.ndarray:
    a = grid.half_width
    c = rng.uniform(-0.5 * a, 0.5 * a, grid.d)
    sigma = rng.uniform(0.15 * a, 0.4 * a)
    amp = rng.standard_normal()
    r2 = distances(grid.nodes, c) ** 2
    return amp * np.exp(-r2 / (2 * sigma * sigma))


def _indicator(grid: Grid, rng) -> np.ndarray:
    a = grid.half_width
    c = rng.uniform(-0.5 * a, 0.5 * a, grid.d)
    radius = rng.uniform(0.2 * a, 0.5 * a)
    amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
    return amp * (distances(grid.nodes, c) <= radius)


def _eigenmix(grid: Grid, rng) -> np.ndarray:
    """A few low Dirichlet sine modes of the continuum box."""
    a = grid.half_width
    out = np.zeros(grid.node_count)
    for _ in range(3):
        k = rng.integers(1, 5, grid.d)
        mode = np.prod(np.sin(k * np.pi * (grid.nodes + a) / (2 * a)), axis=1)
        out += rng.standard_normal() * mode
    return out


def _atom_geometry(grid: Grid, profile: PotentialProfile, rng, small: bool):
    """Center node and radius of an atom ball; small balls lie inside the box."""
    a, h = grid.half_width, grid.spacing
    for _ in range(200):
        c = grid.nearest_node(rng.uniform(-0.6 * a, 0.6 * a, grid.d))
        rho = profile.rho_table[c]
        if small:
            radius = rng.uniform(0.4, 0.8) * rho
            if radius < h:
                continue
            if np.all(np.abs(grid.nodes[c]) + radius <= a):
                return c, radius
        else:
            return c, max(rho, h) * rng.uniform(1.0, 1.5)
    raise ArgumentError("could not place an atom ball inside the box")


def _atom(grid: Grid, profile: PotentialProfile, X: BanachSurrogate, rng, small: bool):
    c, radius = _atom_geometry(grid, profile, rng, small)
    inside = distances(grid.nodes, grid.nodes[c]) <= radius
    measure = int(inside.sum()) * grid.cell_volume
    direction = rng.standard_normal(MAX_COMPONENTS)[:X.n]
    direction = direction / X.norm(direction) * (1 - 1e-12)
    if small:
        # Antisymmetric in the first coordinate about the (node) center: exact cancellation.
        side = np.sign(grid.nodes[:, 0] - grid.nodes[c, 0])
        shape = np.where(inside, side, 0.0)
    else:
        shape = inside.astype(np.float64)
    return np.outer(shape / measure, direction), (int(c), float(radius))


class ProbeZoo:
    """Deterministic probe families on a grid for a given surrogate X."""

    def __init__(self, grid: Grid, profile: PotentialProfile | None = None, kinds=KINDS):
        unknown = set(kinds) - set(KINDS)
        if unknown:
            raise ArgumentError(f"unknown probe kinds: {sorted(unknown)}")
        if profile is None and set(kinds) & set(ATOM_KINDS):
            raise ArgumentError("atom probes need a potential profile")
        self.grid = grid
        self.profile = profile
        self.kinds = tuple(kinds)

    def probe(self, index: int, seed: int, X: BanachSurrogate, kind: str | None = None) -> Probe:
        kind = self.kinds[index % len(self.kinds)] if kind is None else kind
        if kind in ATOM_KINDS:
            values, ball = _atom(self.grid, self.profile, X, _component_rng(seed, index, 0),
                                 kind == "atom_small")
            return Probe(f"{kind}-{seed}-{index}", kind, values, ball)
        make = {"gaussian": _gaussian, "indicator": _indicator, "eigenmix": _eigenmix}[kind]
        cols = [make(self.grid, _component_rng(seed, index, k)) for k in range(X.n)]
        return Probe(f"{kind}-{seed}-{index}", kind, np.stack(cols, axis=1))

    def generate(self, count: int, seed: int, X: BanachSurrogate) -> list[Probe]:
        return [self.probe(i, seed, X) for i in range(count)]


def stack(probes) -> np.ndarray:
    """(N, n, P) batch from a list of probes."""
    return np.stack([p.values for p in probes], axis=2)
