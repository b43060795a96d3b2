"""Potentials V >= 0, the critical radius function and the critical covering."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import (
    ArgumentError,
    ConfigurationError,
    DomainError,
    FitError,
    as_point,
    check_positive,
)
from .grid import Ball, Grid, ball_mask, distances

__all__ = [
    "PotentialProfile",
    "RhoComparison",
    "CriticalCovering",
    "reverse_holder_constant",
    "critical_radius",
    "fit_rho_comparison",
    "in_region_N",
    "comparability_constant",
    "build_covering",
    "export_rho_csv",
    "C_LADDER",
    "K0_LADDER",
]

log = logging.getLogger(__name__)

N_SCAN = 64
C_LADDER = tuple(1.0 + 0.25 * k for k in range(61))  # 1, 1.25, ..., 16
K0_LADDER = (1, 2, 4, 8)
C1_MARGIN = 1e-6
_NODE_CHUNK = 512


@dataclass
class PotentialProfile:
    """A nonnegative potential on a grid together with its critical radii.

    ``kind`` is ``"constant"`` (V = c), ``"power"`` (V = c |x|^beta) or
    ``"table"`` (one value per node). ``s`` is the reverse Hölder exponent
    (defaults to ``d``), and ``rho_cap`` caps the critical radius (defaults to
    the box half width).

    For the closed-form kinds the ball integrals that define the critical
    radius run over the infinite lattice extending the grid, so that radii
    near the walls do not inflate because part of the ball falls outside the
    box. Tabulated potentials are only known on the box and are integrated
    there.
    """

    grid: Grid
    kind: str = "constant"
    c: float = 1.0
    beta: float = 0.0
    s: float | None = None
    table: np.ndarray | None = None
    rho_cap: float | None = None
    _rho: np.ndarray | None = field(default=None, init=False, repr=False)
    _capped: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("constant", "power", "table"):
            raise ConfigurationError(f"unknown potential kind {self.kind!r}")
        d = self.grid.d
        if self.s is None:
            self.s = float(d)
        if not self.s > d / 2:
            raise ConfigurationError(f"reverse Hölder exponent s={self.s} must exceed d/2={d / 2}")
        if self.kind == "table":
            if self.table is None:
                raise ConfigurationError("table potential requires values")
            self.table = np.asarray(self.table, dtype=np.float64).reshape(-1)
            if self.table.shape != (self.grid.node_count,):
                raise ConfigurationError("potential table length must equal the node count")
        else:
            if self.c < 0:
                raise DomainError("potential coefficient c must be nonnegative")
            if self.beta < 0:
                raise ConfigurationError("power exponent beta must be nonnegative")
        if self.rho_cap is None:
            self.rho_cap = float(self.grid.half_width)
        check_positive(self.rho_cap, "rho_cap")
        if np.any(self.values < 0):
            raise DomainError("potential must be nonnegative")

    @classmethod
    def from_config(cls, grid: Grid, spec: dict) -> "PotentialProfile":
        kind = spec.get("kind", "constant")
        table = None
        if kind == "table":
            path = Path(spec["table_path"])
            table = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",")
        return cls(grid, kind=kind, c=float(spec.get("c", 1.0)), beta=float(spec.get("beta", 0.0)),
                   s=spec.get("s"), table=table, rho_cap=spec.get("rho_cap"))

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "s": self.s, "rho_cap": self.rho_cap}
        if self.kind != "table":
            out.update(c=self.c, beta=self.beta)
        return out

    @property
    def delta(self) -> float:
        """The exponent 2 - d/s > 0."""
        return 2.0 - self.grid.d / self.s

    def evaluate(self, points) -> np.ndarray:
        """V at arbitrary points (closed-form kinds only)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "constant" or (self.kind == "power" and self.beta == 0):
            return np.full(points.shape[0], float(self.c))
        if self.kind == "power":
            r2 = np.einsum("ij,ij->i", points, points)
            return self.c * r2 ** (self.beta / 2)
        raise DomainError("tabulated potentials are only defined at grid nodes")

    @property
    def values(self) -> np.ndarray:
        if self.kind == "table":
            return self.table
        return self.evaluate(self.grid.nodes)

    @property
    def is_separable(self) -> bool:
        """True when V is a sum of one-variable functions (constant or c|x|^2)."""
        return self.kind == "constant" or (self.kind == "power" and self.beta in (0.0, 2.0))

    def axis_potentials(self) -> list[np.ndarray]:
        """Per-axis terms v_i with V(x) = sum_i v_i(x_i), for separable kinds."""
        if not self.is_separable:
            raise ConfigurationError("potential is not separable")
        ax = self.grid.axis
        if self.kind == "power" and self.beta == 2.0:
            return [self.c * ax ** 2 for _ in range(self.grid.d)]
        return [np.full_like(ax, self.c)] + [np.zeros_like(ax) for _ in range(self.grid.d - 1)]

    def _compute_rho(self) -> None:
        self._rho, self._capped = _node_critical_radii(self)

    @property
    def rho_table(self) -> np.ndarray:
        if self._rho is None:
            self._compute_rho()
        return self._rho

    @property
    def capped(self) -> np.ndarray:
        if self._capped is None:
            self._compute_rho()
        return self._capped

    def rho_at(self, x) -> float:
        """Critical radius at an arbitrary point (table lookup for nodes)."""
        x = as_point(x, self.grid.d)
        idx = self.grid.nearest_node(x)
        if np.array_equal(self.grid.nodes[idx], x):
            return float(self.rho_table[idx])
        return critical_radius(self, x)


# --------------------------------------------------------------------------
# critical radius


def _lattice_offsets(grid: Grid, r_max: float) -> np.ndarray:
    m = int(np.floor(r_max / grid.spacing + 1e-9))
    k = np.arange(-m, m + 1)
    mesh = np.meshgrid(*([k] * grid.d), indexing="ij")
    off = np.stack([a.reshape(-1) for a in mesh], axis=-1) * grid.spacing
    return off[distances(off, np.zeros(grid.d)) <= r_max]


def _point_mass_profile(profile: PotentialProfile, x: np.ndarray, r_max: float):
    grid = profile.grid
    h = grid.spacing
    if profile.kind == "table":
        pts, vals = grid.nodes, profile.values
    else:
        lo = np.ceil((x - r_max + grid.half_width) / h - 1e-9)
        hi = np.floor((x + r_max + grid.half_width) / h + 1e-9)
        axes = [np.arange(a, b + 1) * h - grid.half_width for a, b in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([a.reshape(-1) for a in mesh], axis=-1)
        vals = profile.evaluate(pts)
    dist = distances(pts, x)
    order = np.argsort(dist, kind="stable")
    return dist[order], np.cumsum(vals[order]) * grid.cell_volume


def _scan_bisect(dsorted: np.ndarray, cum: np.ndarray, r_max: float, h: float, d: int):
    """Largest r <= r_max with r^(2-d) * mass(r) <= 1, for each row of ``cum``.

    ``dsorted`` is either shared by all rows (1-D) or one row per center.
    """
    cum = np.atleast_2d(cum)
    k = cum.shape[0]
    shared = dsorted.ndim == 1

    def F(r):
        r = np.asarray(r, dtype=np.float64)
        if shared:
            idx = np.searchsorted(dsorted, r, side="right")
        else:
            rr = np.broadcast_to(r, (k,) + r.shape[1:]) if r.ndim else np.full(k, float(r))
            if rr.ndim == 1:
                idx = np.array([np.searchsorted(dsorted[i], rr[i], side="right") for i in range(k)])
            else:
                idx = np.stack([np.searchsorted(dsorted[i], rr[i], side="right") for i in range(k)])
        rows = np.arange(k).reshape((k,) + (1,) * (idx.ndim - 1))
        mass = np.where(idx > 0, cum[rows, np.maximum(idx - 1, 0)], 0.0)
        return mass * r ** (2 - d)

    r_lo = min(h / 2, r_max)
    ladder = np.geomspace(r_lo, r_max, N_SCAN)
    ok = F(np.broadcast_to(ladder, (k, N_SCAN)) if not shared else ladder[None, :].repeat(k, 0)) <= 1
    capped = ok[:, -1].copy()
    rho = np.full(k, float(r_max))
    todo = ~capped
    if not np.any(todo):
        return rho, capped
    any_ok = ok.any(axis=1)
    last = np.where(any_ok, N_SCAN - 1 - np.argmax(ok[:, ::-1], axis=1), -1)
    lo = np.where(last >= 0, ladder[np.clip(last, 0, None)], 0.0)
    hi = np.where(last >= 0, ladder[np.clip(last + 1, 0, N_SCAN - 1)], r_lo)
    if np.any(todo & ~any_ok):
        log.warning("critical radius below half the grid spacing at %d centers; unresolved",
                    int(np.sum(todo & ~any_ok)))
    tol = 1e-3 * h
    while np.any(todo & (hi - lo > tol)):
        mid = 0.5 * (lo + hi)
        good = F(mid) <= 1
        lo = np.where(todo & good, mid, lo)
        hi = np.where(todo & ~good, mid, hi)
    rho[todo] = lo[todo]
    return rho, capped


def _node_critical_radii(profile: PotentialProfile):
    grid = profile.grid
    r_max = profile.rho_cap
    n = grid.node_count
    rho = np.empty(n)
    capped = np.empty(n, dtype=bool)
    if profile.kind == "table":
        for start in range(0, n, _NODE_CHUNK // 4):
            sl = slice(start, min(start + _NODE_CHUNK // 4, n))
            for i in range(sl.start, sl.stop):
                ds, cm = _point_mass_profile(profile, grid.nodes[i], r_max)
                rho[i], capped[i] = (v[0] for v in _scan_bisect(ds, cm, r_max, grid.spacing, grid.d))
        return rho, capped
    off = _lattice_offsets(grid, r_max)
    dist = distances(off, np.zeros(grid.d))
    order = np.argsort(dist, kind="stable")
    off, dist = off[order], dist[order]
    chunk = max(1, int(4_000_000 // max(len(off), 1)))
    for start in range(0, n, chunk):
        x = grid.nodes[start:start + chunk]
        vals = profile.evaluate((x[:, None, :] + off[None, :, :]).reshape(-1, grid.d))
        cum = np.cumsum(vals.reshape(len(x), len(off)), axis=1) * grid.cell_volume
        rho[start:start + len(x)], capped[start:start + len(x)] = _scan_bisect(
            dist, cum, r_max, grid.spacing, grid.d)
    return rho, capped


def critical_radius(profile: PotentialProfile, x, r_max: float | None = None, *,
                    full_output: bool = False):
    """sup{r <= r_max : r^(2-d) * integral of V over B(x, r) <= 1}.

    The supremum is located by a scan over 64 log-spaced radii from h/2 to
    ``r_max`` followed by bisection (tolerance 1e-3 h) on the last bracket
    where the condition switches from holding to failing. With
    ``full_output`` a ``(rho, capped)`` pair is returned.
    """
    grid = profile.grid
    x = as_point(x, grid.d)
    if not grid.contains(x):
        raise DomainError(f"point {x} lies outside the grid box")
    r_max = profile.rho_cap if r_max is None else check_positive(r_max, "r_max")
    ds, cm = _point_mass_profile(profile, x, r_max)
    rho, capped = _scan_bisect(ds, cm, r_max, grid.spacing, grid.d)
    if full_output:
        return float(rho[0]), bool(capped[0])
    return float(rho[0])


def _ball_F(profile: PotentialProfile, x, r: float) -> float:
    """r^(2-d) times the lattice ball integral used by :func:`critical_radius`."""
    ds, cm = _point_mass_profile(profile, as_point(x, profile.grid.d), max(r, 1e-300) * 1.001)
    idx = np.searchsorted(ds, r, side="right")
    mass = cm[idx - 1] if idx > 0 else 0.0
    return float(mass * r ** (2 - profile.grid.d))


# --------------------------------------------------------------------------
# reverse Hölder


def reverse_holder_constant(profile: PotentialProfile, s: float, balls) -> float:
    """Largest ratio (mean of V^s)^(1/s) / (mean of V) over a family of balls.

    Balls on which V vanishes identically contribute 1.
    """
    grid = profile.grid
    if s <= grid.d / 2:
        raise ArgumentError(f"s={s} must exceed d/2")
    balls = list(balls)
    if not balls:
        raise ArgumentError("ball family is empty")
    v = profile.values
    best = -np.inf
    for ball in balls:
        if not grid.contains(ball.center):
            raise DomainError(f"ball center {ball.center} outside the grid box")
        vb = v[ball_mask(grid, ball)]
        if vb.size == 0:
            raise DomainError(f"ball {ball} contains no node")
        mean_v = vb.mean()
        if mean_v == 0:
            ratio = 1.0
        else:
            ratio = np.mean(vb ** s) ** (1.0 / s) / mean_v
        best = max(best, ratio)
    return float(best)


# --------------------------------------------------------------------------
# comparability of critical radii


@dataclass(frozen=True)
class RhoComparison:
    c: float
    k0: int
    C1: float

    def violations(self, profile: PotentialProfile, pairs) -> np.ndarray:
        """Boolean mask of pairs violating either two-sided bound."""
        rx, ry, dist = _pair_data(profile, pairs)
        low_bad, up_bad = _sandwich_violations(self.c, self.k0, rx, ry, dist)
        near = dist <= rx
        ratio_bad = near & ~((self.C1 * rx < ry) & (ry < rx / self.C1))
        return low_bad | up_bad | ratio_bad

    def validates(self, profile: PotentialProfile, pairs) -> bool:
        return not np.any(self.violations(profile, pairs))


def _pair_data(profile: PotentialProfile, pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    rho = profile.rho_table
    nodes = profile.grid.nodes
    diff = nodes[pairs[:, 0]] - nodes[pairs[:, 1]]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return rho[pairs[:, 0]], rho[pairs[:, 1]], dist


def _sandwich_violations(c, k0, rx, ry, dist):
    u = 1.0 + dist / rx
    low_bad = rx * u ** (-k0) / c > ry
    up_bad = ry > c * rx * u ** (k0 / (k0 + 1.0))
    return low_bad, up_bad


def fit_rho_comparison(profile: PotentialProfile, pairs, *, min_pairs: int = 100) -> RhoComparison:
    """Fit the constants (c, k0) of the two-sided comparison of critical radii.

    For each k0 in (1, 2, 4, 8) the smallest c on the ladder 1, 1.25, ..., 16
    validating both bounds on every pair is found; the smallest such c wins,
    ties going to the smaller k0. C1 is the largest constant below 1 with
    C1 rho(x) < rho(y) < rho(x)/C1 on every pair with |x - y| <= rho(x).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) < min_pairs:
        raise ArgumentError(f"need at least {min_pairs} pairs, got {len(pairs)}")
    rx, ry, dist = _pair_data(profile, pairs)
    best = None
    worst_pair = None
    for k0 in K0_LADDER:
        for c in C_LADDER:
            low_bad, up_bad = _sandwich_violations(c, k0, rx, ry, dist)
            bad = low_bad | up_bad
            if not bad.any():
                if best is None or c < best[0]:
                    best = (c, k0)
                break
            worst_pair = pairs[np.argmax(bad)]
    if best is None:
        raise FitError(f"no (c, k0) on the ladder validates; e.g. pair {worst_pair.tolist()}")
    near = dist <= rx
    ratio = np.minimum(ry[near] / rx[near], rx[near] / ry[near]) if near.any() else np.array([1.0])
    C1 = min(1.0, float(ratio.min())) * (1 - C1_MARGIN)
    return RhoComparison(c=best[0], k0=best[1], C1=C1)


def in_region_N(profile: PotentialProfile, x, y):
    """Whether |x - y| <= rho(x); ``x`` and ``y`` are node indices (arrays allowed).

    The test uses the critical radius of the first argument only.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    nodes = profile.grid.nodes
    diff = nodes[x] - nodes[y]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    out = dist <= profile.rho_table[x]
    return bool(out) if out.ndim == 0 else out


def comparability_constant(profile: PotentialProfile, *, chunk: int = 256) -> float:
    """C1 fitted on every node pair of N: (1 - 1e-6) min over |x - y| <= ρ(x) of
    min(ρ(y)/ρ(x), ρ(x)/ρ(y)), capped at 1 - 1e-6."""
    nodes, rho = profile.grid.nodes, profile.rho_table
    worst = 1.0
    for start in range(0, len(nodes), chunk):
        rows = slice(start, min(start + chunk, len(nodes)))
        diff = nodes[rows][:, None, :] - nodes[None, :, :]
        dist = np.sqrt(np.einsum("xyk,xyk->xy", diff, diff))
        near = dist <= rho[rows][:, None]
        ratio = rho[None, :] / rho[rows][:, None]
        ratio = np.minimum(ratio, 1.0 / ratio)
        worst = min(worst, float(ratio[near].min()))
    return worst * (1 - C1_MARGIN)


# --------------------------------------------------------------------------
# critical covering


@dataclass
class CriticalCovering:
    grid: Grid
    centers: np.ndarray  # node indices, in acceptance order
    radii: np.ndarray
    overlap_counts: np.ndarray
    coverage: float

    @property
    def overlap_bound(self) -> int:
        return int(self.overlap_counts.max())

    @property
    def center_points(self) -> np.ndarray:
        return self.grid.nodes[self.centers]

    def membership(self, scale: float = 1.0) -> np.ndarray:
        """Boolean (balls x nodes) matrix of node membership in scale * Q_k."""
        nodes = self.grid.nodes
        out = np.empty((len(self.centers), len(nodes)), dtype=bool)
        for k, (c, r) in enumerate(zip(self.center_points, self.radii)):
            out[k] = distances(nodes, c) <= scale * r
        return out

    def to_rows(self) -> list[dict]:
        rows = []
        for k, (idx, r, cnt) in enumerate(zip(self.centers, self.radii, self.overlap_counts)):
            row = {"ball": k, "node": int(idx), "radius": float(r), "overlap": int(cnt)}
            row.update({f"x{i + 1}": float(v) for i, v in enumerate(self.grid.nodes[idx])})
            rows.append(row)
        return rows


def build_covering(profile: PotentialProfile, grid: Grid | None = None) -> CriticalCovering:
    """Greedy maximal packing by critical balls, scanning nodes lexicographically.

    A node becomes a new center iff it lies in no previously accepted ball
    Q_k = B(x_k, rho(x_k)). The overlap count of Q_k is the number of j with
    2Q_j meeting 2Q_k, computed over all pairs of centers.
    """
    grid = profile.grid if grid is None else grid
    if grid != profile.grid:
        raise ArgumentError("covering grid must match the potential grid")
    nodes = grid.nodes
    rho = profile.rho_table
    covered = np.zeros(grid.node_count, dtype=bool)
    centers = []
    for i in range(grid.node_count):
        if covered[i]:
            continue
        centers.append(i)
        covered |= distances(nodes, nodes[i]) <= rho[i]
    centers = np.asarray(centers, dtype=np.int64)
    radii = rho[centers]
    pts = nodes[centers]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    meets = dist <= 2 * radii[:, None] + 2 * radii[None, :]
    return CriticalCovering(grid=grid, centers=centers, radii=radii,
                            overlap_counts=meets.sum(axis=1), coverage=float(covered.mean()))


def export_rho_csv(profile: PotentialProfile, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = profile.grid.d
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["rho", "capped"])
        for x, r, c in zip(profile.grid.nodes, profile.rho_table, profile.capped):
            w.writerow([repr(float(v)) for v in x] + [repr(float(r)), int(c)])
    return path
