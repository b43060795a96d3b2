"""ℓ^r_n surrogates for X, vector-valued norms, BMO_L and H^1_L atoms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ._validation import (
    ArgumentError,
    ConstructionError,
    DomainError,
    check_field,
)
from .grid import Ball, Grid, ball_mask, distances
from .potential import PotentialProfile

__all__ = [
    "BanachSurrogate",
    "x_norm",
    "modulus_of_convexity",
    "lp_modulus_closed_form",
    "lp_norm",
    "weak_l1",
    "BallFamily",
    "BMOReport",
    "bmo_L_norm",
    "Atom",
    "make_atom",
    "is_atom",
    "h1_norm_upper",
    "save_atoms",
    "load_atoms",
]


@dataclass(frozen=True)
class BanachSurrogate:
    """X = ℓ^r_n, the space R^n with the r-norm (r may be ``inf``)."""

    r: float = 2.0
    n: int = 1

    def __post_init__(self):
        r = float(self.r)
        if not (r >= 1):
            raise ArgumentError(f"exponent r must lie in [1, inf], got {self.r!r}")
        if int(self.n) != self.n or self.n < 1:
            raise ArgumentError("component count n must be a positive integer")
        object.__setattr__(self, "r", r)

    @property
    def label(self) -> str:
        r = "inf" if math.isinf(self.r) else f"{self.r:g}"
        return f"l{r}_{self.n}"

    def norm(self, v, axis: int = -1) -> np.ndarray:
        """Norm along ``axis`` (vectorized)."""
        v = np.abs(np.asarray(v, dtype=np.float64))
        if v.shape[axis] != self.n:
            raise ArgumentError(f"vectors have {v.shape[axis]} components, X has {self.n}")
        if math.isinf(self.r):
            return v.max(axis=axis)
        if self.r == 1:
            return v.sum(axis=axis)
        if self.r == 2:
            return np.sqrt(np.sum(v * v, axis=axis))
        scale = v.max(axis=axis, keepdims=True)
        safe = np.where(scale > 0, scale, 1.0)
        return np.squeeze(safe, axis) * np.sum((v / safe) ** self.r, axis=axis) ** (1 / self.r)


def x_norm(X: BanachSurrogate, v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ArgumentError("x_norm takes a single vector")
    return float(X.norm(v))


def _field_norms(f, X: BanachSurrogate | None, grid: Grid) -> np.ndarray:
    """Pointwise ‖f(x)‖_X for a scalar (N,) or vector (N, n) field."""
    f = check_field(f, grid.node_count, allow_nd=False)
    if f.ndim == 1:
        if X is not None and X.n != 1:
            raise ArgumentError("scalar field given for a multi-component X")
        return np.abs(f)
    X = BanachSurrogate(2.0, f.shape[1]) if X is None else X
    return X.norm(f, axis=1)


# --------------------------------------------------------------------------
# modulus of convexity


def lp_modulus_closed_form(r: float, eps):
    """Modulus of convexity of ℓ^r (n >= 2) for 2 <= r < inf: 1 - (1 - (ε/2)^r)^(1/r)."""
    eps = np.asarray(eps, dtype=np.float64)
    return 1 - (1 - (eps / 2) ** r) ** (1 / r)


def _unit(X, v):
    return v / X.norm(v)[..., None]


def _pair_at_distance(X, x, w, eps):
    """Unit y on the ray-normalized path x + s w with ‖x - y‖ = ε (bisection in s)."""
    lo = np.zeros(len(x))
    hi = np.full(len(x), 1.0)
    dist = lambda s: X.norm(x - _unit(X, x + s[:, None] * w))
    for _ in range(60):
        grow = dist(hi) < eps
        if not grow.any():
            break
        hi = np.where(grow, hi * 4, hi)
    ok = dist(hi) >= eps
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        below = dist(mid) < eps
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    y = _unit(X, x + hi[:, None] * w)
    return y, ok


def _defects(X, x, y):
    return 1 - X.norm(0.5 * (x + y))


def modulus_of_convexity(X: BanachSurrogate, eps: float, n_samples: int = 4000, seed: int = 0,
                         *, descent_steps: int = 200) -> float:
    """Upper estimate of δ_X(ε) = inf{1 - ‖(x+y)/2‖ : ‖x‖ = ‖y‖ = 1, ‖x - y‖ = ε}.

    Random unit pairs at distance ε are drawn, then the best few are refined by
    a shrinking random local search. Deterministic for a given seed.
    """
    if not 0 < eps < 2:
        raise ArgumentError("ε must lie in (0, 2)")
    if X.n == 1:
        # On the real line, unit vectors at distance ε < 2 coincide; the set is empty.
        return math.inf
    rng = np.random.default_rng(seed)
    x = _unit(X, rng.standard_normal((n_samples, X.n)))
    w = rng.standard_normal((n_samples, X.n))
    y, ok = _pair_at_distance(X, x, w, eps)
    vals = np.where(ok, _defects(X, x, y), np.inf)
    k = min(16, n_samples)
    best = np.argsort(vals)[:k]
    bx, bw, bv = x[best], w[best], vals[best]
    step = 0.5
    for _ in range(descent_steps):
        cx = _unit(X, bx + step * rng.standard_normal(bx.shape))
        cw = bw + step * rng.standard_normal(bw.shape)
        cy, cok = _pair_at_distance(X, cx, cw, eps)
        cv = np.where(cok, _defects(X, cx, cy), np.inf)
        better = cv < bv
        bx[better], bw[better], bv[better] = cx[better], cw[better], cv[better]
        step = max(step * 0.97, 1e-4)
    return float(max(bv.min(), 0.0))


# --------------------------------------------------------------------------
# L^p and weak L^1


def lp_norm(f, p: float, X: BanachSurrogate | None, grid: Grid) -> float:
    """(sum_x ‖f(x)‖_X^p h^d)^(1/p); the maximum for p = inf."""
    p = float(p)
    if not p >= 1:
        raise ArgumentError("p must lie in [1, inf]")
    v = _field_norms(f, X, grid)
    if math.isinf(p):
        return float(v.max())
    scale = v.max()
    if scale == 0:
        return 0.0
    return float(scale * (np.sum((v / scale) ** p) * grid.cell_volume) ** (1 / p))


def weak_l1(f, X: BanachSurrogate | None, grid: Grid) -> float:
    """sup_λ λ |{‖f‖_X > λ}|, realized at the attained values.

    Just below each attained value v the level set is {‖f‖ >= v}, so the
    supremum equals max_v v * #{‖f‖ >= v} * h^d.
    """
    v = np.sort(_field_norms(f, X, grid))[::-1]
    if v.size == 0 or v[0] == 0:
        return 0.0
    counts = np.searchsorted(-v, -v, side="right")
    return float(np.max(v * counts) * grid.cell_volume)


# --------------------------------------------------------------------------
# BMO_L


@dataclass
class BallFamily:
    """Balls with node centers, flagged small (r < ρ(center)) or big."""

    grid: Grid
    centers: np.ndarray  # node indices
    radii: np.ndarray
    small: np.ndarray

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.int64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.small = np.asarray(self.small, dtype=bool)
        if not (len(self.centers) == len(self.radii) == len(self.small)):
            raise ArgumentError("ball family arrays must have equal length")
        if np.any(self.radii <= 0):
            raise ArgumentError("ball radii must be positive")

    def __len__(self):
        return len(self.centers)

    @classmethod
    def from_balls(cls, grid: Grid, centers, radii, profile: PotentialProfile) -> "BallFamily":
        centers = np.asarray(centers, dtype=np.int64)
        radii = np.asarray(radii, dtype=np.float64)
        return cls(grid, centers, radii, radii < profile.rho_table[centers])

    @classmethod
    def default(cls, profile: PotentialProfile, n_radii: int = 16, stride: int = 1,
                r_min: float | None = None) -> "BallFamily":
        """Balls at every ``stride``-th node along each axis with geometric radii from
        ``r_min`` (default h) up to the half width."""
        grid = profile.grid
        keep = np.all(grid.multi_index(np.arange(grid.node_count)) % stride == 0, axis=1)
        nodes = np.flatnonzero(keep)
        radii = np.geomspace(grid.spacing if r_min is None else r_min, grid.half_width, n_radii)
        c, r = np.meshgrid(nodes, radii, indexing="ij")
        return cls.from_balls(grid, c.reshape(-1), r.reshape(-1), profile)

    @classmethod
    def lattice(cls, profile: PotentialProfile, per_axis: int = 5, n_radii: int = 8,
                r_min: float | None = None, r_max: float | None = None,
                extent: float = 0.6) -> "BallFamily":
        """Balls centered at the nodes nearest a fixed physical lattice of
        ``per_axis``^d points in [-extent a, extent a]^d, with geometric radii.

        The family describes the same balls on every resolution of a box,
        up to snapping centers to nodes.
        """
        grid = profile.grid
        a = grid.half_width
        ticks = np.linspace(-extent * a, extent * a, per_axis)
        mesh = np.meshgrid(*([ticks] * grid.d), indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        nodes = np.array([grid.nearest_node(p) for p in pts], dtype=np.int64)
        radii = np.geomspace(a / 8 if r_min is None else r_min, a if r_max is None else r_max, n_radii)
        c, r = np.meshgrid(nodes, radii, indexing="ij")
        return cls.from_balls(grid, c.reshape(-1), r.reshape(-1), profile)

    def ball(self, k: int) -> Ball:
        return Ball(self.grid.nodes[self.centers[k]], self.radii[k])

    def mask(self, k: int) -> np.ndarray:
        return distances(self.grid.nodes, self.grid.nodes[self.centers[k]]) <= self.radii[k]

    def membership(self) -> tuple[np.ndarray, np.ndarray]:
        """(ball index, node index) pairs for every node inside every ball, cached."""
        if getattr(self, "_members", None) is None:
            balls, nodes = [], []
            for k in range(len(self)):
                idx = np.flatnonzero(self.mask(k))
                if idx.size == 0:
                    raise DomainError(f"ball {k} contains no node")
                balls.append(np.full(idx.size, k, dtype=np.int64))
                nodes.append(idx)
            self._members = (np.concatenate(balls), np.concatenate(nodes))
        return self._members

    def counts(self) -> np.ndarray:
        return np.asarray(self.averaging_matrix().sum(axis=1)).reshape(-1)

    def averaging_matrix(self) -> sp.csr_matrix:
        """Sparse (balls x nodes) 0/1 incidence matrix, cached."""
        if getattr(self, "_incidence", None) is None:
            b, x = self.membership()
            self._incidence = sp.csr_matrix((np.ones(len(b)), (b, x)),
                                            shape=(len(self), self.grid.node_count))
        return self._incidence


@dataclass
class BMOReport:
    norm: float
    oscillation: np.ndarray
    average: np.ndarray  # nan on small balls
    binding_ball: int
    binding_condition: str

    def rows(self) -> list[dict]:
        out = []
        for k, (osc, avg) in enumerate(zip(self.oscillation, self.average)):
            if np.isnan(avg) or osc >= avg:
                cond = "oscillation"
            else:
                cond = "average"
            out.append({"ball": k, "oscillation": float(osc),
                        "average": None if np.isnan(avg) else float(avg), "binding": cond})
        return out


def bmo_L_norm(f, X: BanachSurrogate | None, family: BallFamily, profile: PotentialProfile, *,
               prune: bool = False, report: bool = False):
    """max over the family of oscillation averages, and of plain averages on big balls.

    With ``prune`` the oscillation of big balls is skipped, since it never
    exceeds twice the plain average; the result is then within a factor 2 of
    the unpruned value (and equal whenever a small ball or a big-ball average
    binds).
    """
    grid = family.grid
    if len(family) == 0:
        raise ArgumentError("ball family is empty")
    if not np.any(~family.small):
        raise ArgumentError("ball family has no big balls; only a seminorm would be computed")
    f = check_field(f, grid.node_count, allow_nd=False)
    vec = f if f.ndim == 2 else f[:, None]
    Xn = X if X is not None else BanachSurrogate(2.0, vec.shape[1])
    norms = Xn.norm(vec, axis=1)
    ball_id, node_id = family.membership()
    incidence = family.averaging_matrix()
    counts = family.counts()
    big = ~family.small
    avg = np.full(len(family), np.nan)
    avg[big] = (incidence @ norms / counts)[big]
    keep = family.small[ball_id] if prune else np.ones(len(ball_id), dtype=bool)
    b, x = ball_id[keep], node_id[keep]
    means = (incidence @ vec) / counts[:, None]
    dev = Xn.norm(vec[x] - means[b], axis=1)
    osc = np.bincount(b, weights=dev, minlength=len(family)) / counts
    cand = np.maximum(osc, np.nan_to_num(avg, nan=-np.inf))
    k = int(np.argmax(cand))
    value = float(cand[k])
    cond = "average" if (not np.isnan(avg[k]) and avg[k] > osc[k]) else "oscillation"
    if report:
        return BMOReport(value, osc, avg, k, cond)
    return value


# --------------------------------------------------------------------------
# atoms


@dataclass
class Atom:
    values: np.ndarray  # (N,) or (N, n)
    center: int  # node index
    radius: float
    kind: str  # "small" | "big"

    @property
    def ball(self):
        return self.center, self.radius


def _ball_nodes(grid: Grid, center: int, radius: float) -> np.ndarray:
    return ball_mask(grid, Ball(grid.nodes[center], radius))


def _measure(grid: Grid, mask: np.ndarray) -> float:
    return int(mask.sum()) * grid.cell_volume


def _scale_to_bound(raw: np.ndarray, X: BanachSurrogate, measure: float) -> np.ndarray:
    bound = 1.0 / measure
    out = raw * (bound / X.norm(raw, axis=1).max())
    while X.norm(out, axis=1).max() > bound:
        out = out * (1.0 - 2.0 ** -52)
    return out


def make_atom(grid: Grid, center: int, radius: float, kind: str, profile: PotentialProfile,
              seed: int, X: BanachSurrogate | None = None) -> Atom:
    """A random atom on B(center, radius).

    Small atoms are assembled from ± pairs of values placed on disjoint node
    pairs, which makes their integral vanish exactly in floating point; an
    odd leftover node gets the value 0. Big atoms are random and unsigned.
    Values are scaled so that the largest X-norm is 1/|B| up to a few ulps,
    rounded down so the size condition holds exactly.
    """
    if kind not in ("small", "big"):
        raise ArgumentError(f"atom kind must be 'small' or 'big', got {kind!r}")
    rho = profile.rho_table[center]
    if (kind == "small") != (radius < rho):
        raise ConstructionError(f"radius {radius:g} vs ρ={rho:g} is not a {kind} ball")
    mask = _ball_nodes(grid, center, radius)
    idx = np.flatnonzero(mask)
    if kind == "small" and len(idx) < 2:
        raise ConstructionError("a small atom needs at least two nodes to cancel")
    rng = np.random.default_rng(seed)
    n = 1 if X is None else X.n
    Xn = X if X is not None else BanachSurrogate(2.0, 1)
    vals = np.zeros((grid.node_count, n))
    if kind == "small":
        perm = rng.permutation(idx)
        half = len(perm) // 2
        raw = rng.standard_normal((half, n))
        raw = _scale_to_bound(raw, Xn, _measure(grid, mask))
        vals[perm[:half]] = raw
        vals[perm[half:2 * half]] = -raw
    else:
        raw = rng.uniform(0.1, 1.0, size=(len(idx), n))
        vals[idx] = _scale_to_bound(raw, Xn, _measure(grid, mask))
    return Atom(vals if X is not None else vals[:, 0], center, float(radius), kind)


def is_atom(a: Atom, profile: PotentialProfile, X: BanachSurrogate | None = None) -> bool:
    """Exact check of support, size and (for small balls) cancellation."""
    grid = profile.grid
    vals = np.asarray(a.values, dtype=np.float64)
    vec = vals if vals.ndim == 2 else vals[:, None]
    Xn = X if X is not None else BanachSurrogate(2.0, vec.shape[1])
    mask = _ball_nodes(grid, a.center, a.radius)
    if np.any(vec[~mask] != 0):
        return False
    if Xn.norm(vec, axis=1).max() > 1.0 / _measure(grid, mask):
        return False
    small = a.radius < profile.rho_table[a.center]
    if small:
        for col in vec[mask].T:
            if math.fsum(col) != 0.0:
                return False
    return True


def h1_norm_upper(f, decomposition, grid: Grid, X: BanachSurrogate | None = None,
                  tol: float = 1e-8) -> float:
    """sum |λ_j| for a given decomposition f = sum λ_j a_j (an upper bound for the H^1 norm)."""
    f = check_field(f, grid.node_count, allow_nd=False)
    rebuilt = np.zeros_like(f)
    total = 0.0
    for lam, atom in decomposition:
        rebuilt = rebuilt + lam * np.asarray(atom.values).reshape(f.shape)
        total += abs(lam)
    err = lp_norm(f - rebuilt, 1, X, grid)
    scale = max(lp_norm(f, 1, X, grid), 1.0)
    if err > tol * scale:
        raise ArgumentError(f"atomic decomposition misses f by {err:.3e} in L^1")
    return float(total)


def save_atoms(atoms, directory) -> Path:
    """Write each atom's values to ``atom_<k>.npy`` and an index ``atoms.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for k, a in enumerate(atoms):
        path = directory / f"atom_{k}.npy"
        np.save(path, np.asarray(a.values))
        index.append({"center": int(a.center), "radius": float(a.radius), "kind": a.kind,
                      "values": path.name})
    out = directory / "atoms.json"
    out.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return out


def load_atoms(index_path) -> list[Atom]:
    index_path = Path(index_path)
    entries = json.loads(index_path.read_text())
    return [Atom(np.load(index_path.parent / e["values"]), e["center"], e["radius"], e["kind"])
            for e in entries]
