"""Empirical envelopes for the Gaussian upper bound and the perturbation bound of k_t."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .._validation import ArgumentError, FitError
from ..grid import Grid
from ..potential import PotentialProfile
from ..semigroup import (
    SeparableDecomposition,
    classical_heat_kernel,
    decompose,
    mehler_kernel_oracle,
)

log = logging.getLogger(__name__)

C_LADDER = 10.0 ** (np.arange(-64, 97) / 16)  # 1e-4 .. 1e6, ratio 10^(1/16)
N_BINS = 24
SAFETY = 2.0
TAIL_EXPONENT = 10.0  # pairs are kept where |x - y|^2 / 4t <= 10


def pointwise_heat(dec, x_idx, y_idx, t) -> np.ndarray:
    """k_t(x_i, y_i) for paired node indices and times."""
    x_idx, y_idx, t = (np.asarray(a) for a in (x_idx, y_idx, t))
    if isinstance(dec, SeparableDecomposition):
        mx, my = dec.grid.multi_index(x_idx), dec.grid.multi_index(y_idx)
        out = np.ones(len(t))
        for axis, (lam, vec) in enumerate(zip(dec.axis_values, dec.axis_vectors)):
            weights = np.exp(-np.outer(t, lam))
            out *= np.einsum("ij,ij,ij->i", weights, vec[mx[:, axis]], vec[my[:, axis]])
        return out
    out = np.empty(len(t))
    for start in range(0, len(t), 1024):
        sl = slice(start, start + 1024)
        px, py = dec.eigvec_rows(x_idx[sl]), dec.eigvec_rows(y_idx[sl])
        out[sl] = np.einsum("ij,ij,ij->i", np.exp(-np.outer(t[sl], dec.eigenvalues)), px, py)
    return out


def sample_triples(grid: Grid, n: int, t_range, seed: int, interior: float = 0.25):
    """Exactly n interior node pairs with log-uniform times and |x - y|^2 / 4t <= 10.

    y is drawn uniformly from the ball of radius sqrt(40 t) about x, snapped to
    the nearest node; draws whose snapped y leaves that ball or the interior
    are rejected and redrawn.
    """
    rng = np.random.default_rng(seed)
    inside = grid.interior_mask(interior)
    inner = np.flatnonzero(inside)
    limit = (1 - interior) * grid.half_width
    xs, ys, ts, have = [], [], [], 0
    while have < n:
        m = n - have + 64
        t = np.exp(rng.uniform(np.log(t_range[0]), np.log(t_range[1]), m))
        x = rng.choice(inner, m)
        reach = np.sqrt(4 * TAIL_EXPONENT * t)
        direction = rng.standard_normal((m, grid.d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = rng.uniform(0, 1, m) ** (1 / grid.d) * reach
        y_pts = np.clip(grid.nodes[x] + direction * radius[:, None], -limit, limit)
        y = np.array([grid.nearest_node(p) for p in y_pts])
        r2 = np.sum((grid.nodes[x] - grid.nodes[y]) ** 2, axis=1)
        keep = (r2 <= 4 * TAIL_EXPONENT * t) & inside[y]
        xs.append(x[keep]), ys.append(y[keep]), ts.append(t[keep])
        have += int(keep.sum())
    return tuple(np.concatenate(a)[:n] for a in (xs, ys, ts))


def _ladder_fit(ratios: np.ndarray, triples):
    worst = int(np.argmax(ratios))
    top = ratios[worst]
    idx = np.searchsorted(C_LADDER, top, side="left")
    if idx >= len(C_LADDER) or not np.isfinite(top):
        x, y, t = (a[worst] for a in triples)
        raise FitError(f"no ladder constant bounds the kernel; worst triple x={x}, y={y}, t={t:.4g}")
    return float(C_LADDER[idx]), int(idx), worst


@dataclass
class StepEnvelope:
    """Nonincreasing step function W on [0, inf) given by bin edges and values."""

    edges: np.ndarray
    values: np.ndarray

    def __call__(self, xi) -> np.ndarray:
        k = np.clip(np.searchsorted(self.edges, xi, side="right") - 1, 0, len(self.values) - 1)
        return self.values[k]

    @classmethod
    def fit(cls, xi, e, xi_max: float, safety: float = SAFETY) -> "StepEnvelope":
        edges = np.linspace(0.0, xi_max, N_BINS + 1)[:-1]
        k = np.clip(np.searchsorted(edges, xi, side="right") - 1, 0, N_BINS - 1)
        peak = np.zeros(N_BINS)
        np.maximum.at(peak, k, e)
        values = np.maximum.accumulate(peak[::-1])[::-1] * safety
        return cls(edges, values)

    def rows(self) -> list[dict]:
        return [{"xi_from": float(a), "W": float(v)} for a, v in zip(self.edges, self.values)]


@dataclass
class EnvelopeReport:
    alpha: float
    delta: float
    triples: int
    C_alpha: float
    gaussian_violations: int
    negative_entries: int
    perturbation_validated: bool
    holdout_pass_rate: float
    envelope: StepEnvelope
    worst_triple: dict
    shift_check: dict | None = None
    dual_path: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha, "delta": self.delta, "triples": self.triples,
            "C_alpha": self.C_alpha, "gaussian_violations": self.gaussian_violations,
            "negative_entries": self.negative_entries,
            "perturbation_validated": self.perturbation_validated,
            "holdout_pass_rate": self.holdout_pass_rate,
            "envelope": self.envelope.rows(), "worst_triple": self.worst_triple,
        }
        if self.shift_check is not None:
            out["shift_check"] = self.shift_check
        if self.dual_path is not None:
            out["dual_path"] = self.dual_path
        out.update(self.extra)
        return out


def _gaussian_bound(grid, x, y, t, rho, alpha):
    r2 = np.sum((grid.nodes[x] - grid.nodes[y]) ** 2, axis=1)
    root = np.sqrt(t)
    return t ** (-grid.d / 2) * np.exp(-r2 / (5 * t)) * (1 + root / rho[x] + root / rho[y]) ** (-alpha)


def _perturbation(grid, x, y, t, rho, delta, k, h, holdout, seed):
    """Fit W on a training split and validate it on the held-out split."""
    diff = np.abs(k - h)
    scale = (np.sqrt(t) / rho[x]) ** delta * t ** (-grid.d / 2)
    e = diff / scale
    xi = np.sqrt(np.sum((grid.nodes[x] - grid.nodes[y]) ** 2, axis=1) / t)
    perm = np.random.default_rng(seed).permutation(len(t))
    n_hold = int(round(holdout * len(t)))
    hold, train = perm[:n_hold], perm[n_hold:]
    env = StepEnvelope.fit(xi[train], e[train], float(xi.max()) + 1e-12)
    passed = e[hold] <= env(xi[hold])
    rate = float(passed.mean()) if len(hold) else 1.0
    return env, rate


def fit_envelopes_on(profile: PotentialProfile, dec, n_triples: int, t_range, seed: int,
                     alpha: float = 1.0, holdout: float = 0.2, dec_free=None) -> EnvelopeReport:
    """Gaussian-bound constant and perturbation envelope for one potential."""
    if not 0 < holdout < 1:
        raise ArgumentError("holdout fraction must lie in (0, 1)")
    grid = profile.grid
    rho = profile.rho_table
    x, y, t = sample_triples(grid, n_triples, t_range, seed)
    if np.any(rho[np.concatenate([x, y])] <= 0):
        raise ArgumentError("critical radius unresolved at sampled nodes; refine the grid")
    k = pointwise_heat(dec, x, y, t)
    negative = int(np.sum(k < -1e-10 * np.abs(k).max()))
    bound = _gaussian_bound(grid, x, y, t, rho, alpha)
    c_alpha, _, worst = _ladder_fit(k / bound, (x, y, t))
    violations = int(np.sum(k > c_alpha * bound))
    dec_free = decompose(PotentialProfile(grid, c=0.0)) if dec_free is None else dec_free
    h = pointwise_heat(dec_free, x, y, t)
    env, rate = _perturbation(grid, x, y, t, rho, profile.delta, k, h, holdout, seed + 1)
    report = EnvelopeReport(
        alpha=alpha, delta=profile.delta, triples=len(t), C_alpha=c_alpha,
        gaussian_violations=violations, negative_entries=negative,
        perturbation_validated=rate == 1.0, holdout_pass_rate=rate, envelope=env,
        worst_triple={"x": int(x[worst]), "y": int(y[worst]), "t": float(t[worst])})
    if profile.kind == "constant" and profile.c > 0:
        expected = (1 - np.exp(-profile.c * t)) * h
        gap = float(np.abs(np.abs(k - h) - expected).max() / max(h.max(), 1e-300))
        report.shift_check = {"max_rel_gap": gap,
                              "bounded_by_ct_h": bool(np.all(np.abs(k - h) <= profile.c * t * h + 1e-15))}
    if profile.kind == "power" and profile.beta == 2.0 and profile.c == 1.0:
        report.dual_path = _mehler_path(profile, x, y, t, k, alpha, holdout, seed, c_alpha)
    return report


def _mehler_path(profile, x, y, t, k_spec, alpha, holdout, seed, c_spec):
    grid = profile.grid
    rho = profile.rho_table
    px, py = grid.nodes[x], grid.nodes[y]
    k_m = mehler_kernel_oracle(px, py, t, grid.d)
    h_c = classical_heat_kernel(px, py, t, grid.d)
    bound = _gaussian_bound(grid, x, y, t, rho, alpha)
    c_m, _, _ = _ladder_fit(k_m / bound, (x, y, t))
    env, rate = _perturbation(grid, x, y, t, rho, profile.delta, k_m, h_c, holdout, seed + 1)
    step = abs(np.log(c_m / c_spec)) / np.log(C_LADDER[1] / C_LADDER[0])
    return {
        "C_alpha_mehler": c_m,
        "ladder_steps_apart": int(round(step)),
        "mehler_holdout_pass_rate": rate,
        "same_outcome": bool(round(step) <= 1 and rate == 1.0),
        "max_rel_kernel_gap": float(np.abs(k_spec - k_m).max() / k_m.max()),
    }


def fit_kernel_envelopes(config) -> EnvelopeReport:
    """Run the envelope fits described by a :class:`RunConfig`."""
    env_cfg = dict(config.envelopes)
    grid = config.build_grid(env_cfg.get("grid"))
    potential = dict(config.potential)
    potential.update(env_cfg.get("potential", {}))
    profile = PotentialProfile.from_config(grid, potential)
    dec = decompose(profile, node_cap=config.node_cap)
    return fit_envelopes_on(profile, dec, int(env_cfg.get("triples", 10000)),
                            tuple(env_cfg.get("t_range", (0.05, 0.5))), config.seeds["envelopes"],
                            alpha=float(env_cfg.get("alpha", 1.0)),
                            holdout=float(env_cfg.get("holdout", 0.2)))
