"""Discretized L = -Δ + V, its spectral calculus, and heat/Poisson kernels.

Two spectral engines share one interface:

* :class:`SpectralDecomposition` diagonalizes the assembled operator matrix
  densely and works for any potential.
* :class:`SeparableDecomposition` handles potentials of the form
  V(x) = sum_i v_i(x_i) (constants and c|x|^2). It diagonalizes one small
  matrix per axis and never forms the full eigenvector matrix, which is what
  makes 20^3 grids and fine heat-kernel checks affordable.

Eigenfunctions are normalized for the node-weighted inner product
<f, g> = sum_x f(x) g(x) h^d, so a kernel K(x, y) = sum_j m(λ_j) φ_j(x) φ_j(y)
acts on fields by (K f)(x) = sum_y K(x, y) f(y) h^d.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import gamma, pi, sqrt
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.integrate import quad
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ArgumentError,
    ConsistencyError,
    NumericError,
    ResourceError,
    check_field,
    check_positive,
)
from .grid import Grid
from .potential import PotentialProfile

__all__ = [
    "DEFAULT_NODE_CAP",
    "DEFAULT_N_QUAD",
    "assemble_operator",
    "spectral_decompose",
    "decompose",
    "SpectralDecomposition",
    "SeparableDecomposition",
    "KernelMatrix",
    "heat_kernel",
    "classical_heat_kernel",
    "mehler_kernel_oracle",
    "subordination_nodes",
    "subordination_weight_integral",
    "poisson_multiplier_quadrature",
    "poisson_subordinated",
    "poisson_t_derivative",
    "classical_poisson_kernel",
    "classical_poisson_tderiv_kernel",
    "poisson_constant",
    "SchrodingerSemigroup",
]

DEFAULT_NODE_CAP = 20 ** 3
DEFAULT_N_QUAD = 96
SUBORDINATION_SPAN = 1e4
SUBORDINATION_TOL = 1e-3
DERIVATIVE_TOL = 1e-3


def _laplacian_1d(n: int, h: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / h ** 2


def assemble_operator(profile: PotentialProfile, grid: Grid | None = None, *,
                      node_cap: int = DEFAULT_NODE_CAP) -> np.ndarray:
    """Dense matrix of -Δ_h + diag(V) with the (2d+1)-point stencil.

    Every grid node is an unknown; the values just outside the box are taken
    to be zero (Dirichlet walls).
    """
    grid = profile.grid if grid is None else grid
    if grid != profile.grid:
        raise ArgumentError("operator grid must match the potential grid")
    if grid.node_count > node_cap:
        raise ResourceError(f"{grid.node_count} nodes exceeds the cap of {node_cap}")
    n, d = grid.points_per_axis, grid.d
    lap = _laplacian_1d(n, grid.spacing)
    eye = sp.identity(n, format="csr")
    total = sp.csr_matrix((n ** d, n ** d))
    for axis in range(d):
        term = sp.identity(1, format="csr")
        for k in range(d):
            term = sp.kron(term, lap if k == axis else eye, format="csr")
        total = total + term
    mat = total.toarray()
    mat[np.diag_indices_from(mat)] += profile.values
    return mat


# --------------------------------------------------------------------------
# spectral engines


class _Spectral:
    """Shared functional calculus; subclasses provide the transforms."""

    grid: Grid
    eigenvalues: np.ndarray

    def __len__(self):
        return len(self.eigenvalues)

    def analyze(self, f) -> np.ndarray:
        raise NotImplementedError

    def synthesize(self, coef) -> np.ndarray:
        raise NotImplementedError

    def eigvec_rows(self, rows) -> np.ndarray:
        raise NotImplementedError

    @property
    def eigenvectors(self) -> np.ndarray:
        """φ_j(x) as an (N, M) array, built on first access."""
        if getattr(self, "_phi", None) is None:
            self._phi = self.eigvec_rows(np.arange(self.grid.node_count))
        return self._phi

    def apply(self, multiplier, f) -> np.ndarray:
        """m(L) f for a multiplier given as values on the spectrum or a callable."""
        f = check_field(f, self.grid.node_count)
        mult = self._mult(multiplier)
        coef = self.analyze(f)
        return self.synthesize(mult.reshape((-1,) + (1,) * (coef.ndim - 1)) * coef)

    def kernel(self, multiplier, rows=None, cols=None) -> np.ndarray:
        """Kernel values sum_j m(λ_j) φ_j(x) φ_j(y) for x in rows, y in cols."""
        mult = self._mult(multiplier)
        all_nodes = np.arange(self.grid.node_count)
        rows = all_nodes if rows is None else np.asarray(rows)
        cols = all_nodes if cols is None else np.asarray(cols)
        pr = self.eigvec_rows(rows)
        pc = pr if np.array_equal(rows, cols) else self.eigvec_rows(cols)
        return (pr * mult) @ pc.T

    def _mult(self, multiplier) -> np.ndarray:
        if callable(multiplier):
            multiplier = multiplier(self.eigenvalues)
        mult = np.asarray(multiplier, dtype=np.float64)
        if mult.shape != self.eigenvalues.shape:
            raise ArgumentError("multiplier must have one value per eigenvalue")
        return mult


@dataclass
class SpectralDecomposition(_Spectral):
    """Full eigendecomposition of a dense operator matrix."""

    grid: Grid
    eigenvalues: np.ndarray
    vectors: np.ndarray  # ℓ²-orthonormal columns (unweighted)
    _phi: np.ndarray | None = field(default=None, init=False, repr=False)

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.vectors / sqrt(self.grid.cell_volume)

    def analyze(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        flat = f.reshape(f.shape[0], -1)
        out = self.vectors.T @ flat * sqrt(self.grid.cell_volume)
        return out.reshape((len(self),) + f.shape[1:])

    def synthesize(self, coef) -> np.ndarray:
        coef = np.asarray(coef, dtype=np.float64)
        flat = coef.reshape(coef.shape[0], -1)
        out = self.vectors @ flat / sqrt(self.grid.cell_volume)
        return out.reshape((self.grid.node_count,) + coef.shape[1:])

    def eigvec_rows(self, rows) -> np.ndarray:
        return self.vectors[np.asarray(rows)] / sqrt(self.grid.cell_volume)

    def reconstruction_error(self, op: np.ndarray) -> float:
        rebuilt = (self.vectors * self.eigenvalues) @ self.vectors.T
        return float(np.linalg.norm(op - rebuilt) / np.linalg.norm(op))

    def gram_defect(self) -> float:
        gram = self.vectors.T @ self.vectors
        return float(np.abs(gram - np.eye(len(self))).max())


@dataclass
class SeparableDecomposition(_Spectral):
    """Tensor-product eigendecomposition for V(x) = sum_i v_i(x_i).

    Eigenvalues are sums of per-axis eigenvalues, sorted ascending; ``order``
    maps sorted position to the C-order multi-index of axis eigenpairs.
    """

    grid: Grid
    axis_values: list
    axis_vectors: list  # each (n, n), columns orthonormal for weight h
    eigenvalues: np.ndarray = field(init=False)
    order: np.ndarray = field(init=False, repr=False)
    _phi: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        total = np.zeros(())
        for lam in self.axis_values:
            total = np.add.outer(total, lam)
        total = total.reshape(-1)
        self.order = np.argsort(total, kind="stable")
        self.eigenvalues = total[self.order]

    def analyze(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        h = self.grid.spacing
        arr = f.reshape(self.grid.shape + f.shape[1:])
        for axis, vec in enumerate(self.axis_vectors):
            arr = np.moveaxis(np.tensordot(vec, arr, axes=([0], [axis])), 0, axis) * h
        flat = arr.reshape((-1,) + f.shape[1:])
        return flat[self.order]

    def synthesize(self, coef) -> np.ndarray:
        coef = np.asarray(coef, dtype=np.float64)
        full = np.empty_like(coef)
        full[self.order] = coef
        arr = full.reshape(self.grid.shape + coef.shape[1:])
        for axis, vec in enumerate(self.axis_vectors):
            arr = np.moveaxis(np.tensordot(vec, arr, axes=([1], [axis])), 0, axis)
        return arr.reshape((self.grid.node_count,) + coef.shape[1:])

    def eigvec_rows(self, rows) -> np.ndarray:
        multi = self.grid.multi_index(np.asarray(rows).reshape(-1))
        out = np.ones((multi.shape[0], 1))
        for axis, vec in enumerate(self.axis_vectors):
            out = (out[:, :, None] * vec[multi[:, axis]][:, None, :]).reshape(multi.shape[0], -1)
        return out[:, self.order]

    def axis_kernels(self, axis_multiplier: Callable[[np.ndarray], np.ndarray]) -> list[np.ndarray]:
        """Per-axis kernels for a multiplier that factors over axes (e.g. exp(-tλ))."""
        return [(vec * axis_multiplier(lam)) @ vec.T for lam, vec in zip(self.axis_values, self.axis_vectors)]

    def product_kernel(self, axis_multiplier, rows=None, cols=None) -> np.ndarray:
        """Kernel of a factorizable multiplier as a product of per-axis kernels."""
        kernels = self.axis_kernels(axis_multiplier)
        all_nodes = np.arange(self.grid.node_count)
        rows = all_nodes if rows is None else np.asarray(rows)
        cols = all_nodes if cols is None else np.asarray(cols)
        mr, mc = self.grid.multi_index(rows), self.grid.multi_index(cols)
        out = np.ones((len(rows), len(cols)))
        for axis, k in enumerate(kernels):
            out *= k[np.ix_(mr[:, axis], mc[:, axis])]
        return out


def spectral_decompose(op: np.ndarray, grid: Grid) -> SpectralDecomposition:
    """Dense symmetric eigendecomposition, eigenvalues ascending."""
    op = np.asarray(op, dtype=np.float64)
    if op.shape != (grid.node_count, grid.node_count):
        raise ArgumentError("operator shape does not match the grid")
    if not np.array_equal(op, op.T):
        raise ArgumentError("operator matrix is not symmetric")
    try:
        lam, vec = scipy.linalg.eigh(op, driver="evd")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    return SpectralDecomposition(grid, lam, vec)


def _separable_decompose(profile: PotentialProfile) -> SeparableDecomposition:
    grid = profile.grid
    lap = _laplacian_1d(grid.points_per_axis, grid.spacing).toarray()
    values, vectors = [], []
    for v in profile.axis_potentials():
        lam, vec = scipy.linalg.eigh(lap + np.diag(v))
        values.append(lam)
        vectors.append(vec / sqrt(grid.spacing))
    return SeparableDecomposition(grid, values, vectors)


def decompose(profile: PotentialProfile, method: str = "auto", *,
              node_cap: int = DEFAULT_NODE_CAP) -> SpectralDecomposition | SeparableDecomposition:
    """Diagonalize L for a potential; ``method`` is ``auto``, ``dense`` or ``separable``."""
    if method not in ("auto", "dense", "separable"):
        raise ArgumentError(f"unknown decomposition method {method!r}")
    if method == "separable" or (method == "auto" and profile.is_separable):
        return _separable_decompose(profile)
    return spectral_decompose(assemble_operator(profile, node_cap=node_cap), profile.grid)


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelMatrix:
    kind: str
    t: float
    values: np.ndarray
    grid: Grid
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    mismatch: float | None = None

    def apply(self, f) -> np.ndarray:
        if self.cols is not None:
            raise ArgumentError("partial kernels cannot act on full fields")
        f = check_field(f, self.grid.node_count)
        return np.tensordot(self.values, f, axes=([1], [0])) * self.grid.cell_volume

    def row_mass(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.grid.cell_volume

    def save(self, path) -> tuple[Path, Path]:
        """Write row-major float64 values to ``path`` and a JSON sidecar next to it."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.values, dtype="<f8").tofile(path)
        meta = {"kind": self.kind, "t": self.t, "grid": self.grid.to_dict(),
                "shape": list(self.values.shape)}
        if self.mismatch is not None:
            meta["mismatch"] = self.mismatch
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return path, side


def _check_t(t: float) -> float:
    return check_positive(t, "t")


def heat_kernel(dec, t: float, rows=None, cols=None) -> KernelMatrix:
    """k_t(x, y) = sum_j exp(-t λ_j) φ_j(x) φ_j(y)."""
    t = _check_t(t)
    if isinstance(dec, SeparableDecomposition):
        vals = dec.product_kernel(lambda lam: np.exp(-t * lam), rows, cols)
    else:
        vals = dec.kernel(np.exp(-t * dec.eigenvalues), rows, cols)
    return KernelMatrix("heat-L", t, vals, dec.grid, _opt(rows), _opt(cols))


def _opt(idx):
    return None if idx is None else np.asarray(idx)


def _check_times(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return _check_t(t)
    if not np.all(np.isfinite(t) & (t > 0)):
        raise ArgumentError("all times t must be positive")
    return t


def classical_heat_kernel(x, y, t, d: int):
    """h_t(x - y) = (4πt)^(-d/2) exp(-|x - y|^2 / 4t); t may broadcast with the points."""
    t = _check_times(t)
    z = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    r2 = np.sum(z * z, axis=-1)
    return (4 * pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))


def mehler_kernel_oracle(x, y, t, d: int):
    """Heat kernel of -Δ + |x|^2 on R^d (Mehler's formula)."""
    t = _check_times(t)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    s, c = np.sinh(2 * t), np.cosh(2 * t)
    expo = (c * (np.sum(x * x, -1) + np.sum(y * y, -1)) - 2 * np.sum(x * y, -1)) / (2 * s)
    return (2 * pi * s) ** (-d / 2) * np.exp(-expo)


# --------------------------------------------------------------------------
# subordination


def subordination_nodes(t: float, n_quad: int = DEFAULT_N_QUAD) -> tuple[np.ndarray, np.ndarray]:
    """Nodes u_k and weights w_k with e^{-t√λ} ≈ sum_k w_k e^{-u_k λ}.

    Trapezoid rule in log u on [t^2/10^4, 10^4 t^2] applied to the
    subordination density (t / 2√π) e^{-t^2/4u} u^{-3/2}.
    """
    t = _check_t(t)
    if n_quad < 32:
        raise ArgumentError("n_quad must be at least 32")
    s = np.linspace(np.log(t * t / SUBORDINATION_SPAN), np.log(t * t * SUBORDINATION_SPAN), n_quad)
    u = np.exp(s)
    step = s[1] - s[0]
    w = t / (2 * sqrt(pi)) * np.exp(-t * t / (4 * u)) * u ** -0.5 * step
    w[[0, -1]] *= 0.5
    return u, w


def subordination_weight_integral(t: float) -> float:
    """(t / 2√π) ∫_0^∞ e^{-t^2/4u} u^{-3/2} du by adaptive quadrature in log u."""
    t = _check_t(t)

    def integrand(s):
        # In log u the density is (t / 2√π) exp(-t^2 e^{-s} / 4 - s / 2).
        return t / (2 * sqrt(pi)) * np.exp(-t * t * np.exp(-s) / 4 - s / 2)

    centre = np.log(t * t / 2)
    total = 0.0
    for a, b in ((-np.inf, centre - 10), (centre - 10, centre + 10), (centre + 10, np.inf)):
        val, _ = quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += val
    return total


def poisson_multiplier_quadrature(lam, t: float, n_quad: int = DEFAULT_N_QUAD) -> np.ndarray:
    u, w = subordination_nodes(t, n_quad)
    lam = np.asarray(lam, dtype=np.float64)
    return np.exp(-np.multiply.outer(lam, u)) @ w


def _relative_gap(approx, exact) -> float:
    scale = np.abs(exact).max()
    return float(np.abs(approx - exact).max() / scale) if scale > 0 else float(np.abs(approx).max())


def poisson_subordinated(dec, t: float, n_quad: int = DEFAULT_N_QUAD, rows=None, cols=None, *,
                         tol: float = SUBORDINATION_TOL) -> KernelMatrix:
    """Poisson kernel of L obtained by subordinating the heat kernel.

    The quadrature is compared with the exact spectral multiplier e^{-t√λ}
    in relative operator norm; the gap is stored as ``mismatch`` and a gap
    above ``tol`` raises :class:`ConsistencyError`.
    """
    u, w = subordination_nodes(t, n_quad)
    lam = np.clip(dec.eigenvalues, 0, None)
    quad_mult = np.exp(-np.multiply.outer(lam, u)) @ w
    gap = _relative_gap(quad_mult, np.exp(-t * np.sqrt(lam)))
    if gap > tol:
        raise ConsistencyError(f"subordination mismatch {gap:.3e} exceeds {tol:g} at t={t}")
    if isinstance(dec, SeparableDecomposition):
        vals = sum(wk * dec.product_kernel(lambda la, uk=uk: np.exp(-uk * la), rows, cols)
                   for uk, wk in zip(u, w))
    else:
        vals = dec.kernel(quad_mult, rows, cols)
    return KernelMatrix("poisson-L", t, vals, dec.grid, _opt(rows), _opt(cols), mismatch=gap)


def poisson_tderiv_multiplier(lam, t: float) -> np.ndarray:
    """∂_t e^{-t√λ} = -√λ e^{-t√λ}."""
    root = np.sqrt(np.clip(lam, 0, None))
    return -root * np.exp(-t * root)


def poisson_t_derivative(dec, t: float, rows=None, cols=None, *, eps: float | None = None,
                         n_quad: int = DEFAULT_N_QUAD, tol: float = DERIVATIVE_TOL) -> KernelMatrix:
    """Kernel of ∂_t e^{-t√L}, cross-checked by a centered difference of the subordinated multipliers."""
    t = _check_t(t)
    eps = 1e-3 * t if eps is None else eps
    lam = np.clip(dec.eigenvalues, 0, None)
    mult = poisson_tderiv_multiplier(lam, t)
    fd = (poisson_multiplier_quadrature(lam, t + eps, n_quad)
          - poisson_multiplier_quadrature(lam, t - eps, n_quad)) / (2 * eps)
    gap = _relative_gap(fd, mult)
    if gap > tol:
        raise ConsistencyError(f"finite-difference mismatch {gap:.3e} exceeds {tol:g} at t={t}")
    vals = dec.kernel(mult, rows, cols)
    return KernelMatrix("poisson-tderiv-L", t, vals, dec.grid, _opt(rows), _opt(cols), mismatch=gap)


def poisson_constant(d: int) -> float:
    """c_d = Γ((d+1)/2) / π^((d+1)/2)."""
    return gamma((d + 1) / 2) / pi ** ((d + 1) / 2)


def classical_poisson_kernel(z, t: float, d: int):
    """P_t(z) = c_d t / (t^2 + |z|^2)^((d+1)/2); t may broadcast with z."""
    t = _check_times(t)
    z = np.asarray(z, dtype=np.float64)
    r2 = np.sum(z * z, axis=-1)
    return poisson_constant(d) * t / (t * t + r2) ** ((d + 1) / 2)


def classical_poisson_tderiv_kernel(z, t: float, d: int):
    """t ∂_t P_t(z) = c_d t (|z|^2 - d t^2) / (t^2 + |z|^2)^((d+3)/2)."""
    t = _check_times(t)
    z = np.asarray(z, dtype=np.float64)
    r2 = np.sum(z * z, axis=-1)
    return poisson_constant(d) * t * (r2 - d * t * t) / (t * t + r2) ** ((d + 3) / 2)


# --------------------------------------------------------------------------
# estimator


class SchrodingerSemigroup(TransformerMixin, BaseEstimator):
    """Apply e^{-tL}, e^{-t√L} or t∂_t e^{-t√L} to grid fields.

    Parameters mirror the run configuration: the grid, the potential and the
    time. ``fit`` diagonalizes L; ``transform`` takes an ``(N,)`` or
    ``(N, k)`` field on the grid nodes.
    """

    def __init__(self, d=3, half_width=1.0, points_per_axis=12, potential="constant", c=1.0,
                 beta=0.0, s=None, t=0.1, semigroup="heat", method="auto"):
        self.d = d
        self.half_width = half_width
        self.points_per_axis = points_per_axis
        self.potential = potential
        self.c = c
        self.beta = beta
        self.s = s
        self.t = t
        self.semigroup = semigroup
        self.method = method

    def fit(self, X=None, y=None):
        if self.semigroup not in ("heat", "poisson", "poisson_tderiv"):
            raise ArgumentError(f"unknown semigroup {self.semigroup!r}")
        _check_t(self.t)
        self.grid_ = Grid(self.d, self.half_width, self.points_per_axis)
        self.profile_ = PotentialProfile(self.grid_, kind=self.potential, c=self.c, beta=self.beta, s=self.s)
        self.decomposition_ = decompose(self.profile_, self.method)
        self.n_features_in_ = self.grid_.node_count
        return self

    def multiplier(self) -> np.ndarray:
        check_is_fitted(self, "decomposition_")
        lam = np.clip(self.decomposition_.eigenvalues, 0, None)
        if self.semigroup == "heat":
            return np.exp(-self.t * lam)
        if self.semigroup == "poisson":
            return np.exp(-self.t * np.sqrt(lam))
        return self.t * poisson_tderiv_multiplier(lam, self.t)

    def transform(self, X):
        check_is_fitted(self, "decomposition_")
        return self.decomposition_.apply(self.multiplier(), X)
