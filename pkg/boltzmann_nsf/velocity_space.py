"""
Velocity-space discretization: the truncated tensor lattice, Maxwellian tables,
the discrete L2 inner product, trilinear interpolation and the anisotropic
H^{s,*} norm family.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import erf

from .exceptions import DenseBudgetError, GridError

logger = logging.getLogger(__name__)

DEFAULT_DENSE_BUDGET = 4096
# 1D aliasing error of the midpoint rule for a unit Gaussian: 2 exp(-2 pi^2 / h^2)
_ALIAS_FACTOR = 2.0


@dataclass(frozen=True)
class MaxwellianTables:
    """Maxwellian values at the grid nodes."""

    mu: np.ndarray
    sqrt_mu: np.ndarray
    speed_sq: np.ndarray

    def bracket(self, k: float) -> np.ndarray:
        """Japanese bracket <v>^k = (1 + |v|^2)^(k/2)."""
        return (1.0 + self.speed_sq) ** (0.5 * k)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """
    Uniform midpoint lattice on [-R, R]^3.

    Node m along an axis sits at -R + (m + 1/2) h with h = 2R/n, so the lattice
    is symmetric under v -> -v. The linear index of node (a, b, c) is
    (a n + b) n + c. Instances hash by identity and are safe to share.
    """

    n_per_axis: int
    radius: float

    @property
    def cell_spacing(self) -> float:
        return 2.0 * self.radius / self.n_per_axis

    @property
    def node_count(self) -> int:
        return self.n_per_axis ** 3

    @cached_property
    def axis(self) -> np.ndarray:
        h = self.cell_spacing
        return -self.radius + (np.arange(self.n_per_axis) + 0.5) * h

    @cached_property
    def lattice_index(self) -> np.ndarray:
        """Integer lattice coordinates of every node, shape (N, 3)."""
        a, b, c = np.meshgrid(*(np.arange(self.n_per_axis),) * 3, indexing="ij")
        return np.stack([a.ravel(), b.ravel(), c.ravel()], axis=1)

    @cached_property
    def nodes(self) -> np.ndarray:
        return self.axis[self.lattice_index]

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.node_count, self.cell_spacing ** 3)

    @property
    def weight(self) -> float:
        return self.cell_spacing ** 3

    @cached_property
    def maxwellian(self) -> MaxwellianTables:
        speed_sq = np.sum(self.nodes ** 2, axis=1)
        mu = (2.0 * np.pi) ** -1.5 * np.exp(-0.5 * speed_sq)
        return MaxwellianTables(mu=mu, sqrt_mu=np.sqrt(mu), speed_sq=speed_sq)

    @property
    def sqrt_mu(self) -> np.ndarray:
        return self.maxwellian.sqrt_mu

    @cached_property
    def truncation_tolerance(self) -> float:
        return truncation_tolerance(self.radius, self.cell_spacing)

    def flat_index(self, lattice: np.ndarray) -> np.ndarray:
        """Linear node index of integer lattice coordinates (..., 3)."""
        n = self.n_per_axis
        return (lattice[..., 0] * n + lattice[..., 1]) * n + lattice[..., 2]

    def key(self) -> Dict[str, float]:
        return {"n": self.n_per_axis, "R": float(self.radius)}


def truncation_tolerance(radius: float, spacing: float) -> float:
    """
    Bound on 1 - sum(weights * mu) for the midpoint lattice.

    Combines the Gaussian tail beyond R with the midpoint aliasing term of a
    unit Gaussian sampled at spacing h.
    """
    tail = 1.0 - erf(radius / np.sqrt(2.0)) ** 3
    alias = 3.0 * _ALIAS_FACTOR * np.exp(-2.0 * np.pi ** 2 / spacing ** 2)
    return float(tail + alias + 1e-12)


def build_grid(n_per_axis: int, radius: float) -> VelocityGrid:
    """
    Build the velocity lattice.

    Args:
        n_per_axis (int): Nodes per axis, even and at least 4.
        radius (float): Half-width R of the velocity box.

    Returns:
        VelocityGrid: The lattice with midpoint weights (2R/n)^3.
    """
    if int(n_per_axis) != n_per_axis or n_per_axis < 4:
        raise GridError(f"n_per_axis must be an integer >= 4, got {n_per_axis}")
    if n_per_axis % 2:
        raise GridError(f"n_per_axis must be even to keep v -> -v symmetry, got {n_per_axis}")
    if not radius > 0:
        raise GridError(f"radius must be positive, got {radius}")
    grid = VelocityGrid(int(n_per_axis), float(radius))
    logger.debug("built velocity grid n=%d R=%.3g h=%.3g", grid.n_per_axis, grid.radius, grid.cell_spacing)
    return grid


def _check_field(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[-1] != grid.node_count:
        raise GridError(f"field has {f.shape[-1]} values, grid has {grid.node_count} nodes")
    return f


def l2v_inner(f: np.ndarray, g: np.ndarray, grid: VelocityGrid) -> complex:
    """sum(weights * conj(f) * g)."""
    f = _check_field(f, grid)
    g = _check_field(g, grid)
    return grid.weight * np.vdot(f, g)


def l2v_norm(f: np.ndarray, grid: VelocityGrid) -> float:
    f = _check_field(f, grid)
    return float(np.sqrt(grid.weight * np.sum(np.abs(f) ** 2, axis=-1)))


def trilinear_stencil(grid: VelocityGrid, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Corner indices and weights of trilinear interpolation at arbitrary points.

    Returns (index (P, 8), weight (P, 8), inside (P,)). Points outside the node
    hull get zero weights (zero extension).
    """
    n = grid.n_per_axis
    s = (np.asarray(points, dtype=float) + grid.radius) / grid.cell_spacing - 0.5
    lower = np.floor(s).astype(np.int64)
    inside = np.all((lower >= 0) & (lower <= n - 2), axis=-1)
    lower = np.clip(lower, 0, n - 2)
    t = np.clip(s - lower, 0.0, 1.0)
    return _corners(grid, lower, t, inside)


def _corners(grid: VelocityGrid, lower: np.ndarray, t: np.ndarray, inside: np.ndarray):
    index = np.empty(lower.shape[:-1] + (8,), dtype=np.int64)
    weight = np.empty(lower.shape[:-1] + (8,))
    for corner in range(8):
        bits = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        index[..., corner] = grid.flat_index(lower + bits)
        weight[..., corner] = np.prod(np.where(bits == 1, t, 1.0 - t), axis=-1)
    weight *= inside[..., None]
    return index, weight, inside


def interpolate(values: np.ndarray, grid: VelocityGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of node values at points, zero outside the hull."""
    values = _check_field(values, grid)
    index, weight, _ = trilinear_stencil(grid, points)
    return np.sum(values[..., index] * weight, axis=-1)


def hsv_star_norm_sq(f: np.ndarray, grid: VelocityGrid, kernel) -> float:
    """
    Squared anisotropic norm ||f||^2_{H^{s,*}}.

    Quadrature of the difference term [f(v') - f(v)]^2 weighted by mu(v_*)
    plus the term f(v_*)^2 [sqrt(mu)(v') - sqrt(mu)(v)]^2, over the collision
    triples of the kernel. Complex fields contribute real and imaginary parts.
    """
    f = _check_field(f, grid)
    stencil = kernel.stencil_for(grid)
    return float(stencil.hsv_star_quadratic(f))


def hsv_star_gram(grid: VelocityGrid, kernel, budget: int = DEFAULT_DENSE_BUDGET) -> np.ndarray:
    """Gram matrix G with f^T G f = hsv_star_norm_sq(f)."""
    if grid.node_count > budget:
        raise DenseBudgetError("H^{s,*} Gram matrix", grid.node_count, budget)
    stencil = kernel.stencil_for(grid)
    gram = stencil.hsv_star_gram()
    return 0.5 * (gram + gram.T)


@dataclass
class DualNorm:
    value: float
    overflow: bool = False


class DualNormOperator:
    """
    Dual norm of (H^{s,*})' computed from one eigendecomposition of the Gram
    matrix; reuse it when many fields are measured against the same G.
    """

    def __init__(self, gram: np.ndarray, grid: VelocityGrid, rtol: float = 1e-10):
        self.grid = grid
        evals, evecs = linalg.eigh(gram)
        cut = rtol * max(float(evals.max()), 0.0)
        keep = evals > cut
        self._evecs = evecs
        self._inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
        self._kernel = ~keep
        self.kernel_dimension = int(self._kernel.sum())

    def __call__(self, f: np.ndarray, kernel_tol: float = 1e-8) -> DualNorm:
        f = _check_field(f, self.grid)
        coeffs = self._evecs.T @ (self.grid.weight * f)
        scale = max(float(np.linalg.norm(coeffs)), 1e-300)
        if self.kernel_dimension and np.linalg.norm(coeffs[self._kernel]) > kernel_tol * scale:
            return DualNorm(float("inf"), overflow=True)
        value = np.sqrt(np.sum(self._inv * np.abs(coeffs) ** 2))
        return DualNorm(float(value))

    def batch(self, fields: np.ndarray, kernel_tol: float = 1e-8) -> np.ndarray:
        """Dual norms of fields stacked along leading axes; inf where the kernel component is present."""
        fields = np.asarray(fields)
        coeffs = (self.grid.weight * fields) @ self._evecs
        scale = np.maximum(np.linalg.norm(coeffs, axis=-1), 1e-300)
        values = np.sqrt(np.sum(self._inv * np.abs(coeffs) ** 2, axis=-1))
        if self.kernel_dimension:
            leak = np.linalg.norm(coeffs[..., self._kernel], axis=-1) > kernel_tol * scale
            values = np.where(leak, np.inf, values)
        return values


def dual_norm(f: np.ndarray, gram: np.ndarray, grid: VelocityGrid) -> DualNorm:
    """
    sqrt(f^T M G^+ M f) with M the diagonal mass matrix.

    A component of M f in the numerical kernel of G makes the dual norm
    infinite; that case is returned with ``overflow=True``.
    """
    return DualNormOperator(gram, grid)(f)


def norm_sandwich_constant(
    grid: VelocityGrid,
    kernel,
    samples: int = 200,
    rng: Optional[np.random.Generator] = None,
    gram: Optional[np.ndarray] = None,
    fields: Optional[np.ndarray] = None,
) -> float:
    """
    Fitted c with c ||<v>^{gamma/2+s} f||^2 <= ||f||^2_{H^{s,*}} over random fields,
    or over the rows of ``fields`` when given.
    """
    gram = hsv_star_gram(grid, kernel) if gram is None else gram
    bracket = grid.maxwellian.bracket(kernel.gamma / 2.0 + kernel.s)
    if fields is None:
        rng = rng or np.random.default_rng(0)
        fields = rng.standard_normal((samples, grid.node_count)) * grid.sqrt_mu ** 0.5
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    num = np.einsum("si,ij,sj->s", fields, gram, fields)
    den = grid.weight * np.sum((bracket * fields) ** 2, axis=1)
    return float(np.min(num / den))
