"""
Non-cutoff collision kernel, the bilinear operator Gamma and the linearized
operator L on the velocity lattice.

Collision triples (i, j, sigma) run over ordered node pairs i != j and the
active nodes of the sigma quadrature, with sigma expressed in a frame attached
to the relative velocity. Post-collision velocities are v_i + h d and
v_j - h d, where the offset d depends only on the lattice offset of the pair
and on sigma, so interpolation stencils are shared by every pair with the same
offset. Triples whose post-collision velocities leave the node hull are
dropped.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations, product
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
from scipy import linalg, sparse

from .exceptions import AsymmetryError, CoercivityError, DenseBudgetError, KernelError, NonFiniteError
from .macro_projection import macro_basis
from .velocity_space import DEFAULT_DENSE_BUDGET, VelocityGrid

logger = logging.getLogger(__name__)

ASYMMETRY_TOLERANCE = 1e-4
# structural conservation of the symmetric weak form
CONSERVATION_TOLERANCE = 1e-9
ENERGY_DEFECT_TOLERANCE = 0.2
# bytes per stored triple: two 8-corner stencils of int32 index + float64 weight
_BYTES_PER_TRIPLE = 2 * 8 * 12


@dataclass(frozen=True)
class SigmaQuadrature:
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    b_values: np.ndarray

    @property
    def local_vectors(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.column_stack([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.b_values > 0)


@dataclass(frozen=True, eq=False)
class CollisionKernel:
    """
    B(v - v_*, sigma) = |v - v_*|^gamma b(cos theta), with
    b = b_amplitude * theta^(-1-2s) on [theta_min, pi/2] and 0 elsewhere.

    ``angular_range="full"`` spreads half of b on the mirrored range
    [pi/2, pi - theta_min]; its symmetrization is the default half-range b.
    """

    gamma: float = 0.0
    s: float = 0.25
    theta_min: float = 0.05
    b_amplitude: float = 1.0 / (4.0 * np.pi)
    theta_nodes: int = 24
    azimuth_nodes: int = 8
    angular_range: str = "half"
    allow_soft: bool = False
    stencil_memory_mb: float = 512.0

    def __post_init__(self):
        if not -3.0 < self.gamma <= 1.0:
            raise KernelError(f"gamma must lie in (-3, 1], got {self.gamma}")
        if not 0.0 < self.s < 1.0:
            raise KernelError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.theta_min < np.pi / 2:
            raise KernelError(f"theta_min must lie in (0, pi/2), got {self.theta_min}")
        if not self.b_amplitude > 0:
            raise KernelError("b_amplitude must be positive")
        if self.gamma + 2.0 * self.s < 0 and not self.allow_soft:
            raise KernelError(f"soft potential gamma + 2s = {self.gamma + 2 * self.s:.3g} < 0 rejected")
        if self.azimuth_nodes < 2 or self.azimuth_nodes % 2:
            raise KernelError("azimuth_nodes must be even and >= 2")
        if self.theta_nodes < 2:
            raise KernelError("theta_nodes must be >= 2")
        if self.angular_range not in ("half", "full"):
            raise KernelError(f"unknown angular_range {self.angular_range!r}")

    def b(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        inside = (theta >= self.theta_min) & (theta <= np.pi / 2)
        return np.where(inside, self.b_amplitude * np.maximum(theta, self.theta_min) ** (-1.0 - 2.0 * self.s), 0.0)

    @cached_property
    def sigma_quadrature(self) -> SigmaQuadrature:
        x, wx = np.polynomial.legendre.leggauss(self.theta_nodes)
        x, wx = 0.5 * (x + 1.0), 0.5 * wx
        ratio = np.pi / (2.0 * self.theta_min)
        theta = self.theta_min * ratio ** x
        w_theta = wx * theta * np.log(ratio) * np.sin(theta)
        # exact solid angle of the active band
        w_theta *= np.cos(self.theta_min) / w_theta.sum()
        b_vals = self.b_amplitude * theta ** (-1.0 - 2.0 * self.s)

        phi = 2.0 * np.pi * np.arange(self.azimuth_nodes) / self.azimuth_nodes
        dphi = 2.0 * np.pi / self.azimuth_nodes
        # (theta, weight, b, azimuth shift); the mirrored band maps sigma to -sigma
        bands: List[Tuple[np.ndarray, np.ndarray, np.ndarray, float]] = []
        if self.angular_range == "half":
            bands.append((theta, w_theta, b_vals, 0.0))
            bands.append(_plain_band(0.0, self.theta_min) + (0.0,))
            bands.append(_plain_band(np.pi / 2, np.pi) + (0.0,))
        else:
            bands.append((theta, w_theta, 0.5 * b_vals, 0.0))
            bands.append((np.pi - theta, w_theta, 0.5 * b_vals, np.pi))
            bands.append(_plain_band(0.0, self.theta_min) + (0.0,))
            bands.append(_plain_band(np.pi - self.theta_min, np.pi) + (0.0,))

        thetas, phis, weights, bs = [], [], [], []
        for band_theta, band_w, band_b, shift in bands:
            for ph in phi:
                thetas.append(band_theta)
                phis.append(np.full(band_theta.size, ph + shift))
                weights.append(band_w * dphi)
                bs.append(band_b)
        return SigmaQuadrature(np.concatenate(thetas), np.concatenate(phis), np.concatenate(weights), np.concatenate(bs))

    def key(self) -> Dict[str, float]:
        return {
            "gamma": float(self.gamma),
            "s": float(self.s),
            "theta_min": float(self.theta_min),
            "b_amplitude": float(self.b_amplitude),
            "sigma_order": [int(self.theta_nodes), int(self.azimuth_nodes)],
            "angular_range": self.angular_range,
        }

    @cached_property
    def _stencils(self) -> Dict[int, "CollisionStencil"]:
        return {}

    def stencil_for(self, grid: VelocityGrid) -> "CollisionStencil":
        cached = self._stencils.get(id(grid))
        if cached is None or cached.grid is not grid:
            cached = CollisionStencil(grid, self)
            self._stencils[id(grid)] = cached
        return cached


def _plain_band(lo: float, hi: float, nodes: int = 8):
    x, wx = np.polynomial.legendre.leggauss(nodes)
    theta = 0.5 * (hi - lo) * (x + 1.0) + lo
    return theta, 0.5 * (hi - lo) * wx * np.sin(theta), np.zeros(nodes)


def post_collision(v: np.ndarray, v_star: np.ndarray, sigma: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(v', v'_*) = (v + v_*)/2 +- |v - v_*| sigma / 2."""
    v, v_star, sigma = (np.asarray(a, dtype=float) for a in (v, v_star, sigma))
    center = 0.5 * (v + v_star)
    half = 0.5 * np.linalg.norm(v - v_star, axis=-1, keepdims=True) * sigma
    return center + half, center - half


def relative_frames(k: np.ndarray) -> np.ndarray:
    """Orthonormal frames (e1, e2, k) per unit vector k, shape (..., 3, 3) with rows e1, e2, k."""
    k = np.asarray(k, dtype=float)
    seed = np.zeros_like(k)
    use_y = np.abs(k[..., 0]) > 0.9
    seed[..., 0] = np.where(use_y, 0.0, 1.0)
    seed[..., 1] = np.where(use_y, 1.0, 0.0)
    e1 = seed - np.sum(seed * k, axis=-1, keepdims=True) * k
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(k, e1)
    return np.stack([e1, e2, k], axis=-2)


@dataclass
class TripleBlock:
    """Kept triples of one sigma node as sparse interpolation operators."""

    rows_i: np.ndarray
    rows_j: np.ndarray
    weight: np.ndarray
    interp_prime: sparse.csr_matrix
    interp_star: sparse.csr_matrix
    select_i: sparse.csr_matrix
    select_j: sparse.csr_matrix
    v_prime: np.ndarray


class CollisionStencil:
    """Triple enumeration for one (grid, kernel) pair, evaluated block by block over sigma."""

    batch_chunk = 32

    def __init__(self, grid: VelocityGrid, kernel: CollisionKernel):
        self.grid = grid
        self.kernel = kernel
        n = grid.n_per_axis
        N = grid.node_count
        lattice = grid.lattice_index
        pair_i, pair_j = np.nonzero(~np.eye(N, dtype=bool))
        self.pair_i, self.pair_j = pair_i, pair_j
        offsets = lattice[pair_i] - lattice[pair_j]
        self.offset_id = _offset_id(offsets, n)

        table = np.array(list(product(range(-(n - 1), n), repeat=3)))
        length = np.linalg.norm(table, axis=1)
        length[length == 0] = 1.0
        frames = relative_frames(table / length[:, None])

        quad = kernel.sigma_quadrature
        self.active = quad.active
        local = quad.local_vectors[self.active]
        sigma = np.einsum("qc,ocd->qod", local, frames)
        self._d = 0.5 * (-table[None, :, :] + length[None, :, None] * sigma)

        h = grid.cell_spacing
        self._pair_base = grid.weight ** 2 * (h * length[self.offset_id]) ** kernel.gamma
        self._sigma_weight = quad.weights[self.active] * quad.b_values[self.active]

        estimate = pair_i.size * self.active.size * _BYTES_PER_TRIPLE / 2 ** 20
        self._cache_blocks = estimate <= kernel.stencil_memory_mb
        self._blocks: Optional[List[TripleBlock]] = None
        logger.info(
            "collision stencil: %d pairs x %d sigma nodes (%.0f MB, cached=%s)",
            pair_i.size, self.active.size, estimate, self._cache_blocks,
        )

    @property
    def sigma_count(self) -> int:
        return int(self.active.size)

    def blocks(self) -> Iterator[TripleBlock]:
        if self._blocks is not None:
            yield from self._blocks
            return
        built = [] if self._cache_blocks else None
        for q in range(self.sigma_count):
            block = self._build_block(q)
            if built is not None:
                built.append(block)
            yield block
        if built is not None:
            self._blocks = built

    def _build_block(self, q: int) -> TripleBlock:
        grid = self.grid
        n = grid.n_per_axis
        N = grid.node_count
        lattice = grid.lattice_index
        d = self._d[q, self.offset_id]
        pos_prime = lattice[self.pair_i] + d
        pos_star = lattice[self.pair_j] - d
        low_p = np.floor(pos_prime).astype(np.int64)
        low_s = np.floor(pos_star).astype(np.int64)
        keep = np.all((low_p >= 0) & (low_p <= n - 2) & (low_s >= 0) & (low_s <= n - 2), axis=1)
        rows_i = self.pair_i[keep]
        rows_j = self.pair_j[keep]
        K = rows_i.size
        interp_prime = _interp_matrix(grid, low_p[keep], pos_prime[keep] - low_p[keep], K, N)
        interp_star = _interp_matrix(grid, low_s[keep], pos_star[keep] - low_s[keep], K, N)
        rows = np.arange(K)
        select_i = sparse.csr_matrix((np.ones(K), (rows, rows_i)), shape=(K, N))
        select_j = sparse.csr_matrix((np.ones(K), (rows, rows_j)), shape=(K, N))
        weight = self._pair_base[keep] * self._sigma_weight[q]
        v_prime = grid.nodes[rows_i] + grid.cell_spacing * d[keep]
        return TripleBlock(rows_i, rows_j, weight, interp_prime, interp_star, select_i, select_j, v_prime)

    def gamma_raw(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Raw quadrature of Gamma(f, g) for fields of shape (N,) or (B, N)."""
        sqrt_mu = self.grid.sqrt_mu
        single = np.ndim(f) == 1 and np.ndim(g) == 1
        hf = np.atleast_2d(f).T / sqrt_mu[:, None]
        hg = np.atleast_2d(g).T / sqrt_mu[:, None]
        width = max(hf.shape[1], hg.shape[1])
        hf = np.broadcast_to(hf, (hf.shape[0], width))
        hg = np.broadcast_to(hg, (hg.shape[0], width))
        out = np.zeros((self.grid.node_count, width), dtype=np.result_type(hf, hg))
        mu = self.grid.maxwellian.mu
        for block in self.blocks():
            coef = 0.25 * block.weight * mu[block.rows_i] * mu[block.rows_j]
            deposit_prime = (block.interp_prime - block.select_i).T.tocsr()
            deposit_star = (block.interp_star - block.select_j).T.tocsr()
            for lo in range(0, width, self.batch_chunk):
                cols = slice(lo, lo + self.batch_chunk)
                f, g = hf[:, cols], hg[:, cols]
                f_p, f_s = block.interp_prime @ f, block.interp_star @ f
                g_p, g_s = block.interp_prime @ g, block.interp_star @ g
                a1 = coef[:, None] * (f[block.rows_j] * g[block.rows_i] - f_s * g_p)
                a2 = coef[:, None] * (f[block.rows_i] * g[block.rows_j] - f_p * g_s)
                out[:, cols] += deposit_prime @ a1 + deposit_star @ a2
        out /= (self.grid.weight * sqrt_mu)[:, None]
        out = out.T
        return out[0] if single else out

    def linearized_quadratic(self) -> np.ndarray:
        """Accumulated D^T diag(W mu_i mu_j / 4) D with D = C' + C'_* - E_i - E_j."""
        N = self.grid.node_count
        acc = np.zeros((N, N))
        mu = self.grid.maxwellian.mu
        for block in self.blocks():
            coef = 0.25 * block.weight * mu[block.rows_i] * mu[block.rows_j]
            D = (block.interp_prime + block.interp_star - block.select_i - block.select_j).tocsr()
            acc += (D.T @ (sparse.diags(coef) @ D)).toarray()
        return acc

    def hsv_star_gram(self) -> np.ndarray:
        N = self.grid.node_count
        gram = np.zeros((N, N))
        diag = np.zeros(N)
        mu = self.grid.maxwellian.mu
        sqrt_mu = self.grid.sqrt_mu
        for block in self.blocks():
            D1 = (block.interp_prime - block.select_i).tocsr()
            gram += (D1.T @ (sparse.diags(block.weight * mu[block.rows_j]) @ D1)).toarray()
            jump = _sqrt_maxwellian(block.v_prime) - sqrt_mu[block.rows_i]
            diag += np.bincount(block.rows_j, weights=block.weight * jump ** 2, minlength=N)
        gram[np.diag_indices(N)] += diag
        return gram

    def hsv_star_quadratic(self, f: np.ndarray) -> float:
        mu = self.grid.maxwellian.mu
        sqrt_mu = self.grid.sqrt_mu
        total = 0.0
        for part in (np.real(f), np.imag(f)):
            if not np.any(part):
                continue
            for block in self.blocks():
                diff = block.interp_prime @ part - part[block.rows_i]
                total += np.sum(block.weight * mu[block.rows_j] * diff ** 2)
                jump = _sqrt_maxwellian(block.v_prime) - sqrt_mu[block.rows_i]
                total += np.sum(block.weight * part[block.rows_j] ** 2 * jump ** 2)
        return total


def _offset_id(offsets: np.ndarray, n: int) -> np.ndarray:
    base = 2 * n - 1
    shifted = offsets + (n - 1)
    return (shifted[:, 0] * base + shifted[:, 1]) * base + shifted[:, 2]


def _interp_matrix(grid: VelocityGrid, lower: np.ndarray, t: np.ndarray, K: int, N: int) -> sparse.csr_matrix:
    rows = np.repeat(np.arange(K), 8)
    cols = np.empty((K, 8), dtype=np.int64)
    vals = np.empty((K, 8))
    for corner in range(8):
        bits = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        cols[:, corner] = grid.flat_index(lower + bits)
        vals[:, corner] = np.prod(np.where(bits == 1, t, 1.0 - t), axis=1)
    return sparse.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(K, N))


def _sqrt_maxwellian(points: np.ndarray) -> np.ndarray:
    return (2.0 * np.pi) ** -0.75 * np.exp(-0.25 * np.sum(points ** 2, axis=-1))


def gamma_bilinear(f: np.ndarray, g: np.ndarray, grid: VelocityGrid, kernel: CollisionKernel, conservative: bool = True) -> np.ndarray:
    """
    Gamma(f, g) = mu^{-1/2} Q(sqrt(mu) f, sqrt(mu) g) in symmetrized weak form.

    With ``conservative`` the output is projected onto the complement of the
    collision invariants, removing the quadrature defect of the energy moment.
    Accepts single fields (N,) or batches (B, N), real or complex.
    """
    out = kernel.stencil_for(grid).gamma_raw(f, g)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite Gamma output; check theta_min and the sigma quadrature")
    return macro_basis(grid).complement(out) if conservative else out


def reference_perturbation(grid: VelocityGrid) -> np.ndarray:
    """Smooth non-invariant field (v1 + (v1^2 - v2^2)/2 + v2 v3 / 4) sqrt(mu)."""
    v = grid.nodes
    return (v[:, 0] + 0.5 * (v[:, 0] ** 2 - v[:, 1] ** 2) + 0.25 * v[:, 1] * v[:, 2]) * grid.sqrt_mu


def moment_defects(f: np.ndarray, grid: VelocityGrid, kernel: CollisionKernel) -> Dict[str, float]:
    """
    Mass, momentum and energy components of the raw Gamma(f, f), each relative
    to the L2_v norm of Gamma(f, f).

    The symmetric weak form conserves mass and momentum to round-off, as the
    trilinear stencils reproduce linear functions; the energy defect comes from
    interpolating |v|^2 and shrinks with the cell spacing.
    """
    raw = gamma_bilinear(f, f, grid, kernel, conservative=False)
    w = grid.weight
    scale = np.sqrt(w * np.sum(raw ** 2))
    if scale == 0:
        return {"mass": 0.0, "momentum": 0.0, "energy": 0.0}
    coords = w * raw @ macro_basis(grid).orthonormal / scale
    return {
        "mass": float(abs(coords[0])),
        "momentum": float(np.linalg.norm(coords[1:4])),
        "energy": float(abs(coords[4])),
    }


def collision_q(F: np.ndarray, G: np.ndarray, grid: VelocityGrid, kernel: CollisionKernel, conservative: bool = True) -> np.ndarray:
    """Q(F, G) = sqrt(mu) Gamma(F / sqrt(mu), G / sqrt(mu))."""
    sqrt_mu = grid.sqrt_mu
    return sqrt_mu * gamma_bilinear(np.asarray(F) / sqrt_mu, np.asarray(G) / sqrt_mu, grid, kernel, conservative)


def cubic_permutations(grid: VelocityGrid) -> List[np.ndarray]:
    """Node permutations of the 48 signed axis permutations of the lattice."""
    n = grid.n_per_axis
    lattice = grid.lattice_index
    perms = []
    for axes in permutations(range(3)):
        for signs in product((1, -1), repeat=3):
            image = lattice[:, list(axes)].copy()
            for k, sign in enumerate(signs):
                if sign < 0:
                    image[:, k] = n - 1 - image[:, k]
            perms.append(grid.flat_index(image))
    return perms


def symmetrize_cubic(matrix: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    perms = cubic_permutations(grid)
    out = np.zeros_like(matrix)
    for perm in perms:
        out += matrix[np.ix_(perm, perm)]
    return out / len(perms)


@dataclass
class AssembledL:
    """Dense linearized operator with its kernel basis and spectral data."""

    matrix: np.ndarray
    kernel_basis: np.ndarray
    spectral_gap_estimate: float
    asymmetry: float
    eigenvalues: np.ndarray
    grid: VelocityGrid = field(repr=False)
    kernel: CollisionKernel = field(repr=False)

    @property
    def kernel_dimension(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues) < self.spectral_gap_estimate / 10.0))

    def apply(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f) @ self.matrix.T


def assemble_L(
    grid: VelocityGrid,
    kernel: CollisionKernel,
    budget: int = DEFAULT_DENSE_BUDGET,
    cubic_symmetrize: bool = True,
    compress: bool = True,
) -> AssembledL:
    """
    Assemble L f = Gamma(sqrt(mu), f) + Gamma(f, sqrt(mu)) as a dense matrix.

    The symmetrized weak form gives L = -(1/w) S^-1 D^T diag(W mu mu / 4) D S^-1
    with S = diag(sqrt(mu)). The result is symmetrized (asymmetry recorded),
    optionally averaged over the cubic symmetry group and, with ``compress``,
    compressed to the complement of the collision invariants. Without the
    compression mass and momentum are still annihilated exactly; only the
    energy direction carries the interpolation defect.
    """
    N = grid.node_count
    if N > budget:
        raise DenseBudgetError("linearized operator", N, budget)
    stencil = kernel.stencil_for(grid)
    acc = stencil.linearized_quadratic()
    inv_s = 1.0 / grid.sqrt_mu
    raw = -(acc * inv_s[:, None] * inv_s[None, :]) / grid.weight
    scale = max(np.linalg.norm(raw), 1e-300)
    asymmetry = float(np.linalg.norm(raw - raw.T) / scale)
    if asymmetry > ASYMMETRY_TOLERANCE:
        raise AsymmetryError(asymmetry, ASYMMETRY_TOLERANCE)
    matrix = 0.5 * (raw + raw.T)
    if cubic_symmetrize:
        matrix = symmetrize_cubic(matrix, grid)
    if compress:
        Pperp = np.eye(N) - macro_basis(grid).matrix()
        matrix = Pperp @ matrix @ Pperp
        matrix = 0.5 * (matrix + matrix.T)
    eigenvalues = linalg.eigvalsh(matrix)
    gap = float(-np.sort(eigenvalues)[::-1][5]) if N > 5 else 0.0
    logger.info("assembled L: N=%d gap=%.4g asymmetry=%.2e", N, gap, asymmetry)
    return AssembledL(matrix, macro_basis(grid).orthonormal.T.copy(), gap, asymmetry, eigenvalues, grid, kernel)


@dataclass
class CoercivityReport:
    lambda_fit: float
    witness: np.ndarray
    ratios: np.ndarray


def coercivity_report(
    assembled: AssembledL,
    gram: np.ndarray,
    samples: int = 100,
    rng: Optional[np.random.Generator] = None,
    fields: Optional[np.ndarray] = None,
) -> CoercivityReport:
    """
    lambda_fit = min over samples of -<Lf, f> / ||P_perp f||^2_{H^{s,*}}.

    Samples are Maxwellian-weighted random fields unless ``fields`` (S, N) is
    given; their kernel component is removed, so the 0/0 case never enters
    the minimum.
    """
    grid = assembled.grid
    basis = macro_basis(grid)
    if fields is None:
        if samples < 10:
            raise ValueError("coercivity_report needs at least 10 samples")
        rng = rng or np.random.default_rng(0)
        fields = rng.standard_normal((samples, grid.node_count)) * np.sqrt(grid.sqrt_mu)
    fields = basis.complement(np.atleast_2d(np.asarray(fields, dtype=float)))
    dissipation = -grid.weight * np.einsum("si,ij,sj->s", fields, assembled.matrix, fields)
    norms = np.einsum("si,ij,sj->s", fields, gram, fields)
    ratios = dissipation / norms
    worst = int(np.argmin(ratios))
    report = CoercivityReport(float(ratios[worst]), fields[worst], ratios)
    if report.lambda_fit <= 0:
        raise CoercivityError(report.lambda_fit, report.witness)
    return report
