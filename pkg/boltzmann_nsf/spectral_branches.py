"""
Eigenvalue branches of L - i eps v.xi near xi = 0, the viscosity coefficients
from the constrained Phi/Psi solves, and the limiting semigroup U(t) with its
bilinear Duhamel companion Psi.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy import linalg

from .collision_core import AssembledL
from .exceptions import BranchTrackingError, MomentConstraintError
from .lattice import FourierLattice
from .macro_projection import macro_basis
from .velocity_space import VelocityGrid

logger = logging.getLogger(__name__)

BRANCH_COUNT = 4
SHEAR_BRANCH = 3
THERMAL_BRANCH = 4


def _unit(direction: Sequence[float]) -> np.ndarray:
    n = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    return n / norm


def phi_scalar(z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(e^z, phi1(z), phi2(z)) elementwise, with series near z = 0."""
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    em1 = np.expm1(safe)
    phi1 = np.where(small, 1 + z / 2 + z ** 2 / 6, em1 / safe)
    phi2 = np.where(small, 0.5 + z / 6 + z ** 2 / 24, (em1 - safe) / safe ** 2)
    return np.exp(z), phi1, phi2


class KernelPseudoInverse:
    """Solves L x = r on the complement of Ker L, returning x with P x = 0."""

    def __init__(self, L_op: AssembledL):
        self.L_op = L_op
        shift = max(L_op.spectral_gap_estimate, 1e-12)
        self._factor = linalg.cho_factor(-(L_op.matrix - shift * macro_basis(L_op.grid).matrix()))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """rhs of shape (..., N); must already lie in the complement of Ker L."""
        rhs = np.asarray(rhs)
        flat = rhs.reshape(-1, rhs.shape[-1]).T
        out = -linalg.cho_solve(self._factor, flat)
        return out.T.reshape(rhs.shape)


@dataclass
class PerturbativeBranch:
    """Zero-radius data of one branch: alpha, beta and the kernel fields spanning it."""

    branch_id: int
    alpha: float
    beta: float
    vectors: np.ndarray
    correctors: np.ndarray

    @property
    def multiplicity(self) -> int:
        return self.vectors.shape[1]

    def projector(self, weight: float) -> np.ndarray:
        """P_j^0 as a matrix acting on column vectors."""
        return weight * self.vectors @ self.vectors.T

    def first_order_projector(self, weight: float) -> np.ndarray:
        """P_j^1: first-order term of the branch projector, restricted to microscopic inputs."""
        return 1j * weight * self.vectors @ self.correctors.T


def perturbative_branches(
    L_op: AssembledL,
    grid: VelocityGrid,
    direction: Sequence[float] = (1.0, 0.0, 0.0),
    solver: Optional[KernelPseudoInverse] = None,
) -> List[PerturbativeBranch]:
    """
    Second-order perturbation of the five zero eigenvalues of L - i r v.n.

    First order gives lambda ~ -i r kappa with kappa the eigenvalues of the
    transport matrix compressed to Ker L, so alpha = -kappa. Second order gives
    beta = <P_perp V q, (-L)^+ P_perp V q>, diagonalized inside degenerate
    groups.
    """
    n = _unit(direction)
    basis = macro_basis(grid)
    solver = solver or KernelPseudoInverse(L_op)
    w = grid.weight
    Q = basis.orthonormal
    V = grid.nodes @ n
    kappa, C = linalg.eigh(w * Q.T @ (V[:, None] * Q))
    scale = max(1.0, float(np.max(np.abs(kappa))))
    groups: List[List[int]] = []
    for idx in np.argsort(kappa):
        if groups and abs(kappa[idx] - kappa[groups[-1][0]]) < 1e-6 * scale:
            groups[-1].append(int(idx))
        else:
            groups.append([int(idx)])

    moving, resting = [], []
    for members in groups:
        q = Q @ C[:, members]
        rhs = basis.complement((V[:, None] * q).T)
        x = solver.solve(rhs)
        betas, R = linalg.eigh(-w * rhs @ x.T)
        q, x = q @ R, (R.T @ x).T
        alpha = -float(np.mean(kappa[members]))
        for k in range(len(members)):
            entry = (alpha, float(betas[k]), q[:, [k]], x[:, [k]])
            (resting if abs(alpha) < 1e-6 * scale else moving).append(entry)

    if len(moving) != 2 or len(resting) != 3:
        logger.error("transport matrix on Ker L has %d nonzero and %d zero eigenvalues", len(moving), len(resting))
        raise BranchTrackingError(0.0, 0.0)
    moving.sort(key=lambda e: -e[0])
    shear, thermal = [], []
    for entry in resting:
        coords = w * Q.T @ entry[2][:, 0]
        (shear if np.sum(coords[1:4] ** 2) > 0.5 * np.sum(coords ** 2) else thermal).append(entry)
    if len(shear) != 2 or len(thermal) != 1:
        logger.error("cannot separate shear and thermal kernel fields (%d shear)", len(shear))
        raise BranchTrackingError(0.0, 0.0)

    def merged(branch_id: int, entries) -> PerturbativeBranch:
        return PerturbativeBranch(
            branch_id,
            float(np.mean([e[0] for e in entries])),
            float(np.mean([e[1] for e in entries])),
            np.hstack([e[2] for e in entries]),
            np.hstack([e[3] for e in entries]),
        )

    branches = [merged(1, moving[:1]), merged(2, moving[1:]), merged(SHEAR_BRANCH, shear), merged(THERMAL_BRANCH, thermal)]
    spread = abs(shear[0][1] - shear[1][1]) / max(abs(shear[0][1]), 1e-300)
    if spread > 1e-6:
        logger.warning("shear betas differ by %.2e relative; cubic symmetrization is probably off", spread)
    return branches


@dataclass
class BranchSample:
    radius: float
    eigenvalue: complex
    vectors: np.ndarray = field(repr=False)

    @property
    def projector(self) -> np.ndarray:
        q, _ = np.linalg.qr(self.vectors)
        return q @ q.conj().T


@dataclass
class BranchData:
    """Tracked samples of one branch with its fitted lambda ~ i alpha r - beta r^2 (r = eps |xi|)."""

    branch_id: int
    multiplicity: int
    samples: List[BranchSample]
    alpha_fit: float
    beta_fit: float
    remainder_constant: float
    alpha_perturbative: float
    beta_perturbative: float
    zero_projector: np.ndarray = field(repr=False)


def _eigs(L: np.ndarray, V: np.ndarray, scaled_radius: float) -> Tuple[np.ndarray, np.ndarray, float]:
    values, vectors = linalg.eig(L - 1j * scaled_radius * np.diag(V))
    order = np.argsort(-values.real)
    return values[order[:5]], vectors[:, order[:5]], float(values[order[5]].real)


def _match(tracks: List[np.ndarray], vectors: np.ndarray) -> Dict[Tuple[int, int], Tuple[int, float]]:
    graph = nx.Graph()
    overlaps = {}
    for j, track in enumerate(tracks):
        basis, _ = np.linalg.qr(track)
        for k in range(vectors.shape[1]):
            e = vectors[:, k]
            overlaps[(j, k)] = float(np.linalg.norm(basis.conj().T @ e) / np.linalg.norm(e))
        for slot in range(track.shape[1]):
            for k in range(vectors.shape[1]):
                graph.add_edge(("slot", j, slot), ("eig", k), weight=overlaps[(j, k)])
    assignment = {}
    for a, b in nx.max_weight_matching(graph, maxcardinality=True):
        slot, eig = (a, b) if a[0] == "slot" else (b, a)
        assignment[(slot[1], slot[2])] = (eig[1], overlaps[(slot[1], eig[1])])
    return assignment


def eigen_branches(
    L_op: AssembledL,
    grid: VelocityGrid,
    xi_direction: Sequence[float],
    radii: Sequence[float],
    eps: float = 1.0,
    overlap_threshold: float = 0.5,
    threads: int = 1,
) -> List[BranchData]:
    """
    Track the five eigenvalues of largest real part of L - i eps r v.n over the radii.

    Eigenvalues are reported for Lambda^eps (divided by eps^2); fits use the
    joint variable eps r. Branches are followed by maximum-weight matching of
    subspace overlaps, starting from the perturbative kernel fields.
    """
    if any(r < 0 for r in radii):
        raise ValueError("radii must be nonnegative")
    radii = sorted(float(r) for r in radii)
    n = _unit(xi_direction)
    V = grid.nodes @ n
    w = grid.weight
    zero = perturbative_branches(L_op, grid, n)
    gap = L_op.spectral_gap_estimate
    positive = [r for r in radii if r > 0]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        solved = dict(zip(positive, pool.map(lambda r: _eigs(L_op.matrix, V, eps * r), positive)))

    tracks = [branch.vectors.astype(complex) for branch in zero]
    samples: List[List[BranchSample]] = [[] for _ in zero]
    for r in radii:
        if r == 0:
            for j, branch in enumerate(zero):
                q = branch.vectors
                value = w * np.trace(q.T @ L_op.matrix @ q) / q.shape[1]
                samples[j].append(BranchSample(0.0, complex(value), q.astype(complex)))
            continue
        values, vectors, sixth = solved[r]
        if sixth > -0.5 * gap or np.min(values.real) < -0.5 * gap:
            logger.warning("radius %.3g: fluid eigenvalues not separated from the essential spectrum by gap/2", r)
        assignment = _match(tracks, vectors)
        for j, branch in enumerate(zero):
            picked = [assignment[(j, slot)] for slot in range(branch.multiplicity)]
            worst = min(overlap for _, overlap in picked)
            if worst < overlap_threshold:
                raise BranchTrackingError(r, worst)
            columns = [k for k, _ in picked]
            tracks[j] = vectors[:, columns]
            samples[j].append(BranchSample(r, complex(np.mean(values[columns])) / eps ** 2, vectors[:, columns]))

    out = []
    for branch, branch_samples in zip(zero, samples):
        rho = np.array([eps * s.radius for s in branch_samples])
        lam = np.array([s.eigenvalue * eps ** 2 for s in branch_samples])
        keep = rho > 0
        if np.any(keep):
            alpha = float(np.sum(rho[keep] * lam[keep].imag) / np.sum(rho[keep] ** 2))
            beta = float(-np.sum(rho[keep] ** 2 * lam[keep].real) / np.sum(rho[keep] ** 4))
            residual = np.abs(lam[keep] - 1j * alpha * rho[keep] + beta * rho[keep] ** 2)
            remainder = float(np.max(residual / rho[keep] ** 3))
        else:
            alpha, beta, remainder = branch.alpha, branch.beta, 0.0
        out.append(
            BranchData(
                branch.branch_id,
                branch.multiplicity,
                branch_samples,
                alpha,
                beta,
                remainder,
                branch.alpha,
                branch.beta,
                branch.projector(w),
            )
        )
    logger.info("tracked %d branches over %d radii", len(out), len(radii))
    return out


def axis_viscosities(
    L_op: AssembledL,
    grid: VelocityGrid,
    axis: int = 0,
    solver: Optional[KernelPseudoInverse] = None,
) -> Tuple[float, float]:
    """beta of the shear and thermal branches along one lattice axis; the diffusivities of the discrete limit."""
    direction = np.zeros(3)
    direction[axis] = 1.0
    branches = {b.branch_id: b for b in perturbative_branches(L_op, grid, direction, solver)}
    return branches[SHEAR_BRANCH].beta, branches[THERMAL_BRANCH].beta


VISCOSITY_RADII = (0.005, 0.01, 0.02)
BRANCH_MATCH_TOLERANCE = 0.05


@dataclass
class ViscosityPair:
    """
    nu1, nu2 from the constrained solves and the diffusive branch coefficients
    fitted to the tracked eigenvalues along one lattice axis. ``phi_field``
    holds sqrt(mu) Phi, shape (3, 3, N); ``psi_field`` holds sqrt(mu) Psi,
    shape (3, N). ``nu1_isotropic`` averages every traceless component and
    differs from nu1 by the cubic anisotropy of the lattice.
    """

    nu1: float
    nu2: float
    nu1_branch: float
    nu2_branch: float
    nu1_isotropic: float
    phi_field: np.ndarray = field(repr=False)
    psi_field: np.ndarray = field(repr=False)
    rhs_defect: float = 0.0
    residual: float = 0.0

    @property
    def branch_mismatch(self) -> float:
        """Largest relative gap between a solve and its eigenvalue fit."""
        return max(abs(self.nu1 - self.nu1_branch) / self.nu1, abs(self.nu2 - self.nu2_branch) / self.nu2)


def viscosity_coeffs(
    L_op: AssembledL,
    grid: VelocityGrid,
    rhs_tol: float = 5e-2,
    axis: int = 0,
    solver: Optional[KernelPseudoInverse] = None,
    radii: Sequence[float] = VISCOSITY_RADII,
) -> ViscosityPair:
    """
    Solve L(sqrt(mu) Phi) = sqrt(mu)(|v|^2/3 I - v x v) and
    L(sqrt(mu) Psi) = sqrt(mu)(5 - |v|^2) v / 2 on the complement of Ker L.

    The quadratures

        nu1 = (1/10) sum_ab <-L(sqrt(mu) Phi_ab), sqrt(mu) Phi_ab>
        nu2 = (2/15) sum_b <-L(sqrt(mu) Psi_b), sqrt(mu) Psi_b>

    carry the continuum moments <v_1^2 mu> = 1 and
    |(|v|^2 - 5) sqrt(mu) / 2|^2 = 5/2 in their constants; both are taken from
    the grid instead. nu1 contracts Phi over the shear pairs (axis, b), b != axis,
    and nu2 uses Psi_axis, the components a diffusive branch along that axis
    sees. The branch coefficients are the fits of ``eigen_branches`` at ``radii``.

    The kernel component of the discretized right-hand sides is a quadrature
    defect; above ``rhs_tol`` (relative) the solve is refused.
    """
    basis = macro_basis(grid)
    solver = solver or KernelPseudoInverse(L_op)
    v = grid.nodes
    sqrt_mu = grid.sqrt_mu
    mu = grid.maxwellian.mu
    speed_sq = grid.maxwellian.speed_sq
    w = grid.weight
    phi_rhs = (speed_sq[None, None, :] / 3.0 * np.eye(3)[:, :, None] - v.T[:, None, :] * v.T[None, :, :]) * sqrt_mu
    psi_rhs = 0.5 * (5.0 - speed_sq)[None, :] * v.T * sqrt_mu

    defects = []
    for rhs in (phi_rhs.reshape(9, -1), psi_rhs):
        norms = np.linalg.norm(rhs, axis=-1)
        defects.append(np.max(np.linalg.norm(basis.project(rhs), axis=-1)[norms > 0] / norms[norms > 0]))
    defect = float(max(defects))
    if defect > rhs_tol:
        raise MomentConstraintError("viscosity right-hand side is not orthogonal to Ker L", defect)

    phi_rhs = basis.complement(phi_rhs)
    psi_rhs = basis.complement(psi_rhs)
    phi = solver.solve(phi_rhs)
    psi = solver.solve(psi_rhs)
    L_phi = L_op.apply(phi)
    L_psi = L_op.apply(psi)
    phi_quad = -w * np.sum(L_phi * phi, axis=-1)
    psi_quad = -w * np.sum(L_psi * psi, axis=-1)
    residual = max(
        float(np.linalg.norm(L_phi - phi_rhs) / np.linalg.norm(phi_rhs)),
        float(np.linalg.norm(L_psi - psi_rhs) / np.linalg.norm(psi_rhs)),
    )

    second = w * float(np.sum(v[:, axis] ** 2 * mu))
    fourth = w * float(np.sum(v[:, axis] ** 2 * speed_sq * mu))
    # discrete thermal kernel field: no transport coupling to the momentum along the axis
    thermal = 0.5 * (speed_sq - fourth / second) * sqrt_mu
    shear = [b for b in range(3) if b != axis]
    nu1 = float(np.mean(phi_quad[axis, shear])) / second
    nu1_isotropic = 0.1 * float(np.sum(phi_quad)) / second
    nu2 = float(psi_quad[axis]) / (w * float(np.dot(thermal, thermal)))

    direction = np.zeros(3)
    direction[axis] = 1.0
    tracked = {b.branch_id: b for b in eigen_branches(L_op, grid, direction, radii)}
    pair = ViscosityPair(
        nu1,
        nu2,
        tracked[SHEAR_BRANCH].beta_fit,
        tracked[THERMAL_BRANCH].beta_fit,
        nu1_isotropic,
        phi,
        psi,
        defect,
        residual,
    )
    logger.info(
        "nu1=%.6g nu2=%.6g (branches: %.6g, %.6g; isotropic nu1=%.6g)",
        nu1, nu2, pair.nu1_branch, pair.nu2_branch, nu1_isotropic,
    )
    if pair.branch_mismatch > BRANCH_MATCH_TOLERANCE:
        logger.warning("viscosities and branch coefficients differ by %.3g relative", pair.branch_mismatch)
    return pair


class LimitingSemigroup:
    """
    U(t, xi) = sum_{j in shear, thermal} exp(-beta_j t |xi|^2) P_j^0(xi/|xi|).

    At xi = 0 the operator is the kernel projector P. ``psi`` is the
    eps-independent bilinear Duhamel term built on the first-order branch
    projectors.
    """

    def __init__(self, L_op: AssembledL, grid: VelocityGrid):
        self.L_op = L_op
        self.grid = grid
        self._branches: Dict[Tuple[float, ...], List[PerturbativeBranch]] = {}

    @cached_property
    def solver(self) -> KernelPseudoInverse:
        return KernelPseudoInverse(self.L_op)

    def branches(self, direction: Sequence[float]) -> List[PerturbativeBranch]:
        n = _unit(direction)
        key = tuple(np.round(n, 12))
        if key not in self._branches:
            found = perturbative_branches(self.L_op, self.grid, n, self.solver)
            self._branches[key] = [b for b in found if b.branch_id in (SHEAR_BRANCH, THERMAL_BRANCH)]
        return self._branches[key]

    def mode_operator(self, xi: Sequence[float], t: float) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        radius = np.linalg.norm(xi)
        if radius == 0:
            return macro_basis(self.grid).matrix()
        w = self.grid.weight
        return sum(np.exp(-b.beta * t * radius ** 2) * b.projector(w) for b in self.branches(xi))

    def apply(self, fields: np.ndarray, lattice: FourierLattice, t: float) -> np.ndarray:
        fields = np.asarray(fields, dtype=complex)
        return np.stack([self.mode_operator(xi, t) @ fields[k] for k, xi in enumerate(lattice.xi)])

    def trajectory(self, fields: np.ndarray, lattice: FourierLattice, times: np.ndarray) -> np.ndarray:
        """U(t_n) applied to mode fields (K, N) for every t_n, shape (T+1, K, N)."""
        fields = np.asarray(fields, dtype=complex)
        times = np.asarray(times, dtype=float)
        out = np.zeros((len(times),) + fields.shape, dtype=complex)
        w = self.grid.weight
        for k, xi in enumerate(lattice.xi):
            radius_sq = float(np.dot(xi, xi))
            if radius_sq == 0:
                out[:, k] = macro_basis(self.grid).project(fields[k])
                continue
            for branch in self.branches(xi):
                part = branch.projector(w) @ fields[k]
                out[:, k] += np.exp(-branch.beta * radius_sq * times)[:, None] * part
        return out

    def psi(self, source: np.ndarray, dt: float, lattice: FourierLattice) -> np.ndarray:
        """
        Psi(t_n, xi) = int_0^t_n sum_j exp(-beta_j (t_n - s)|xi|^2) |xi| P_j^1 S(s, xi) ds.

        ``source`` is Gamma^(g, g) sampled on a uniform grid, shape (T+1, K, N);
        the integral is exact for piecewise-linear sources.
        """
        source = np.asarray(source, dtype=complex)
        out = np.zeros_like(source)
        w = self.grid.weight
        for k, xi in enumerate(lattice.xi):
            radius = np.linalg.norm(xi)
            if radius == 0:
                continue
            for branch in self.branches(xi):
                forcing = radius * source[:, k] @ branch.first_order_projector(w).T
                decay, phi1, phi2 = phi_scalar(-branch.beta * radius ** 2 * dt)
                y = np.zeros(source.shape[-1], dtype=complex)
                for step in range(source.shape[0] - 1):
                    y = decay * y + dt * ((phi1 - phi2) * forcing[step] + phi2 * forcing[step + 1])
                    out[step + 1, k] += y
        return out


def limiting_semigroup_apply(g0, t: float, semigroup: LimitingSemigroup):
    """U(t) g0 for a KineticState g0; U(0) is the well-prepared projector."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    fields = semigroup.apply(g0.fields, g0.lattice, t)
    return type(g0)(g0.eps, g0.time + t, g0.lattice, fields)


def branch_frame(branches: Sequence[BranchData]) -> pd.DataFrame:
    rows = [
        {
            "radius": s.radius,
            "branch_id": b.branch_id,
            "re_lambda": s.eigenvalue.real,
            "im_lambda": s.eigenvalue.imag,
            "multiplicity": b.multiplicity,
        }
        for b in branches
        for s in b.samples
    ]
    return pd.DataFrame(rows, columns=["radius", "branch_id", "re_lambda", "im_lambda", "multiplicity"])


def spectrum_summary(branches: Sequence[BranchData], pair: Optional[ViscosityPair] = None) -> Dict[str, float]:
    summary: Dict[str, float] = {}
    for b in branches:
        summary[f"alpha_{b.branch_id}"] = b.alpha_fit
        summary[f"beta_{b.branch_id}"] = b.beta_fit
        summary[f"remainder_{b.branch_id}"] = b.remainder_constant
        summary[f"multiplicity_{b.branch_id}"] = b.multiplicity
    if pair is not None:
        summary.update(
            nu1=pair.nu1,
            nu2=pair.nu2,
            nu1_branch=pair.nu1_branch,
            nu2_branch=pair.nu2_branch,
            branch_mismatch=pair.branch_mismatch,
        )
    return summary


def write_summary(path, summary: Mapping[str, float]) -> Path:
    """Write ``key = value`` lines in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for key, value in summary.items():
            f.write(f"{key} = {float(value)!r}\n" if isinstance(value, (float, np.floating)) else f"{key} = {value}\n")
    return path


def read_summary(path) -> Dict[str, str]:
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    return out
