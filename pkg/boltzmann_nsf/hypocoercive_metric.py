"""
Modified inner product <<f, g>> = <f, g> + eps B[f, g] per Fourier mode and the
dissipativity verifier for Lambda^eps(xi) = (L - i eps v.xi) / eps^2.

B is realized as a Hermitian form, antilinear in its first argument like
``l2v_inner``: each symmetric pair of the correction is T(f, g) + conj(T(g, f))
with T(f, g) = -i delta / <xi>^2 conj(a[f]) b[g] for the moment functionals
(a, b) = (theta, xi.M[P_perp .]), (u, (Theta[P_perp .] + theta I) xi) and
(rho, xi.u).
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from .collision_core import AssembledL
from .exceptions import DissipativityError
from .macro_projection import macro_basis
from .velocity_space import VelocityGrid, l2v_inner

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["xi1", "xi2", "xi3", "eps", "lambda0_fit", "c_equiv", "pass"]
# largest accepted equivalence constant of the modified norm
EQUIVALENCE_LIMIT = 0.5


@dataclass(frozen=True)
class HypoParams:
    delta1: float = 1e-1
    delta2: float = 1e-2
    delta3: float = 1e-3

    def __post_init__(self):
        if not 0 < self.delta3 < self.delta2 < self.delta1 < 1:
            raise ValueError(f"need 0 < delta3 < delta2 < delta1 < 1, got {self}")

    def scaled(self, factor: float) -> "HypoParams":
        return HypoParams(self.delta1 * factor, self.delta2 * factor, self.delta3 * factor)


def _bracket_sq(xi: np.ndarray) -> float:
    return 1.0 + float(np.dot(xi, xi))


def _functional_pairs(xi: np.ndarray, params: HypoParams, grid: VelocityGrid) -> List[Tuple[float, np.ndarray, np.ndarray]]:
    """(delta, A, B) with A, B of shape (k, N): T(f, g) = -i delta/<xi>^2 sum_k conj(A_k f) (B_k g)."""
    basis = macro_basis(grid)
    w = grid.weight
    phi = basis.functionals
    rho, u, theta = phi[:, 0], phi[:, 1:4], phi[:, 4]
    m_xi = basis.complement(basis.aux_M @ xi)
    theta_xi = basis.complement(np.einsum("iba,a->bi", basis.aux_Theta, xi))
    pairs = [
        (params.delta1, w * theta[None, :], w * m_xi[None, :]),
        (params.delta2, w * u.T, w * (theta_xi + np.outer(xi, theta))),
        (params.delta3, w * rho[None, :], w * (u @ xi)[None, :]),
    ]
    return pairs


def correction_matrix(xi: Sequence[float], params: HypoParams, grid: VelocityGrid) -> np.ndarray:
    """Hermitian matrix K with B[f, g](xi) = f^H K g."""
    xi = np.asarray(xi, dtype=float)
    N = grid.node_count
    K = np.zeros((N, N), dtype=complex)
    scale = 1.0 / _bracket_sq(xi)
    for delta, A, B in _functional_pairs(xi, params, grid):
        T = -1j * delta * scale * (A.T @ B)
        K += T + T.conj().T
    return K


def correction_B(fhat: np.ndarray, ghat: np.ndarray, xi: Sequence[float], params: HypoParams, grid: VelocityGrid) -> complex:
    """
    B[f, g](xi) from the moments of f and g.

    Pairs theta with xi.M[P_perp], u with (xi x u)^sym : (Theta[P_perp] + theta I)
    and rho with xi.u, each in both orders.
    """
    xi = np.asarray(xi, dtype=float)
    total = 0.0 + 0.0j
    scale = 1.0 / _bracket_sq(xi)
    for delta, A, B in _functional_pairs(xi, params, grid):
        t_fg = np.sum(np.conj(A @ fhat) * (B @ ghat))
        t_gf = np.sum(np.conj(A @ ghat) * (B @ fhat))
        total += -1j * delta * scale * t_fg + np.conj(-1j * delta * scale * t_gf)
    return complex(total)


def modified_inner(fhat, ghat, xi, eps: float, params: HypoParams, grid: VelocityGrid) -> complex:
    """<f, g> + eps B[f, g](xi)."""
    if not 0 < eps <= 1:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    return complex(l2v_inner(fhat, ghat, grid) + eps * correction_B(fhat, ghat, xi, params, grid))


def modified_gram(xi, eps: float, params: HypoParams, grid: VelocityGrid) -> np.ndarray:
    """Hermitian H with <<f, g>> = f^H H g."""
    return grid.weight * np.eye(grid.node_count) + eps * correction_matrix(xi, params, grid)


def equivalence_constant(xi, eps: float, params: HypoParams, grid: VelocityGrid) -> float:
    """Smallest c with (1 - c)||f||^2 <= |||f|||^2 <= (1 + c)||f||^2 at this (xi, eps)."""
    evals = linalg.eigvalsh(eps * correction_matrix(xi, params, grid))
    return float(np.max(np.abs(evals)) / grid.weight)


def lambda_eps_matrix(xi, eps: float, L_op: AssembledL, grid: VelocityGrid) -> np.ndarray:
    """Dense Lambda^eps(xi) = (L - i eps diag(v.xi)) / eps^2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    transport = grid.nodes @ np.asarray(xi, dtype=float)
    return (L_op.matrix - 1j * eps * np.diag(transport)) / eps ** 2


def lambda_eps_apply(fhat: np.ndarray, xi, eps: float, L_op: AssembledL, grid: VelocityGrid) -> np.ndarray:
    """(1/eps^2)(L f - i eps (v.xi) f) for one field or a batch of fields."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    fhat = np.asarray(fhat)
    transport = grid.nodes @ np.asarray(xi, dtype=float)
    return (L_op.apply(fhat) - 1j * eps * transport * fhat) / eps ** 2


@dataclass
class DissipativityCase:
    xi: Tuple[float, float, float]
    eps: float
    lambda0_fit: float
    c_equiv: float
    witness: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.lambda0_fit > 0 and self.c_equiv < EQUIVALENCE_LIMIT


@dataclass
class DissipativityReport:
    params: HypoParams
    cases: List[DissipativityCase]

    @property
    def passed(self) -> bool:
        return all(case.passed for case in self.cases)

    @property
    def lambda0(self) -> float:
        return min(case.lambda0_fit for case in self.cases)

    @property
    def c_equiv(self) -> float:
        return max(case.c_equiv for case in self.cases)

    def to_frame(self) -> pd.DataFrame:
        rows = [(*case.xi, case.eps, case.lambda0_fit, case.c_equiv, case.passed) for case in self.cases]
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def _complement_basis(grid: VelocityGrid) -> np.ndarray:
    evals, evecs = linalg.eigh(macro_basis(grid).matrix())
    return evecs[:, evals < 0.5]


def _dissipation_case(
    xi: np.ndarray,
    eps: float,
    L_op: AssembledL,
    grid: VelocityGrid,
    gram: np.ndarray,
    params: HypoParams,
    samples: int,
    rng: np.random.Generator,
    whole_space: bool,
) -> DissipativityCase:
    basis = macro_basis(grid)
    N = grid.node_count
    P = basis.matrix()
    Pperp = np.eye(N) - P
    H = modified_gram(xi, eps, params, grid)
    A = lambda_eps_matrix(xi, eps, L_op, grid)
    D = -0.5 * (A.conj().T @ H + H @ A)
    xi_sq = float(np.dot(xi, xi))
    macro_weight = xi_sq / (1.0 + xi_sq) if whole_space else 1.0
    R = Pperp @ gram @ Pperp / eps ** 2 + macro_weight * grid.weight * P

    # at xi = 0 only microscopic fields are admissible
    Z = _complement_basis(grid) if xi_sq == 0.0 else np.eye(N)
    Dz = Z.T @ D @ Z
    Rz = Z.T @ R @ Z
    Dz, Rz = 0.5 * (Dz + Dz.conj().T), 0.5 * (Rz + Rz.conj().T)
    evals, evecs = linalg.eigh(Dz, Rz)
    candidates = [Z @ evecs[:, 0]]

    weight = np.sqrt(grid.sqrt_mu)
    for k in range(samples):
        raw = (rng.standard_normal(N) + 1j * rng.standard_normal(N)) * weight
        mix = 10.0 ** rng.uniform(-3, 1)
        f = basis.project(raw) + mix * basis.complement(raw)
        if xi_sq == 0.0:
            f = basis.complement(f)
        candidates.append(f)
    fields = np.array(candidates)
    num = np.real(np.einsum("si,ij,sj->s", fields.conj(), D, fields))
    den = np.real(np.einsum("si,ij,sj->s", fields.conj(), R, fields))
    ratios = num / den
    worst = int(np.argmin(ratios))
    c_equiv = equivalence_constant(xi, eps, params, grid)
    return DissipativityCase(tuple(float(x) for x in xi), float(eps), float(ratios[worst]), c_equiv, fields[worst])


def dissipativity_check(
    L_op: AssembledL,
    grid: VelocityGrid,
    gram: np.ndarray,
    xi_list: Iterable[Sequence[float]],
    eps_list: Iterable[float],
    params: HypoParams,
    samples: int = 32,
    rng: Optional[np.random.Generator] = None,
    whole_space: bool = False,
    raise_on_fail: bool = True,
) -> DissipativityReport:
    """
    Fit lambda0 = min -Re<<Lambda f, f>> / (eps^-2 ||P_perp f||^2_* + w(xi) ||P f||^2).

    The sample set always contains the extremal field of the generalized
    eigenproblem, so lambda0_fit is the exact minimum over the discrete space.
    w(xi) is 1 on the torus and |xi|^2/<xi>^2 in the whole-space form.
    """
    rng = rng or np.random.default_rng(0)
    cases = []
    for xi in xi_list:
        for eps in eps_list:
            case = _dissipation_case(np.asarray(xi, float), eps, L_op, grid, gram, params, samples, rng, whole_space)
            logger.debug("dissipativity xi=%s eps=%g lambda0=%.3e c=%.3f", case.xi, eps, case.lambda0_fit, case.c_equiv)
            cases.append(case)
            if raise_on_fail and not case.passed:
                logger.error(
                    "xi=%s eps=%g: lambda0=%.3e, c=%.3f (limit %.2f)", case.xi, eps, case.lambda0_fit, case.c_equiv, EQUIVALENCE_LIMIT
                )
                raise DissipativityError(case.xi, eps, case.lambda0_fit, case.witness)
    return DissipativityReport(params, cases)


@dataclass
class HypoSearchResult:
    params: HypoParams
    report: DissipativityReport
    table: pd.DataFrame


def search_hypo_params(
    L_op: AssembledL,
    grid: VelocityGrid,
    gram: np.ndarray,
    xi_list: Sequence[Sequence[float]],
    eps_list: Sequence[float],
    samples: int = 16,
    rng: Optional[np.random.Generator] = None,
    delta1_grid: Sequence[float] = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
    max_equivalence: float = EQUIVALENCE_LIMIT,
    whole_space: bool = False,
) -> HypoSearchResult:
    """
    Grid search over delta1 with delta2 = delta1/10 and delta3 = delta2/10.

    Keeps the triple with the largest minimum dissipation margin among those
    whose equivalence constant stays below ``max_equivalence``.
    """
    rng = rng or np.random.default_rng(0)
    best: Optional[DissipativityReport] = None
    rows = []
    for delta1 in delta1_grid:
        params = HypoParams(delta1, delta1 / 10.0, delta1 / 100.0)
        report = dissipativity_check(L_op, grid, gram, xi_list, eps_list, params, samples, rng, whole_space, raise_on_fail=False)
        rows.append((delta1, report.lambda0, report.c_equiv))
        if report.passed and report.c_equiv < max_equivalence and (best is None or report.lambda0 > best.lambda0):
            best = report
    table = pd.DataFrame(rows, columns=["delta1", "lambda0_fit", "c_equiv"])
    if best is None:
        worst = min(report.cases, key=lambda c: c.lambda0_fit)
        raise DissipativityError(worst.xi, worst.eps, worst.lambda0_fit, worst.witness)
    logger.info("hypocoercive search picked %s (lambda0=%.3e, c=%.3f)", best.params, best.lambda0, best.c_equiv)
    return HypoSearchResult(best.params, best, table)
