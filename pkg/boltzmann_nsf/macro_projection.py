"""
Micro-macro decomposition: moments, the projector P onto Ker L, the auxiliary
moments M and Theta, and lifts of fluid triples to kinetic distributions.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np

from .velocity_space import VelocityGrid

Scalar = Union[float, complex, np.ndarray]


@dataclass
class MacroTriple:
    """Fluid moments (rho, u, theta); entries may carry leading batch axes."""

    rho: Scalar
    u: np.ndarray
    theta: Scalar

    def as_vector(self) -> np.ndarray:
        rho = np.asarray(self.rho)[..., None]
        theta = np.asarray(self.theta)[..., None]
        return np.concatenate([rho, np.asarray(self.u), theta], axis=-1)

    @classmethod
    def from_vector(cls, vec: np.ndarray) -> "MacroTriple":
        vec = np.asarray(vec)
        return cls(rho=vec[..., 0], u=vec[..., 1:4], theta=vec[..., 4])


class MacroBasis:
    """
    Discrete kernel basis of the linearized operator for one grid.

    ``orthonormal`` holds the five kernel fields re-orthonormalized by
    Gram-Schmidt in the discrete inner product, ``functionals`` the moment test
    functions and ``lift`` the dual basis, so moments(lift(m)) = m exactly and
    P = lift o moments.
    """

    def __init__(self, grid: VelocityGrid):
        self.grid = grid
        v = grid.nodes
        sqrt_mu = grid.sqrt_mu
        speed_sq = grid.maxwellian.speed_sq
        self.span = np.column_stack([sqrt_mu, v * sqrt_mu[:, None], (speed_sq - 3.0) * sqrt_mu])
        self.functionals = self.span.copy()
        self.functionals[:, 4] /= 3.0
        self.orthonormal = self._gram_schmidt(self.span)
        coupling = grid.weight * self.functionals.T @ self.orthonormal
        self.lift = self.orthonormal @ np.linalg.inv(coupling)
        self.aux_M = v * ((speed_sq - 5.0) * sqrt_mu)[:, None]
        self.aux_Theta = (v[:, :, None] * v[:, None, :] - np.eye(3)) * sqrt_mu[:, None, None]

    def _gram_schmidt(self, columns: np.ndarray) -> np.ndarray:
        w = self.grid.weight
        basis = []
        for k in range(columns.shape[1]):
            vec = columns[:, k].astype(float).copy()
            for _ in range(2):
                for q in basis:
                    vec -= w * np.dot(q, vec) * q
            basis.append(vec / np.sqrt(w * np.dot(vec, vec)))
        return np.column_stack(basis)

    def moment_vector(self, f: np.ndarray) -> np.ndarray:
        return self.grid.weight * (np.asarray(f) @ self.functionals)

    def project(self, f: np.ndarray) -> np.ndarray:
        coeffs = self.grid.weight * (np.asarray(f) @ self.orthonormal)
        return coeffs @ self.orthonormal.T

    def complement(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        return f - self.project(f)

    def matrix(self) -> np.ndarray:
        """Dense P acting on column vectors."""
        return self.grid.weight * self.orthonormal @ self.orthonormal.T


@lru_cache(maxsize=16)
def macro_basis(grid: VelocityGrid) -> MacroBasis:
    return MacroBasis(grid)


def moments(f: np.ndarray, grid: VelocityGrid) -> MacroTriple:
    """rho = <f, sqrt(mu)>, u = <f, v sqrt(mu)>, theta = <f, (|v|^2 - 3) sqrt(mu) / 3>."""
    return MacroTriple.from_vector(macro_basis(grid).moment_vector(f))


def project_P(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    return macro_basis(grid).project(f)


def project_Pperp(f: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    return macro_basis(grid).complement(f)


def aux_moments(f: np.ndarray, grid: VelocityGrid) -> Tuple[np.ndarray, np.ndarray]:
    """M[f] = <f, v(|v|^2 - 5) sqrt(mu)> and Theta[f] = <f, (v x v - I) sqrt(mu)>."""
    basis = macro_basis(grid)
    f = np.asarray(f)
    M = grid.weight * np.einsum("...i,ia->...a", f, basis.aux_M)
    Theta = grid.weight * np.einsum("...i,iab->...ab", f, basis.aux_Theta)
    return M, Theta


def lift_fluid(m: Union[MacroTriple, np.ndarray], grid: VelocityGrid) -> np.ndarray:
    """
    Kinetic field [rho + u.v + theta (|v|^2 - 3)/2] sqrt(mu) in the discrete kernel.

    Realized with the dual basis of the moment functionals, which agrees with
    the bracketed field up to quadrature error and inverts ``moments`` exactly.
    """
    vec = m.as_vector() if isinstance(m, MacroTriple) else np.asarray(m)
    return vec @ macro_basis(grid).lift.T
