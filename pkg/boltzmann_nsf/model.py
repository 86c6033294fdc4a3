"""
The kinetic model bundle shared by the solvers: grid, kernel, assembled L and
the H^{s,*} Gram matrix, loaded from the operator cache when available.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy import linalg

from .cache import OperatorCache, operator_key
from .collision_core import AssembledL, CollisionKernel, assemble_L, gamma_bilinear
from .macro_projection import MacroBasis, macro_basis
from .velocity_space import DEFAULT_DENSE_BUDGET, VelocityGrid, hsv_star_gram

logger = logging.getLogger(__name__)


def load_or_assemble_L(
    grid: VelocityGrid,
    kernel: CollisionKernel,
    cache: Optional[OperatorCache] = None,
    cubic_symmetrize: bool = True,
    budget: int = DEFAULT_DENSE_BUDGET,
) -> AssembledL:
    """Assemble L, going through the binary cache when one is configured."""
    if cache is None:
        return assemble_L(grid, kernel, budget=budget, cubic_symmetrize=cubic_symmetrize)
    key = operator_key(grid, kernel, cubic=cubic_symmetrize)

    def compute():
        op = assemble_L(grid, kernel, budget=budget, cubic_symmetrize=cubic_symmetrize)
        return {"matrix": op.matrix, "asymmetry": np.array(op.asymmetry)}

    arrays = cache.get_or_compute("linearized", key, compute)
    matrix = arrays["matrix"]
    eigenvalues = linalg.eigvalsh(matrix)
    gap = float(-np.sort(eigenvalues)[::-1][5])
    return AssembledL(matrix, macro_basis(grid).orthonormal.T.copy(), gap, float(arrays["asymmetry"]), eigenvalues, grid, kernel)


def load_or_build_gram(
    grid: VelocityGrid,
    kernel: CollisionKernel,
    cache: Optional[OperatorCache] = None,
    budget: int = DEFAULT_DENSE_BUDGET,
) -> np.ndarray:
    if cache is None:
        return hsv_star_gram(grid, kernel, budget)
    arrays = cache.get_or_compute("gram", operator_key(grid, kernel), lambda: {"gram": hsv_star_gram(grid, kernel, budget)})
    return arrays["gram"]


@dataclass(eq=False)
class KineticModel:
    """
    Operators of the perturbation equation on one velocity grid.

    ``nonlinear`` and ``transport`` switch off Gamma and the v.xi term for
    consistency experiments.
    """

    grid: VelocityGrid
    kernel: CollisionKernel
    L: AssembledL
    cache: Optional[OperatorCache] = field(default=None, repr=False)
    nonlinear: bool = True
    transport: bool = True

    @classmethod
    def build(
        cls,
        grid: VelocityGrid,
        kernel: CollisionKernel,
        cache: Optional[OperatorCache] = None,
        cubic_symmetrize: bool = True,
        **flags,
    ) -> "KineticModel":
        L = load_or_assemble_L(grid, kernel, cache, cubic_symmetrize)
        return cls(grid, kernel, L, cache, **flags)

    @cached_property
    def gram(self) -> np.ndarray:
        return load_or_build_gram(self.grid, self.kernel, self.cache)

    @property
    def basis(self) -> MacroBasis:
        return macro_basis(self.grid)

    @property
    def node_count(self) -> int:
        return self.grid.node_count

    def gamma(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        return gamma_bilinear(f, g, self.grid, self.kernel)

    def transport_symbol(self, xi: np.ndarray) -> np.ndarray:
        """Diagonal of v.xi, or zeros when transport is switched off."""
        if not self.transport:
            return np.zeros(self.node_count)
        return self.grid.nodes @ np.asarray(xi, dtype=float)

    def lambda_matrix(self, xi: np.ndarray, eps: float) -> np.ndarray:
        return (self.L.matrix - 1j * eps * np.diag(self.transport_symbol(xi))) / eps ** 2

    def with_flags(self, **flags) -> "KineticModel":
        values = {"nonlinear": self.nonlinear, "transport": self.transport, **flags}
        model = KineticModel(self.grid, self.kernel, self.L, self.cache, **values)
        if "gram" in self.__dict__:
            model.__dict__["gram"] = self.gram
        return model
