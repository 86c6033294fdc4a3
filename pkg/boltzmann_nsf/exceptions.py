"""
Exception hierarchy for the Boltzmann / Navier-Stokes-Fourier lab.

Library code raises these; only the command line entry point turns them into
exit codes.
"""

from typing import Any, List, Optional, Sequence


class BoltzmannNSFError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(BoltzmannNSFError):
    """Invalid or unreadable run configuration."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class GridError(BoltzmannNSFError):
    """Invalid velocity grid parameters or mismatched grids."""


class KernelError(BoltzmannNSFError):
    """Invalid collision kernel parameters."""


class DenseBudgetError(BoltzmannNSFError):
    """A dense node x node object would exceed the configured budget."""

    def __init__(self, what: str, size: int, budget: int):
        self.size = size
        self.budget = budget
        super().__init__(f"{what}: {size} nodes exceeds the dense budget of {budget}")


class AsymmetryError(BoltzmannNSFError):
    """Assembled linearized operator is too far from symmetric."""

    def __init__(self, asymmetry: float, tolerance: float):
        self.asymmetry = asymmetry
        super().__init__(f"relative asymmetry {asymmetry:.3e} above {tolerance:.1e}")


class NonFiniteError(BoltzmannNSFError):
    """NaN or inf produced by a quadrature or a propagator."""


class MomentConstraintError(BoltzmannNSFError):
    """A field that must be microscopic carries macroscopic moments."""

    def __init__(self, message: str, defect: float):
        self.defect = defect
        super().__init__(f"{message} (relative defect {defect:.3e})")


class CoercivityError(BoltzmannNSFError):
    """Fitted coercivity constant is not positive."""

    def __init__(self, lambda_fit: float, witness: Any = None):
        self.lambda_fit = lambda_fit
        self.witness = witness
        super().__init__(f"coercivity constant {lambda_fit:.3e} is not positive")


class DissipativityError(BoltzmannNSFError):
    """Modified-norm dissipation inequality violated."""

    def __init__(self, xi: Sequence[float], eps: float, lambda0: float, witness: Any = None):
        self.xi = tuple(xi)
        self.eps = eps
        self.lambda0 = lambda0
        self.witness = witness
        super().__init__(f"dissipation fails at xi={self.xi}, eps={eps}: lambda0={lambda0:.3e}")


class StepRejectedError(BoltzmannNSFError):
    """Nonlinear increment too large compared to the state (blow-up guard)."""


class SmallnessError(BoltzmannNSFError):
    """Initial data above the configured smallness threshold."""

    def __init__(self, norm: float, threshold: float):
        self.norm = norm
        self.threshold = threshold
        super().__init__(f"data norm {norm:.3e} above threshold {threshold:.3e}")


class PicardConvergenceError(BoltzmannNSFError):
    """Fixed-point iteration failed to contract."""

    def __init__(self, residuals: List[float], contraction_factors: Optional[List[float]] = None):
        self.residuals = list(residuals)
        if contraction_factors is None:
            contraction_factors = [b / a for a, b in zip(self.residuals, self.residuals[1:]) if a > 0]
        self.contraction_factors = list(contraction_factors)
        worst = max(self.contraction_factors, default=float("nan"))
        super().__init__(f"Picard iteration did not converge; residuals={self.residuals}, worst contraction factor={worst:.3g}")


class BranchTrackingError(BoltzmannNSFError):
    """Eigenvalue branches could not be matched between two radii."""

    def __init__(self, radius: float, overlap: float):
        self.radius = radius
        self.overlap = overlap
        super().__init__(f"ambiguous branch matching at radius {radius:.4g} (overlap {overlap:.3f})")


class ConstraintViolationError(BoltzmannNSFError):
    """Fluid data violate incompressibility, Boussinesq or mean-free constraints."""

    def __init__(self, constraint: str, defect: float):
        self.constraint = constraint
        self.defect = defect
        super().__init__(f"constraint '{constraint}' violated (defect {defect:.3e})")


class CacheVersionError(BoltzmannNSFError):
    """Operator cache written by an incompatible version."""


class RateFitError(BoltzmannNSFError):
    """Not enough sweep points to fit a convergence rate."""
