"""
Fourier-spectral mild solutions of the incompressible Navier-Stokes-Fourier
system with the Boussinesq relation,

    d/dt u + P Div(u x u) - nu1 Lap u = 0,   div u = 0,
    d/dt theta + Div(u theta) - nu2 Lap theta = 0,   rho + theta = 0,

on the same Fourier lattice and time grid as the kinetic solver.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .diagnostics_norms import time_l2, time_sup, xi_aggregate
from .exceptions import ConstraintViolationError, PicardConvergenceError, SmallnessError
from .lattice import FourierLattice
from .spectral_branches import phi_scalar

logger = logging.getLogger(__name__)

CONSTRAINT_TOLERANCE = 1e-10


@dataclass
class FluidState:
    """Mode amplitudes rho (K,), u (K, 3) and theta (K,) at one time."""

    time: float
    lattice: FourierLattice
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray

    @classmethod
    def zeros(cls, lattice: FourierLattice) -> "FluidState":
        K = lattice.size
        return cls(0.0, lattice, np.zeros(K, complex), np.zeros((K, 3), complex), np.zeros(K, complex))

    def triples(self) -> np.ndarray:
        """(rho, u, theta) per mode as (K, 5) vectors."""
        return np.column_stack([self.rho, self.u, self.theta])


@dataclass
class FluidTrajectory:
    lattice: FourierLattice
    times: np.ndarray
    rho: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    u_residuals: List[float] = field(default_factory=list)
    theta_residuals: List[float] = field(default_factory=list)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def state(self, n: int) -> FluidState:
        return FluidState(float(self.times[n]), self.lattice, self.rho[n], self.u[n], self.theta[n])

    def triples(self) -> np.ndarray:
        """(T+1, K, 5) array of (rho, u, theta)."""
        return np.concatenate([self.rho[..., None], self.u, self.theta[..., None]], axis=-1)

    @property
    def u_contraction_factors(self) -> List[float]:
        r = self.u_residuals
        return [b / a for a, b in zip(r, r[1:]) if a > 0]

    def constraint_defects(self) -> dict:
        return constraint_defects(self.lattice, self.u, self.theta, self.rho)


def leray_project(u_hat: np.ndarray, xi: Sequence[float]) -> np.ndarray:
    """u - xi (xi.u)/|xi|^2 ; the identity at xi = 0."""
    u_hat = np.asarray(u_hat)
    xi = np.asarray(xi, dtype=float)
    xi_sq = float(np.dot(xi, xi))
    if xi_sq == 0:
        return u_hat.copy()
    return u_hat - np.multiply.outer(u_hat @ xi / xi_sq, xi)


def leray_apply(u: np.ndarray, lattice: FourierLattice) -> np.ndarray:
    """Leray projection of every mode of u, shape (..., K, 3)."""
    xi = lattice.xi
    xi_sq = np.sum(xi ** 2, axis=1)
    safe = np.where(xi_sq > 0, xi_sq, 1.0)
    along = np.einsum("...ka,ka->...k", u, xi) / safe
    return u - along[..., None] * xi


def _products(a: np.ndarray, b: np.ndarray, lattice: FourierLattice) -> np.ndarray:
    """Spectral coefficients of a_i b_j for mode arrays (..., K, I) and (..., K, J)."""
    a_phys = lattice.to_physical(np.moveaxis(a, -2, 0))
    b_phys = lattice.to_physical(np.moveaxis(b, -2, 0))
    prod = a_phys[..., :, None] * b_phys[..., None, :]
    return np.moveaxis(lattice.from_physical(prod), 0, -3)


def q_ns(u: np.ndarray, v: np.ndarray, lattice: FourierLattice) -> np.ndarray:
    """
    Q_NS(v, u) = -1/2 P(Div(v x u) + Div(u x v)), modes shape (..., K, 3).

    Products are formed at 3M + 1 collocation points per active axis, so the
    truncated lattice convolution is exact.
    """
    tensor = _products(v, u, lattice)
    tensor = tensor + np.swapaxes(tensor, -1, -2)
    div = np.einsum("ka,...kab->...kb", 1j * lattice.xi, tensor)
    return -0.5 * leray_apply(div, lattice)


def heat_apply(field: np.ndarray, xi: Sequence[float], nu: float, t: float) -> np.ndarray:
    """e^{-nu |xi|^2 t} field."""
    if t < 0 or nu <= 0:
        raise ValueError("heat_apply needs t >= 0 and nu > 0")
    return np.exp(-nu * float(np.dot(xi, xi)) * t) * np.asarray(field)


def _transport_source(u: np.ndarray, theta: np.ndarray, lattice: FourierLattice) -> np.ndarray:
    """-Div(u theta) per mode."""
    flux = _products(u, theta[..., None], lattice)[..., 0]
    return -np.einsum("ka,...ka->...k", 1j * lattice.xi, flux)


def _mild(initial: np.ndarray, source: np.ndarray, rates: np.ndarray, dt: float) -> np.ndarray:
    """
    y' = -rate y + S on a uniform grid, exact for piecewise-linear S.

    initial (K, ...), source (T+1, K, ...), rates (K,).
    """
    decay, phi1, phi2 = phi_scalar(-rates * dt)
    extra = (slice(None),) + (None,) * (initial.ndim - 1)
    decay, lead, trail = decay[extra], dt * (phi1 - phi2)[extra], dt * phi2[extra]
    out = np.zeros(source.shape, dtype=complex)
    out[0] = initial
    for n in range(source.shape[0] - 1):
        out[n + 1] = decay * out[n] + lead * source[n] + trail * source[n + 1]
    return out


def constraint_defects(lattice: FourierLattice, u: np.ndarray, theta: np.ndarray, rho: Optional[np.ndarray] = None) -> dict:
    """Largest violations of div u = 0, rho + theta = 0 (xi != 0) and the mean-free condition."""
    zero = lattice.zero_index
    nonzero = np.arange(lattice.size) != zero
    defects = {
        "Div_x u = 0": float(np.max(np.abs(np.einsum("...ka,ka->...k", u, lattice.xi)), initial=0.0)),
        "mean-free": float(max(np.max(np.abs(u[..., zero, :]), initial=0.0), np.max(np.abs(theta[..., zero]), initial=0.0))),
    }
    if rho is not None:
        defects["grad_x(rho + theta) = 0"] = float(np.max(np.abs((rho + theta)[..., nonzero]), initial=0.0))
        defects["mean-free"] = max(defects["mean-free"], float(np.max(np.abs(rho[..., zero]), initial=0.0)))
    return defects


def check_constraints(lattice: FourierLattice, u: np.ndarray, theta: np.ndarray, rho: Optional[np.ndarray] = None, tol: float = CONSTRAINT_TOLERANCE) -> None:
    scale = max(1.0, float(np.max(np.abs(u), initial=0.0)), float(np.max(np.abs(theta), initial=0.0)))
    for name, defect in constraint_defects(lattice, u, theta, rho).items():
        if defect > tol * scale:
            raise ConstraintViolationError(name, defect)


def _mode_l1(values: np.ndarray) -> float:
    """sum_xi sup_t |values| for (T+1, K, ...) arrays."""
    mags = np.abs(values)
    if mags.ndim > 2:
        mags = np.sqrt(np.sum(mags ** 2, axis=tuple(range(2, mags.ndim))))
    return float(np.sum(np.max(mags, axis=0)))


def nsf_picard(
    u0: np.ndarray,
    theta0: np.ndarray,
    T: float,
    dt: float,
    nu1: float,
    nu2: float,
    lattice: FourierLattice,
    tol: float = 1e-10,
    max_iter: int = 30,
    eta1: float = np.inf,
    rho0: Optional[np.ndarray] = None,
) -> FluidTrajectory:
    """
    Mild solution on [0, T]: u by Picard iteration of
    u = V(t)u0 + int V(t - s) Q_NS(u, u) ds, then theta by the
    transport-diffusion mild form with source -Div(u theta), then rho = -theta
    off the zero mode.
    """
    if nu1 <= 0 or nu2 <= 0:
        raise ValueError("viscosities must be positive")
    u0 = np.asarray(u0, dtype=complex)
    theta0 = np.asarray(theta0, dtype=complex)
    check_constraints(lattice, u0, theta0, rho0)
    data_norm = float(np.sum(np.linalg.norm(u0, axis=-1)) + np.sum(np.abs(theta0)))
    if data_norm > eta1:
        raise SmallnessError(data_norm, eta1)

    steps = int(round(T / dt))
    times = dt * np.arange(steps + 1)
    xi_sq = np.sum(lattice.xi ** 2, axis=1)
    zero_source_u = np.zeros((steps + 1,) + u0.shape, dtype=complex)
    linear_u = _mild(u0, zero_source_u, nu1 * xi_sq, dt)

    u = np.zeros_like(linear_u)
    u_residuals: List[float] = []
    for iteration in range(max_iter):
        following = linear_u + _mild(np.zeros_like(u0), q_ns(u, u, lattice), nu1 * xi_sq, dt)
        u_residuals.append(_mode_l1(following - u))
        u = following
        if u_residuals[-1] < tol:
            break
    else:
        raise PicardConvergenceError(u_residuals)

    theta = np.zeros((steps + 1,) + theta0.shape, dtype=complex)
    theta_residuals: List[float] = []
    for iteration in range(max_iter):
        following = _mild(theta0, _transport_source(u, theta, lattice), nu2 * xi_sq, dt)
        theta_residuals.append(_mode_l1(following - theta))
        theta = following
        if theta_residuals[-1] < tol:
            break
    else:
        raise PicardConvergenceError(theta_residuals)

    rho = -theta
    rho[:, lattice.zero_index] = 0.0
    trajectory = FluidTrajectory(lattice, times, rho, u, theta, u_residuals, theta_residuals)
    logger.info("nsf_picard: %d u iterations, %d theta iterations", len(u_residuals), len(theta_residuals))
    return trajectory


@dataclass
class QNSBoundReport:
    """Worst ratios of ||xi|^-1 Q_NS(v, u)||_{L1 L2_t} to the two product bounds."""

    constant: float
    symmetric_constant: float
    ratios: List[Tuple[float, float]]
    skipped: int = 0


def qns_bound_report(
    samples: Sequence[Tuple[np.ndarray, np.ndarray]],
    lattice: FourierLattice,
    dt: float,
    p: float = 1.0,
) -> QNSBoundReport:
    """Samples are (v, u) trajectories of shape (T+1, K, 3)."""
    xi_norm = np.linalg.norm(lattice.xi, axis=1)
    inv = np.where(xi_norm > 0, 1.0 / np.where(xi_norm > 0, xi_norm, 1.0), 0.0)
    ratios = []
    skipped = 0
    for v, u in samples:
        v, u = np.asarray(v), np.asarray(u)
        if not np.any(v) or not np.any(u):
            skipped += 1
            continue
        q = np.linalg.norm(q_ns(u, v, lattice), axis=-1) * inv
        lhs = xi_aggregate(time_l2(q, dt), p)
        v_mag = np.linalg.norm(v, axis=-1)
        u_mag = np.linalg.norm(u, axis=-1)
        first = xi_aggregate(time_l2(v_mag, dt), p) * xi_aggregate(time_sup(u_mag), 1)
        second = xi_aggregate(time_sup(v_mag), p) * xi_aggregate(time_l2(u_mag, dt), 1)
        ratios.append((lhs / first, lhs / second))
    if not ratios:
        return QNSBoundReport(float("nan"), float("nan"), [], skipped)
    arr = np.array(ratios)
    return QNSBoundReport(float(arr[:, 0].max()), float(arr[:, 1].max()), ratios, skipped)


def random_solenoidal(lattice: FourierLattice, rng: np.random.Generator, amplitude: float = 1.0, leading: Tuple[int, ...] = ()) -> np.ndarray:
    """Real, mean-free, divergence-free random velocity modes of shape leading + (K, 3)."""
    shape = leading + (lattice.size, 3)
    u = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    u = 0.5 * (u + np.conj(np.take(u, lattice.negation, axis=-2)))
    u = leray_apply(u, lattice)
    u[..., lattice.zero_index, :] = 0.0
    return amplitude * u


def trajectory_frame(trajectory: FluidTrajectory) -> pd.DataFrame:
    """Long-format export: one row per (t, mode) with real and imaginary parts."""
    T1, K = trajectory.rho.shape
    modes = trajectory.lattice.modes
    frame = pd.DataFrame(
        {
            "t": np.repeat(trajectory.times, K),
            "mode": np.tile([" ".join(str(int(c)) for c in m) for m in modes], T1),
        }
    )
    columns = {"rho": trajectory.rho, "theta": trajectory.theta}
    columns.update({f"u{a + 1}": trajectory.u[..., a] for a in range(3)})
    for name, values in columns.items():
        frame[f"re_{name}"] = values.real.ravel()
        frame[f"im_{name}"] = values.imag.ravel()
    return frame


def norm_summary(trajectory: FluidTrajectory) -> pd.DataFrame:
    dt = trajectory.dt
    u_mag = np.linalg.norm(trajectory.u, axis=-1)
    xi_bracket = np.sqrt(1.0 + np.sum(trajectory.lattice.xi ** 2, axis=1))
    rows = {
        "u_L1xi_Linf": xi_aggregate(time_sup(u_mag)),
        "bracket_u_L1xi_L2t": xi_aggregate(time_l2(u_mag * xi_bracket, dt)),
        "theta_L1xi_Linf": xi_aggregate(time_sup(np.abs(trajectory.theta))),
        "u_iterations": len(trajectory.u_residuals),
        "theta_iterations": len(trajectory.theta_residuals),
    }
    rows.update(trajectory.constraint_defects())
    return pd.DataFrame([{"quantity": k, "value": v} for k, v in rows.items()])
