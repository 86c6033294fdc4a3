"""
Kinetic-to-fluid convergence experiment.

For each Knudsen number the kinetic solution f^eps started from the lifted
fluid data g0 is compared with the lifted NSF solution g(t). The difference
is split as

    f - g ~ U^eps(f0 - g0) + (U^eps - U) g0
            + (Psi^eps[f, f] - Psi^eps[g, g]) + (Psi^eps[g, g] - Psi[g, g]),

and the discrepancy sum_xi sup_t ||f - g||_{L2_v} is fitted against eps.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .exceptions import BoltzmannNSFError, ConstraintViolationError, RateFitError, SmallnessError
from .kinetic_solver import KineticState, PropagatorCache, duhamel_source, evolve, gamma_hat, linear_trajectory, mode_norms
from .lattice import FourierLattice
from .macro_projection import lift_fluid, macro_basis
from .model import KineticModel
from .nsf_solver import FluidTrajectory, check_constraints, nsf_picard
from .spectral_branches import LimitingSemigroup, axis_viscosities
from .velocity_space import VelocityGrid

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["eps", "discrepancy", "T1", "T2", "T3", "T4", "closure", "runtime_s"]

# accepted window around delta_target and minimum r^2 of the log-log fit
RATE_WINDOW = (-0.3, 0.2)
R2_MIN = 0.95
# largest eps * max(nu1, nu2) for which the branch expansion governs the sweep
REGIME_LIMIT = 0.25


@dataclass
class SweepConfig:
    """
    Sweep parameters. Data are u0 = a (0, sin x, 0), theta0 = a t cos x and
    rho0 = -theta0 + a c cos x along the lattice axis, with t, c the thermal
    and acoustic weights; ``amplitude=None`` scales the data to half of eta2.
    """

    eps_list: List[float]
    T: float = 2.0
    dt: float = 0.01
    well_prepared: bool = True
    delta_target: float = 1.0
    scheme: str = "exponential-euler"
    eta2: float = 0.02
    amplitude: Optional[float] = None
    thermal_weight: float = 0.0
    acoustic_weight: float = 0.0
    nu1: Optional[float] = None
    nu2: Optional[float] = None
    sanity: bool = False

    def __post_init__(self):
        if not self.eps_list or any(e <= 0 or e > 1 for e in self.eps_list):
            raise ValueError("eps_list entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        if not 0 < self.delta_target <= 1:
            raise ValueError("delta_target must lie in (0, 1]")
        if self.acoustic_weight and self.well_prepared:
            raise ValueError("acoustic data are ill-prepared; set well_prepared to false")

    @classmethod
    def from_run_config(cls, config) -> "SweepConfig":
        s = config.sweep
        return cls(
            eps_list=list(s.eps_list),
            T=s.T,
            dt=s.dt,
            well_prepared=s.well_prepared,
            delta_target=s.delta_target,
            scheme=config.solver.scheme,
            eta2=config.solver.eta2,
            amplitude=s.shear_amplitude,
            thermal_weight=s.thermal_amplitude,
            acoustic_weight=s.acoustic_amplitude,
            nu1=s.nu1,
            nu2=s.nu2,
        )

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))


def fluid_data(config: SweepConfig, lattice: FourierLattice, scale: float = 1.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mode amplitudes (rho0, u0, theta0) of the sweep data."""
    K = lattice.size
    rho = np.zeros(K, complex)
    u = np.zeros((K, 3), complex)
    theta = np.zeros(K, complex)
    unit = np.zeros(3, dtype=int)
    unit[lattice.axis] = 1
    plus, minus = lattice.index[tuple(unit)], lattice.index[tuple(-unit)]
    component = (lattice.axis + 1) % 3
    u[plus, component], u[minus, component] = -0.5j * scale, 0.5j * scale
    theta[[plus, minus]] = 0.5 * config.thermal_weight * scale
    rho[[plus, minus]] = -theta[[plus, minus]] + 0.5 * config.acoustic_weight * scale
    return rho, u, theta


def build_g0(
    rho0: np.ndarray,
    u0: np.ndarray,
    theta0: np.ndarray,
    grid: VelocityGrid,
    lattice: FourierLattice,
    well_prepared: bool = True,
    eps: float = 1.0,
) -> KineticState:
    """
    g0 = [rho0 + u0.v + theta0 (|v|^2 - 3)/2] sqrt(mu) per mode.

    Rejects data violating Div u0 = 0, the mean-free normalization or, for
    well-prepared data, grad(rho0 + theta0) = 0.
    """
    rho0, u0, theta0 = (np.asarray(a, dtype=complex) for a in (rho0, u0, theta0))
    if well_prepared:
        check_constraints(lattice, u0, theta0, rho0)
    else:
        check_constraints(lattice, u0, theta0)
        if abs(rho0[lattice.zero_index]) > 1e-10:
            raise ConstraintViolationError("mean-free", float(abs(rho0[lattice.zero_index])))
    triples = np.column_stack([rho0, u0, theta0])
    return KineticState(eps, 0.0, lattice, lift_fluid(triples, grid))


def trajectory_norm(fields: np.ndarray, model: KineticModel) -> float:
    """sum_xi sup_t ||.||_{L2_v} of a (T+1, K, N) array."""
    return float(np.sum(np.max(mode_norms(fields, model), axis=0)))


def psi_eps(f_fields: np.ndarray, g_fields: np.ndarray, eps: float, cache: PropagatorCache, dt: float) -> np.ndarray:
    """Psi^eps[f, g](t_n) = (1/eps) int_0^t_n U^eps(t_n - s) Gamma^(f(s), g(s)) ds, shape (T+1, K, N)."""
    source = gamma_hat(f_fields, g_fields, cache.lattice, cache.model)
    return duhamel_source(source, eps, cache, dt).fields / eps


def psi_limit(g_fields: np.ndarray, dt: float, semigroup: LimitingSemigroup, lattice: FourierLattice, model: KineticModel) -> np.ndarray:
    """Psi[g, g] on the time grid of g_fields."""
    return semigroup.psi(gamma_hat(g_fields, g_fields, lattice, model), dt, lattice)


def lift_trajectory(trajectory: FluidTrajectory, grid: VelocityGrid) -> np.ndarray:
    return lift_fluid(trajectory.triples(), grid)


class HydroLimitSweep:
    """
    Shared pieces of one sweep: data, limiting semigroup, NSF solution and Psi[g, g].

    ``regime`` is max(eps) * max(nu1, nu2); the discrepancy reaches its linear
    rate only once it is small.
    """

    def __init__(self, config: SweepConfig, model: KineticModel, lattice: FourierLattice, f0_fields: Optional[np.ndarray] = None):
        self.config = config
        self.lattice = lattice
        self.base_model = model
        self.model = model.with_flags(nonlinear=False, transport=False) if config.sanity else model
        self.semigroup = LimitingSemigroup(model.L, model.grid)
        self.times = config.dt * np.arange(config.steps + 1)

        unit = build_g0(*fluid_data(config, lattice), model.grid, lattice, config.well_prepared)
        unit_norm = float(np.sum(mode_norms(unit.fields, model)))
        scale = config.amplitude if config.amplitude is not None else 0.5 * config.eta2 / unit_norm
        self.g0 = build_g0(*fluid_data(config, lattice, scale), model.grid, lattice, config.well_prepared)
        self.data_norm = float(np.sum(mode_norms(self.g0.fields, model)))
        if self.data_norm > config.eta2:
            raise SmallnessError(self.data_norm, config.eta2)
        self.f0_fields = self.g0.fields if f0_fields is None else np.asarray(f0_fields, dtype=complex)

        if config.sanity:
            self.fluid = None
            self.regime = 0.0
            self.g_fields = np.broadcast_to(self.g0.fields, (len(self.times),) + self.g0.fields.shape).copy()
            self.limit_linear = self.g_fields.copy()
            self.psi_gg_limit = np.zeros_like(self.g_fields)
            self.gamma_gg = np.zeros_like(self.g_fields)
        else:
            self.nu1, self.nu2 = self._viscosities()
            self.regime = max(config.eps_list) * max(self.nu1, self.nu2)
            if self.regime > REGIME_LIMIT:
                logger.warning(
                    "eps * nu reaches %.3g (limit %.3g): the sweep is pre-asymptotic; raise kernel.b_amplitude or lower eps",
                    self.regime,
                    REGIME_LIMIT,
                )
            self.fluid = self._solve_fluid()
            self.g_fields = lift_trajectory(self.fluid, model.grid)
            self.limit_linear = self.semigroup.trajectory(self.g0.fields, lattice, self.times)
            self.gamma_gg = gamma_hat(self.g_fields, self.g_fields, lattice, self.model)
            self.psi_gg_limit = self.semigroup.psi(self.gamma_gg, config.dt, lattice)

    def _viscosities(self) -> Tuple[float, float]:
        if self.config.nu1 is not None and self.config.nu2 is not None:
            return self.config.nu1, self.config.nu2
        nu1, nu2 = axis_viscosities(self.model.L, self.model.grid, self.lattice.axis, self.semigroup.solver)
        return self.config.nu1 or nu1, self.config.nu2 or nu2

    def _solve_fluid(self) -> FluidTrajectory:
        prepared = self.semigroup.apply(self.g0.fields, self.lattice, 0.0)
        moments = macro_basis(self.model.grid).moment_vector(prepared)
        rho0, u0, theta0 = moments[:, 0], moments[:, 1:4], moments[:, 4]
        rho0 = -theta0
        rho0[self.lattice.zero_index] = 0.0
        c = self.config
        return nsf_picard(u0, theta0, c.T, c.dt, self.nu1, self.nu2, self.lattice, tol=1e-14, rho0=rho0)

    def run_point(self, eps: float) -> Dict[str, float]:
        started = time.perf_counter()
        c = self.config
        model = self.model
        cache = PropagatorCache(model, self.lattice, eps)
        f0 = KineticState(eps, 0.0, self.lattice, self.f0_fields.copy())
        f = evolve(f0, c.T, c.dt, c.scheme, model, cache).fields
        difference = f - self.g_fields

        t1 = linear_trajectory(self.f0_fields - self.g0.fields, c.steps, c.dt, cache).fields
        t2 = linear_trajectory(self.g0.fields, c.steps, c.dt, cache).fields - self.limit_linear
        if c.sanity:
            t3 = np.zeros_like(f)
            t4 = np.zeros_like(f)
        else:
            psi_ff = psi_eps(f, f, eps, cache, c.dt)
            psi_gg = duhamel_source(self.gamma_gg, eps, cache, c.dt).fields / eps
            t3 = psi_ff - psi_gg
            t4 = psi_gg - self.psi_gg_limit
        row = {
            "eps": eps,
            "discrepancy": trajectory_norm(difference, model),
            "T1": trajectory_norm(t1, model),
            "T2": trajectory_norm(t2, model),
            "T3": trajectory_norm(t3, model),
            "T4": trajectory_norm(t4, model),
            "closure": trajectory_norm(difference - (t1 + t2 + t3 + t4), model),
            "runtime_s": time.perf_counter() - started,
        }
        logger.info("sweep point eps=%g discrepancy=%.4e (%.1fs)", eps, row["discrepancy"], row["runtime_s"])
        return row


def run_sweep(
    config: SweepConfig,
    model: KineticModel,
    lattice: FourierLattice,
    threads: int = 1,
    f0_fields: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """
    Run every sweep point and return the table
    (eps, discrepancy, T1, T2, T3, T4, closure, runtime_s) in eps order.
    """
    sweep = HydroLimitSweep(config, model, lattice, f0_fields)

    def point(eps: float) -> Dict[str, float]:
        try:
            return sweep.run_point(eps)
        except BoltzmannNSFError:
            logger.error("sweep point eps=%g failed", eps)
            raise

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(point, config.eps_list))
    table = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    table.attrs["regime"] = sweep.regime
    if not config.well_prepared:
        logger.info("ill-prepared data: the acoustic part is not expected to converge in L^inf_t")
    return table


def fit_rate(table: pd.DataFrame) -> Tuple[float, float]:
    """Slope and r^2 of log(discrepancy) against log(eps)."""
    if len(table) < 3:
        raise RateFitError(f"need at least 3 sweep points, got {len(table)}")
    eps = np.asarray(table["eps"], dtype=float)
    disc = np.asarray(table["discrepancy"], dtype=float)
    if np.any(disc <= 0):
        raise RateFitError("discrepancies must be positive for a log-log fit")
    x, y = np.log(eps), np.log(disc)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r_squared = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
    return float(slope), float(r_squared)


def is_strictly_decreasing(table: pd.DataFrame) -> bool:
    values = np.asarray(table["discrepancy"], dtype=float)
    return bool(np.all(np.diff(values) < 0))


def rate_accepted(delta_fit: float, r_squared: float, delta_target: float = 1.0) -> bool:
    """True when the fitted rate lies in the window around delta_target with r^2 >= R2_MIN."""
    low, high = delta_target + RATE_WINDOW[0], delta_target + RATE_WINDOW[1]
    return low <= delta_fit <= high and r_squared >= R2_MIN
