"""
Per-mode evolution of the rescaled perturbation equation

    d/dt f(xi) = Lambda^eps(xi) f(xi) + (1/eps) Gamma^(f, f)(xi)

with exact matrix-exponential propagators, exponential-quadrature Duhamel
integrals, the truncated lattice convolution of Gamma and the Picard iteration
of the mild formulation.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg
from tqdm import tqdm

from .exceptions import MomentConstraintError, NonFiniteError, PicardConvergenceError, SmallnessError, StepRejectedError
from .lattice import FourierLattice
from .model import KineticModel
from .time_schemes import BaseTimeScheme, get_time_scheme

logger = logging.getLogger(__name__)

BLOW_UP_FACTOR = 10.0
MOMENT_TOLERANCE = 1e-6


@dataclass
class KineticState:
    """Mode fields f(xi, .) on a Fourier lattice, shape (K, N), at one time."""

    eps: float
    time: float
    lattice: FourierLattice
    fields: np.ndarray

    @classmethod
    def zeros(cls, eps: float, lattice: FourierLattice, node_count: int) -> "KineticState":
        return cls(eps, 0.0, lattice, np.zeros((lattice.size, node_count), dtype=complex))

    def field(self, xi: Sequence[int]) -> np.ndarray:
        return self.fields[self.lattice.index[tuple(int(c) for c in xi)]]

    def copy(self) -> "KineticState":
        return replace(self, fields=self.fields.copy())

    def norm_l1_l2(self, model: KineticModel) -> float:
        return float(np.sum(mode_norms(self.fields, model)))

    def zero_mode_moments(self, model: KineticModel) -> np.ndarray:
        return model.basis.moment_vector(self.fields[self.lattice.zero_index])

    def reality_defect(self) -> float:
        return self.lattice.reality_defect(self.fields)


def mode_norms(fields: np.ndarray, model: KineticModel) -> np.ndarray:
    """L2_v norm of every mode, shape fields.shape[:-1]."""
    return np.sqrt(model.grid.weight * np.sum(np.abs(fields) ** 2, axis=-1))


@dataclass
class Trajectory:
    """Uniformly sampled solution: times (T+1,), fields (T+1, K, N)."""

    eps: float
    lattice: FourierLattice
    times: np.ndarray
    fields: np.ndarray

    def state(self, n: int) -> KineticState:
        return KineticState(self.eps, float(self.times[n]), self.lattice, self.fields[n])

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def norm_l1_linf_l2(self, model: KineticModel) -> float:
        """sum_xi sup_t ||f(t, xi)||_{L2_v}."""
        return float(np.sum(np.max(mode_norms(self.fields, model), axis=0)))

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.eps, self.lattice, self.times, self.fields - other.fields)


class PropagatorCache:
    """
    exp(t Lambda^eps(xi)) and the phi-functions phi1, phi2 of dt Lambda for all
    lattice modes, computed once per step size. Fields at -xi reuse the complex
    conjugate of the matrices at xi.
    """

    def __init__(self, model: KineticModel, lattice: FourierLattice, eps: float):
        self.model = model
        self.lattice = lattice
        self.eps = eps
        self._exp: Dict[float, np.ndarray] = {}
        self._phi: Dict[float, Tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def _per_mode(self, builder: Callable[[np.ndarray], Tuple[np.ndarray, ...]]) -> List[np.ndarray]:
        K = self.lattice.size
        out: List[Optional[Tuple[np.ndarray, ...]]] = [None] * K
        for k in range(K):
            partner = self.lattice.negation[k]
            if out[partner] is not None:
                out[k] = tuple(np.conj(m) for m in out[partner])
                continue
            out[k] = builder(self.model.lambda_matrix(self.lattice.xi[k], self.eps))
        stacked = [np.stack([item[i] for item in out]) for i in range(len(out[0]))]
        for array in stacked:
            if not np.all(np.isfinite(array)):
                raise NonFiniteError("non-finite propagator; check eps and the step size")
        return stacked

    def exponentials(self, t: float) -> np.ndarray:
        key = round(float(t), 14)
        if key not in self._exp:
            self._exp[key] = self._per_mode(lambda lam: (linalg.expm(t * lam),))[0]
        return self._exp[key]

    def phi_functions(self, dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(exp(A), phi1(A), phi2(A)) for A = dt Lambda, from one augmented exponential."""
        key = round(float(dt), 14)
        if key not in self._phi:
            N = self.model.node_count

            def build(lam: np.ndarray):
                aug = np.zeros((3 * N, 3 * N), dtype=complex)
                aug[:N, :N] = dt * lam
                aug[:N, N:2 * N] = np.eye(N)
                aug[N:2 * N, 2 * N:] = np.eye(N)
                big = linalg.expm(aug)
                return big[:N, :N], big[:N, N:2 * N], big[:N, 2 * N:]

            self._phi[key] = tuple(self._per_mode(build))
            self._exp.setdefault(key, self._phi[key][0])
        return self._phi[key]

    def mode_exponential(self, xi: Sequence[float], t: float) -> np.ndarray:
        k = self.lattice.index.get(tuple(int(round(c)) for c in xi))
        if k is not None and np.allclose(self.lattice.xi[k], xi):
            return self.exponentials(t)[k]
        return linalg.expm(t * self.model.lambda_matrix(np.asarray(xi, float), self.eps))


def semigroup_apply(fhat: np.ndarray, xi: Sequence[float], eps: float, t: float, cache: PropagatorCache) -> np.ndarray:
    """U^eps(t, xi) f = exp(t Lambda^eps(xi)) f."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if eps != cache.eps:
        raise ValueError(f"propagator cache built for eps={cache.eps}, got {eps}")
    fhat = np.asarray(fhat, dtype=complex)
    if t == 0:
        return fhat.copy()
    return cache.mode_exponential(xi, t) @ fhat


def _drop_imaginary(values: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(values)) if values.size else 0.0
    if scale == 0 or np.max(np.abs(values.imag)) <= 1e-12 * scale:
        return np.ascontiguousarray(values.real)
    return values


def gamma_hat(
    f_fields: np.ndarray,
    g_fields: np.ndarray,
    lattice: FourierLattice,
    model: KineticModel,
    method: str = "pseudo-spectral",
) -> np.ndarray:
    """
    Truncated convolution Gamma^(f, g)(xi) = sum_eta Gamma(f(xi - eta), g(eta)).

    The pseudo-spectral path evaluates Gamma pointwise on 3M + 1 collocation
    points per active axis, which reproduces the truncated lattice sum
    exactly; ``method="direct"`` performs the sum.
    """
    K, N = f_fields.shape[-2:]
    if not model.nonlinear:
        return np.zeros(f_fields.shape, dtype=complex)
    if method == "direct":
        out = np.zeros((K, N), dtype=complex)
        modes = lattice.modes
        for k, xi in enumerate(modes):
            left, right = [], []
            for e, eta in enumerate(modes):
                partner = lattice.index.get(tuple(int(c) for c in xi - eta))
                if partner is not None:
                    left.append(partner)
                    right.append(e)
            if left:
                out[k] = model.gamma(f_fields[left], g_fields[right]).sum(axis=0)
        return out
    if method != "pseudo-spectral":
        raise ValueError(f"unknown convolution method {method!r}")
    lead = f_fields.shape[:-2]
    f_flat = np.moveaxis(f_fields.reshape((-1, K, N)), 1, 0)
    g_flat = np.moveaxis(g_fields.reshape((-1, K, N)), 1, 0)
    f_phys = _drop_imaginary(lattice.to_physical(f_flat)).reshape(-1, N)
    g_phys = _drop_imaginary(lattice.to_physical(g_flat)).reshape(-1, N)
    values = model.gamma(f_phys, g_phys)
    points = lattice.collocation_points ** lattice.dims
    spectral = lattice.from_physical(values.reshape(points, -1, N))
    return np.moveaxis(spectral, 0, 1).reshape(lead + (K, N))


def gamma_hat_convolution(state: KineticState, model: KineticModel, method: str = "pseudo-spectral") -> np.ndarray:
    """Gamma^(f, f) for every mode of the state."""
    return gamma_hat(state.fields, state.fields, state.lattice, model, method)


def _check_microscopic(source: np.ndarray, model: KineticModel, tol: float = MOMENT_TOLERANCE) -> None:
    scale = np.linalg.norm(source)
    if scale == 0:
        return
    defect = np.linalg.norm(model.basis.project(source)) / scale
    if defect > tol:
        raise MomentConstraintError("Duhamel source has macroscopic moments", float(defect))


def duhamel_source(
    source: np.ndarray,
    eps: float,
    cache: PropagatorCache,
    dt: float,
    times: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    g_S(t_n) = int_0^t_n U^eps(t_n - s) S(s) ds for S sampled on a uniform grid.

    S is interpolated linearly between samples and the integral of each piece
    is exact: g_{n+1} = E g_n + dt [(phi1 - phi2) S_n + phi2 S_{n+1}].
    Source shape (T+1, K, N).
    """
    source = np.asarray(source, dtype=complex)
    _check_microscopic(source, cache.model)
    expo, phi1, phi2 = cache.phi_functions(dt)
    lead = dt * (phi1 - phi2)
    trail = dt * phi2
    out = np.zeros_like(source)
    for n in range(source.shape[0] - 1):
        out[n + 1] = (
            BaseTimeScheme.apply_modewise(expo, out[n])
            + BaseTimeScheme.apply_modewise(lead, source[n])
            + BaseTimeScheme.apply_modewise(trail, source[n + 1])
        )
    if times is None:
        times = dt * np.arange(source.shape[0])
    return Trajectory(eps, cache.lattice, np.asarray(times, float), out)


def linear_trajectory(f0: np.ndarray, steps: int, dt: float, cache: PropagatorCache) -> Trajectory:
    """U^eps(t_n) f0 on the uniform grid t_n = n dt."""
    expo = cache.exponentials(dt)
    out = np.zeros((steps + 1,) + f0.shape, dtype=complex)
    out[0] = f0
    for n in range(steps):
        out[n + 1] = BaseTimeScheme.apply_modewise(expo, out[n])
    return Trajectory(cache.eps, cache.lattice, dt * np.arange(steps + 1), out)


def _nonlinearity(model: KineticModel, lattice: FourierLattice, method: str):
    def apply(fields: np.ndarray) -> np.ndarray:
        return gamma_hat(fields, fields, lattice, model, method)

    return apply


def step(
    state: KineticState,
    dt: float,
    scheme,
    model: KineticModel,
    cache: PropagatorCache,
    method: str = "pseudo-spectral",
) -> KineticState:
    """
    One step of the chosen integrator.

    Raises StepRejectedError when the collision increment (dt/eps)|N| exceeds
    ten times the state norm.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    scheme = get_time_scheme(scheme)
    base = _nonlinearity(model, state.lattice, method)
    size = float(np.linalg.norm(state.fields))

    def guarded(fields: np.ndarray) -> np.ndarray:
        forcing = base(fields)
        increment = dt / state.eps * float(np.linalg.norm(forcing))
        if size > 0 and increment > BLOW_UP_FACTOR * size:
            raise StepRejectedError(f"collision increment {increment:.3e} exceeds {BLOW_UP_FACTOR} x state norm {size:.3e}")
        return forcing

    fields = scheme.step(state.fields, state.eps, dt, cache, guarded)
    return KineticState(state.eps, state.time + dt, state.lattice, fields)


def evolve(
    state0: KineticState,
    T: float,
    dt: float,
    scheme,
    model: KineticModel,
    cache: Optional[PropagatorCache] = None,
    recorder=None,
    progress: bool = False,
    method: str = "pseudo-spectral",
) -> Trajectory:
    """Integrate from state0 to time T with a uniform step."""
    steps = int(round(T / dt))
    cache = cache or PropagatorCache(model, state0.lattice, state0.eps)
    fields = np.zeros((steps + 1,) + state0.fields.shape, dtype=complex)
    fields[0] = state0.fields
    state = state0
    if recorder is not None:
        recorder.record(state, dt)
    for n in tqdm(range(steps), desc=f"kinetic eps={state0.eps:g}", disable=not progress):
        state = step(state, dt, scheme, model, cache, method)
        fields[n + 1] = state.fields
        if recorder is not None:
            recorder.record(state, dt)
    times = state0.time + dt * np.arange(steps + 1)
    return Trajectory(state0.eps, state0.lattice, times, fields)


def _contraction_factors(residuals: List[float]) -> List[float]:
    return [b / a for a, b in zip(residuals, residuals[1:]) if a > 0]


@dataclass
class PicardResult:
    trajectory: Trajectory
    residuals: List[float]
    contraction_factors: List[float] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.residuals)


def picard_solve(
    f0: KineticState,
    T: float,
    dt: float,
    model: KineticModel,
    max_iter: int = 30,
    tol: float = 1e-10,
    eta0: float = np.inf,
    cache: Optional[PropagatorCache] = None,
) -> PicardResult:
    """
    Fixed-point iteration of f = U^eps(t) f0 + (1/eps) int_0^t U^eps(t - s) Gamma(f, f)(s) ds.

    Starts from the zero trajectory and stops when the L1_xi Linf_t L2_v
    distance between successive iterates drops below ``tol``.
    """
    data_norm = f0.norm_l1_l2(model)
    if data_norm > eta0:
        raise SmallnessError(data_norm, eta0)
    cache = cache or PropagatorCache(model, f0.lattice, f0.eps)
    steps = int(round(T / dt))
    linear = linear_trajectory(f0.fields, steps, dt, cache)
    current = Trajectory(f0.eps, f0.lattice, linear.times, np.zeros_like(linear.fields))
    residuals: List[float] = []
    for iteration in range(max_iter):
        source = gamma_hat(current.fields, current.fields, f0.lattice, model)
        nonlinear = duhamel_source(source, f0.eps, cache, dt, linear.times)
        following = Trajectory(f0.eps, f0.lattice, linear.times, linear.fields + nonlinear.fields / f0.eps)
        residuals.append((following - current).norm_l1_linf_l2(model))
        current = following
        logger.debug("picard iteration %d residual %.3e", iteration + 1, residuals[-1])
        if residuals[-1] < tol:
            return PicardResult(current, residuals, _contraction_factors(residuals))
    factors = _contraction_factors(residuals)
    logger.error("picard iteration stalled after %d steps; contraction factors %s", max_iter, factors)
    raise PicardConvergenceError(residuals, factors)


def trajectory_frame(trajectory: Trajectory, model: KineticModel) -> pd.DataFrame:
    """Per-time summary: (t, eps, norm_L1xi_L2v, micro_norm, macro_norm, moment_drift)."""
    basis = model.basis
    fields = trajectory.fields
    micro = basis.complement(fields)
    macro = fields - micro
    zero = trajectory.lattice.zero_index
    drift = np.max(np.abs(basis.moment_vector(fields[:, zero])), axis=-1)
    return pd.DataFrame(
        {
            "t": trajectory.times,
            "eps": trajectory.eps,
            "norm_L1xi_L2v": mode_norms(fields, model).sum(axis=1),
            "micro_norm": mode_norms(micro, model).sum(axis=1),
            "macro_norm": mode_norms(macro, model).sum(axis=1),
            "moment_drift": drift,
        }
    )
