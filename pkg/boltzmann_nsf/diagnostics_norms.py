"""
Mixed Fourier-based norms of mode trajectories and the measurement suite for
the nonlinear estimates.

Time norms are taken over the sampled window [0, T]; the xi aggregation is a
plain l^p sum over the finite lattice in fixed mode order.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .kinetic_solver import gamma_hat
from .macro_projection import macro_basis
from .velocity_space import DualNormOperator, VelocityGrid

logger = logging.getLogger(__name__)

TimeWeight = Literal["none", "exp", "poly"]


def xi_aggregate(values: np.ndarray, p: float = 1.0, cell_volume: Optional[float] = None) -> float:
    """l^p norm over the last axis; ``cell_volume`` turns the sum into a Riemann sum (experimental)."""
    values = np.abs(np.asarray(values, dtype=float))
    if np.isinf(p):
        return float(np.max(values)) if values.size else 0.0
    scale = 1.0 if cell_volume is None else cell_volume
    return float((scale * np.sum(values ** p, axis=-1)) ** (1.0 / p))


def time_sup(values: np.ndarray) -> np.ndarray:
    return np.max(np.abs(values), axis=0)


def time_l2(values: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoidal sqrt(int |values|^2 dt) along the first axis."""
    sq = np.abs(values) ** 2
    if sq.shape[0] < 2:
        return np.zeros(sq.shape[1:])
    return np.sqrt(dt * (np.sum(sq, axis=0) - 0.5 * (sq[0] + sq[-1])))


def l2_norms(fields: np.ndarray, grid: VelocityGrid) -> np.ndarray:
    return np.sqrt(grid.weight * np.sum(np.abs(fields) ** 2, axis=-1))


def hs_star_norms(fields: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """sqrt(Re f^H G f) along the last axis."""
    fields = np.asarray(fields)
    quad = np.real(np.einsum("...i,ij,...j->...", np.conj(fields), gram, fields))
    return np.sqrt(np.maximum(quad, 0.0))


def hs_double_star_norm(fhat: np.ndarray, xi: Sequence[float], gram: np.ndarray, grid: VelocityGrid) -> float:
    """sqrt(||P_perp f||^2_{H^{s,*}} + |xi|^2 / <xi>^2 ||P f||^2_{L2})."""
    basis = macro_basis(grid)
    fhat = np.asarray(fhat)
    micro = basis.complement(fhat)
    macro = fhat - micro
    xi_sq = float(np.dot(xi, xi))
    a_sq = xi_sq / (1.0 + xi_sq)
    return float(np.sqrt(hs_star_norms(micro, gram) ** 2 + a_sq * l2_norms(macro, grid) ** 2))


@dataclass
class NormRecorder:
    """
    Running per-mode norms of a stream of kinetic states.

    ``sup_l2`` is the running sup_t of w(t)||f(t, xi)||_{L2_v}; the integrals
    accumulate w(t)^2 ||.||^2 by the trapezoid rule. ``weight`` is "exp"
    (w = e^{rate t}) or "poly" (w = (1 + t)^rate).
    """

    grid: VelocityGrid
    gram: np.ndarray = field(repr=False)
    mode_count: int
    weight: TimeWeight = "none"
    rate: float = 0.0
    p: float = 1.0
    time: float = 0.0
    samples: int = 0
    sup_l2: np.ndarray = field(init=False, repr=False)
    int_l2_sq: np.ndarray = field(init=False, repr=False)
    int_micro_hs_sq: np.ndarray = field(init=False, repr=False)
    int_macro_l2_sq: np.ndarray = field(init=False, repr=False)
    _previous: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(init=False, default=None, repr=False)

    def __post_init__(self):
        if self.weight not in ("none", "exp", "poly"):
            raise ValueError(f"unknown time weight {self.weight!r}")
        K = self.mode_count
        self.sup_l2 = np.zeros(K)
        self.int_l2_sq = np.zeros(K)
        self.int_micro_hs_sq = np.zeros(K)
        self.int_macro_l2_sq = np.zeros(K)

    def time_weight(self, t: float) -> float:
        if self.weight == "exp":
            return float(np.exp(self.rate * t))
        if self.weight == "poly":
            return float((1.0 + t) ** self.rate)
        return 1.0

    def record(self, state, dt: float) -> "NormRecorder":
        """Append one state; the first call fixes the start time, later calls advance by dt."""
        if self.samples:
            if dt <= 0:
                raise ValueError("dt must be positive")
            self.time += dt
        else:
            self.time = float(state.time)
        basis = macro_basis(self.grid)
        micro = basis.complement(state.fields)
        scale = self.time_weight(self.time)
        current = (
            (scale * l2_norms(state.fields, self.grid)) ** 2,
            (scale * hs_star_norms(micro, self.gram)) ** 2,
            (scale * l2_norms(state.fields - micro, self.grid)) ** 2,
        )
        self.sup_l2 = np.maximum(self.sup_l2, np.sqrt(current[0]))
        if self._previous is not None:
            self.int_l2_sq += 0.5 * dt * (self._previous[0] + current[0])
            self.int_micro_hs_sq += 0.5 * dt * (self._previous[1] + current[1])
            self.int_macro_l2_sq += 0.5 * dt * (self._previous[2] + current[2])
        self._previous = current
        self.samples += 1
        return self

    def linf_l2(self) -> float:
        return xi_aggregate(self.sup_l2, self.p)

    def l2_l2(self) -> float:
        return xi_aggregate(np.sqrt(self.int_l2_sq), self.p)

    def l2_micro_hs(self) -> float:
        return xi_aggregate(np.sqrt(self.int_micro_hs_sq), self.p)

    def l2_macro_l2(self) -> float:
        return xi_aggregate(np.sqrt(self.int_macro_l2_sq), self.p)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "mode": np.arange(self.mode_count),
                "sup_l2": self.sup_l2,
                "int_l2_sq": self.int_l2_sq,
                "int_micro_hs_sq": self.int_micro_hs_sq,
                "int_macro_l2_sq": self.int_macro_l2_sq,
            }
        )


def energy_functional(recorder: NormRecorder, eps: float) -> float:
    """||f||_{L1 Linf L2} + eps^-1 ||P_perp f||_{L1 L2 H^{s,*}} + ||P f||_{L1 L2 L2}."""
    return recorder.linf_l2() + recorder.l2_micro_hs() / eps + recorder.l2_macro_l2()


def fit_decay_rate(times: np.ndarray, norms: np.ndarray, skip: float = 0.0) -> float:
    """Rate lambda of a least-squares fit norms ~ C exp(-lambda t) on t >= skip."""
    times = np.asarray(times, dtype=float)
    norms = np.asarray(norms, dtype=float)
    keep = (times >= skip) & (norms > 0)
    if np.count_nonzero(keep) < 2:
        raise ValueError("need at least two positive samples to fit a decay rate")
    slope, _ = np.polyfit(times[keep], np.log(norms[keep]), 1)
    return float(-slope)


@dataclass
class TrilinearReport:
    """Worst ratios of the collision estimates over the samples; NaN when every sample was skipped."""

    base: float
    alternatives: Dict[str, float]
    skipped: int = 0

    @property
    def finite(self) -> bool:
        values = [self.base, *self.alternatives.values()]
        return all(np.isfinite(v) for v in values if not np.isnan(v))


ALTERNATIVES = ("f_pinf_g_1l2", "f_pl2_g_1inf", "f_1inf_g_pl2", "f_1l2_g_pinf")


def base_trilinear_ratios(
    triples: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    model,
) -> np.ndarray:
    """|<Gamma(f, g), h>| / (||f||_{L2} ||g||_{H^{s,*}} ||h||_{H^{s,*}}) for each nonzero triple."""
    grid, gram = model.grid, model.gram
    ratios = []
    for f, g, h in triples:
        den = l2_norms(f, grid) * hs_star_norms(g, gram) * hs_star_norms(h, gram)
        if den == 0:
            continue
        ratios.append(abs(grid.weight * np.vdot(h, model.gamma(f, g))) / den)
    return np.array(ratios)


def trilinear_constant_report(
    samples: Sequence[Tuple[np.ndarray, np.ndarray]],
    model,
    lattice,
    dt: float,
    triples: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]] = (),
    p: float = 1.0,
    dual: Optional[DualNormOperator] = None,
) -> TrilinearReport:
    """
    Worst-case ratio of ||Gamma^(f, g)||_{L^p_xi L2_t (H^{s,*})'} to each of the
    four products of mixed norms of f and g, over trajectory pairs of shape
    (T+1, K, N), together with the base trilinear ratio over ``triples``.
    """
    dual = dual or DualNormOperator(model.gram, model.grid)
    worst = {name: np.nan for name in ALTERNATIVES}
    skipped = 0
    for f, g in samples:
        f, g = np.asarray(f), np.asarray(g)
        if not np.any(f) or not np.any(g):
            skipped += 1
            continue
        lhs = xi_aggregate(time_l2(dual.batch(gamma_hat(f, g, lattice, model)), dt), p)
        fl2 = l2_norms(f, model.grid)
        gh = hs_star_norms(g, model.gram)
        products = {
            "f_pinf_g_1l2": xi_aggregate(time_sup(fl2), p) * xi_aggregate(time_l2(gh, dt), 1),
            "f_pl2_g_1inf": xi_aggregate(time_l2(fl2, dt), p) * xi_aggregate(time_sup(gh), 1),
            "f_1inf_g_pl2": xi_aggregate(time_sup(fl2), 1) * xi_aggregate(time_l2(gh, dt), p),
            "f_1l2_g_pinf": xi_aggregate(time_l2(fl2, dt), 1) * xi_aggregate(time_sup(gh), p),
        }
        for name, value in products.items():
            if value > 0:
                worst[name] = np.nanmax([worst[name], lhs / value])
    base = base_trilinear_ratios(triples, model)
    report = TrilinearReport(float(base.max()) if base.size else float("nan"), worst, skipped)
    logger.info("trilinear ratios: base=%.4g %s", report.base, worst)
    return report


def norm_frame(recorder: NormRecorder, eps: float) -> pd.DataFrame:
    """One-row norm summary of a recorded run."""
    return pd.DataFrame(
        [
            {
                "eps": eps,
                "T": recorder.time,
                "linf_l2": recorder.linf_l2(),
                "l2_micro_hs": recorder.l2_micro_hs(),
                "l2_macro_l2": recorder.l2_macro_l2(),
                "energy": energy_functional(recorder, eps),
                "weight": recorder.weight,
                "rate": recorder.rate,
            }
        ]
    )
