import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from .cache import OperatorCache
from .collision_core import (
    CONSERVATION_TOLERANCE,
    ENERGY_DEFECT_TOLERANCE,
    coercivity_report,
    collision_q,
    moment_defects,
    reference_perturbation,
)
from .config import RunConfig, load_config
from .diagnostics_norms import NormRecorder, norm_frame
from .exceptions import BoltzmannNSFError, CacheVersionError, ConfigError
from .hydro_limit_harness import (
    R2_MIN,
    SweepConfig,
    build_g0,
    fit_rate,
    fluid_data,
    is_strictly_decreasing,
    rate_accepted,
    run_sweep,
)
from .hypocoercive_metric import HypoParams, dissipativity_check, search_hypo_params
from .kinetic_solver import KineticState, PropagatorCache, evolve, trajectory_frame
from .lattice import FourierLattice
from .model import KineticModel
from .nsf_solver import nsf_picard, norm_summary
from .nsf_solver import trajectory_frame as fluid_frame
from .spectral_branches import (
    BRANCH_MATCH_TOLERANCE,
    axis_viscosities,
    branch_frame,
    eigen_branches,
    read_summary,
    spectrum_summary,
    viscosity_coeffs,
    write_summary,
)

logger = logging.getLogger(__name__)

COMMANDS = (
    "check-collision",
    "check-hypo",
    "spectrum",
    "viscosity",
    "simulate-kinetic",
    "simulate-nsf",
    "sweep-epsilon",
    "report",
)
INVARIANT_TOLERANCE = 1e-9


class RunContext:
    """Configuration plus the lazily built operators shared by the subcommands."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.output = Path(config.output)
        self.output.mkdir(parents=True, exist_ok=True)
        self.cache = OperatorCache(config.cache)
        self.rng = np.random.default_rng(config.seed)
        self._model: Optional[KineticModel] = None

    @property
    def model(self) -> KineticModel:
        if self._model is None:
            c = self.config
            self._model = KineticModel.build(
                c.build_grid(), c.build_kernel(), self.cache, c.kernel.cubic_symmetrize, nonlinear=c.solver.nonlinear
            )
        return self._model

    @property
    def lattice(self) -> FourierLattice:
        lat = self.config.lattice
        return FourierLattice(lat.max_mode, lat.reduced_axis, lat.axis)

    def write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.output / name
        frame.to_csv(path, index=False)
        print(f"Saving {path}")
        return path


def print_config_summary(config: RunConfig) -> None:
    print(f"   Seed: {config.seed}")
    print(f"   Grid: n={config.grid.n}, R={config.grid.R}")
    k = config.kernel
    print(f"   Kernel: gamma={k.gamma}, s={k.s}, theta_min={k.theta_min}, sigma nodes={k.theta_nodes}x{k.azimuth_nodes}")
    print(f"   Lattice: max_mode={config.lattice.max_mode}, reduced_axis={config.lattice.reduced_axis}")
    print(f"   Output: {config.output}")
    print(f"   Cache: {config.cache or 'disabled'}")


def check_collision(ctx: RunContext) -> bool:
    """Conservation of Q, structure of L and the coercivity fit."""
    model = ctx.model
    grid = model.grid
    perturbation = 0.1 * ctx.rng.standard_normal(grid.node_count)
    F = grid.maxwellian.mu + grid.sqrt_mu * perturbation
    Q = collision_q(F, F, grid, model.kernel)
    invariants = np.column_stack([np.ones(grid.node_count), grid.nodes, grid.maxwellian.speed_sq])
    l1 = grid.weight * np.sum(np.abs(Q))
    conservation = float(np.max(np.abs(grid.weight * Q @ invariants)) / l1) if l1 > 0 else 0.0
    raw = moment_defects(reference_perturbation(grid), grid, model.kernel)
    coercivity = coercivity_report(model.L, model.gram, samples=100, rng=ctx.rng)
    rows = {
        "conservation_defect": conservation,
        "raw_mass_defect": raw["mass"],
        "raw_momentum_defect": raw["momentum"],
        "raw_energy_defect": raw["energy"],
        "asymmetry": model.L.asymmetry,
        "kernel_dimension": model.L.kernel_dimension,
        "spectral_gap": model.L.spectral_gap_estimate,
        "lambda_fit": coercivity.lambda_fit,
    }
    ctx.write_csv(pd.DataFrame([{"quantity": k, "value": v} for k, v in rows.items()]), "collision_check.csv")
    for key, value in rows.items():
        print(f"   {key}: {value}")
    structural = max(raw["mass"], raw["momentum"]) <= CONSERVATION_TOLERANCE
    if raw["energy"] > ENERGY_DEFECT_TOLERANCE:
        logger.error("raw energy defect %.3e above %.2f; refine the velocity grid", raw["energy"], ENERGY_DEFECT_TOLERANCE)
    return (
        conservation <= 1e-6
        and structural
        and raw["energy"] <= ENERGY_DEFECT_TOLERANCE
        and rows["kernel_dimension"] == 5
        and coercivity.lambda_fit > 0
    )


def check_hypo(ctx: RunContext) -> bool:
    c = ctx.config
    model = ctx.model
    xi_list = list(ctx.lattice.xi)
    if c.hypo.mode == "search":
        result = search_hypo_params(
            model.L, model.grid, model.gram, xi_list, c.hypo.eps_list, c.hypo.samples, ctx.rng, whole_space=c.hypo.whole_space
        )
        report = result.report
        ctx.write_csv(result.table, "hypo_search.csv")
    else:
        params = HypoParams(c.hypo.delta1, c.hypo.delta2, c.hypo.delta3)
        report = dissipativity_check(
            model.L, model.grid, model.gram, xi_list, c.hypo.eps_list, params, c.hypo.samples, ctx.rng, c.hypo.whole_space
        )
    ctx.write_csv(report.to_frame(), "hypo_check.csv")
    print(f"   Parameters: {report.params}")
    print(f"   lambda0_fit: {report.lambda0}")
    print(f"   Equivalence constant: {report.c_equiv}")
    return report.passed


def spectrum(ctx: RunContext) -> bool:
    c = ctx.config
    model = ctx.model
    branches = eigen_branches(
        model.L,
        model.grid,
        c.spectrum.direction,
        c.spectrum.radii,
        overlap_threshold=c.spectrum.overlap_threshold,
        threads=c.threads,
    )
    ctx.write_csv(branch_frame(branches), "spectrum.csv")
    summary = spectrum_summary(branches)
    path = write_summary(ctx.output / "spectrum_summary.txt", summary)
    print(f"Saving {path}")
    for b in branches:
        print(f"   Branch {b.branch_id}: alpha={b.alpha_fit:.6g}, beta={b.beta_fit:.6g}, multiplicity={b.multiplicity}")
    real_parts = [s.eigenvalue.real for b in branches for s in b.samples]
    return all(b.beta_fit > 0 for b in branches) and max(real_parts) <= 1e-10


def viscosity(ctx: RunContext) -> bool:
    c = ctx.config
    pair = viscosity_coeffs(
        ctx.model.L, ctx.model.grid, c.spectrum.viscosity_rhs_tol, axis=c.lattice.axis, radii=c.spectrum.viscosity_radii
    )
    summary = {
        "nu1": pair.nu1,
        "nu2": pair.nu2,
        "nu1_branch": pair.nu1_branch,
        "nu2_branch": pair.nu2_branch,
        "nu1_isotropic": pair.nu1_isotropic,
        "branch_mismatch": pair.branch_mismatch,
        "rhs_defect": pair.rhs_defect,
    }
    path = write_summary(ctx.output / "viscosity_summary.txt", summary)
    print(f"Saving {path}")
    print(f"   nu1: {pair.nu1} (branch {pair.nu1_branch})")
    print(f"   nu2: {pair.nu2} (branch {pair.nu2_branch})")
    if pair.branch_mismatch > BRANCH_MATCH_TOLERANCE:
        logger.error("viscosities differ from the branch coefficients by %.3g", pair.branch_mismatch)
        return False
    return pair.nu1 > 0 and pair.nu2 > 0


def simulate_kinetic(ctx: RunContext) -> bool:
    c = ctx.config
    model = ctx.model
    lattice = ctx.lattice
    sweep = SweepConfig.from_run_config(c)
    g0 = build_g0(*fluid_data(sweep, lattice, c.solver.amplitude), model.grid, lattice, sweep.well_prepared, c.solver.eps)
    recorder = NormRecorder(model.grid, model.gram, lattice.size)
    cache = PropagatorCache(model, lattice, c.solver.eps)
    trajectory = evolve(g0, c.solver.T, c.solver.dt, c.solver.scheme, model, cache, recorder, progress=True)
    frame = trajectory_frame(trajectory, model)
    ctx.write_csv(frame, "kinetic_trajectory.csv")
    ctx.write_csv(norm_frame(recorder, c.solver.eps), "kinetic_norms.csv")
    drift = float(frame["moment_drift"].max())
    print(f"   Final norm: {frame['norm_L1xi_L2v'].iloc[-1]}")
    print(f"   Moment drift: {drift}")
    return drift <= 1e-6


def _viscosities(ctx: RunContext):
    s = ctx.config.sweep
    if s.nu1 is not None and s.nu2 is not None:
        return s.nu1, s.nu2
    nu1, nu2 = axis_viscosities(ctx.model.L, ctx.model.grid, ctx.config.lattice.axis)
    return s.nu1 or nu1, s.nu2 or nu2


def simulate_nsf(ctx: RunContext) -> bool:
    c = ctx.config
    lattice = ctx.lattice
    sweep = SweepConfig.from_run_config(c)
    rho0, u0, theta0 = fluid_data(sweep, lattice, c.solver.amplitude)
    nu1, nu2 = _viscosities(ctx)
    trajectory = nsf_picard(
        u0, theta0, c.solver.T, c.solver.dt, nu1, nu2, lattice, c.solver.picard_tol, c.solver.picard_max_iter, c.solver.eta1, rho0
    )
    ctx.write_csv(fluid_frame(trajectory), "nsf_trajectory.csv")
    ctx.write_csv(norm_summary(trajectory), "nsf_norms.csv")
    defects = trajectory.constraint_defects()
    for name, value in defects.items():
        print(f"   {name}: {value}")
    return all(value <= INVARIANT_TOLERANCE for value in defects.values())


def sweep_epsilon(ctx: RunContext) -> bool:
    sweep = SweepConfig.from_run_config(ctx.config)
    table = run_sweep(sweep, ctx.model, ctx.lattice, threads=ctx.config.threads)
    ctx.write_csv(table, "sweep.csv")
    monotone = is_strictly_decreasing(table)
    summary: Dict[str, object] = {"monotone": monotone, "regime": table.attrs.get("regime", 0.0)}
    accepted = monotone
    if len(table) >= 3:
        delta_fit, r_squared = fit_rate(table)
        accepted = monotone and rate_accepted(delta_fit, r_squared, sweep.delta_target)
        summary.update(delta_fit=delta_fit, r_squared=r_squared, delta_target=sweep.delta_target)
        print(f"   delta_fit: {delta_fit}")
        print(f"   r_squared: {r_squared}")
    else:
        logger.warning("fewer than 3 sweep points: only monotonicity is checked")
    summary["rate_accepted"] = accepted
    path = write_summary(ctx.output / "sweep_summary.txt", summary)
    print(f"Saving {path}")
    if not sweep.well_prepared:
        return True
    if not accepted:
        logger.error("well-prepared sweep missed the rate window or r^2 >= %g", R2_MIN)
    return accepted


def report(ctx: RunContext) -> bool:
    """Collect every CSV and summary file of the output directory into report.csv."""
    rows = []
    for path in sorted(ctx.output.glob("*_summary.txt")):
        for key, value in read_summary(path).items():
            rows.append({"source": path.name, "key": key, "value": value})
    for path in sorted(ctx.output.glob("*.csv")):
        if path.name == "report.csv":
            continue
        frame = pd.read_csv(path)
        rows.append({"source": path.name, "key": "rows", "value": len(frame)})
        if frame.empty:
            continue
        last = frame.iloc[-1]
        for column in frame.select_dtypes(include="number").columns:
            rows.append({"source": path.name, "key": f"{column}_last", "value": last[column]})
    ctx.write_csv(pd.DataFrame(rows, columns=["source", "key", "value"]), "report.csv")
    print(f"   Artifacts: {len({r['source'] for r in rows})}")
    return True


HANDLERS: Dict[str, Callable[[RunContext], bool]] = {
    "check-collision": check_collision,
    "check-hypo": check_hypo,
    "spectrum": spectrum,
    "viscosity": viscosity,
    "simulate-kinetic": simulate_kinetic,
    "simulate-nsf": simulate_nsf,
    "sweep-epsilon": sweep_epsilon,
    "report": report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Path to the run configuration YAML file.", default=None)
    common.add_argument("--output", help="Directory for CSV artifacts.", default=None)
    common.add_argument("--cache", help="Directory of the operator cache.", default=None)
    common.add_argument("--threads", help="Worker threads for sweeps and eigen solves.", type=int, default=None)
    common.add_argument("--seed", help="Seed of the random samplers.", type=int, default=None)
    common.add_argument("--verbose", help="Enable debug logging.", action="store_true")

    parser = argparse.ArgumentParser(description="Boltzmann to Navier-Stokes-Fourier numerical lab.")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")
    subparsers.add_parser("check-collision", parents=[common], help="Check conservation and structure of the collision operator")
    subparsers.add_parser("check-hypo", parents=[common], help="Check the hypocoercive dissipation inequality")
    subparsers.add_parser("spectrum", parents=[common], help="Track the fluid eigenvalue branches near xi = 0")
    subparsers.add_parser("viscosity", parents=[common], help="Compute the viscosity coefficients nu1, nu2")
    subparsers.add_parser("simulate-kinetic", parents=[common], help="Evolve the rescaled Boltzmann perturbation")
    subparsers.add_parser("simulate-nsf", parents=[common], help="Solve the Navier-Stokes-Fourier system")
    subparsers.add_parser("sweep-epsilon", parents=[common], help="Run the hydrodynamic-limit sweep over eps")
    subparsers.add_parser("report", parents=[common], help="Aggregate the artifacts of the output directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, output=args.output, cache=args.cache, threads=args.threads, seed=args.seed)
    except ConfigError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return 2

    print(f"Running {args.command}")
    print_config_summary(config)
    try:
        passed = HANDLERS[args.command](RunContext(config))
    except CacheVersionError as exc:
        print(f"Cache error: {exc}", file=sys.stderr)
        return 2
    except BoltzmannNSFError as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command} {'passed' if passed else 'FAILED'}.")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
