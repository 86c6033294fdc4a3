"""
Run configuration: YAML file validated by pydantic, with environment overrides
loaded through python-dotenv.
"""

import logging
import os
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "BOLTZMANN_NSF_"
DEFAULT_CONFIG_PATH = "configs/config.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSection(_Section):
    n: int = 8
    R: float = 6.0
    dense_budget: int = 4096

    @field_validator("n")
    @classmethod
    def _even(cls, n: int) -> int:
        if n < 4 or n % 2:
            raise ValueError("grid.n must be an even integer >= 4")
        return n

    @field_validator("R")
    @classmethod
    def _positive(cls, R: float) -> float:
        if R <= 0:
            raise ValueError("grid.R must be positive")
        return R


class KernelSection(_Section):
    gamma: float = 0.0
    s: float = 0.25
    theta_min: float = 0.05
    b_amplitude: Optional[float] = None
    theta_nodes: int = 24
    azimuth_nodes: int = 8
    allow_soft: bool = False
    cubic_symmetrize: bool = True
    stencil_memory_mb: float = 512.0


class LatticeSection(_Section):
    max_mode: int = Field(4, ge=1)
    reduced_axis: bool = True
    axis: int = Field(0, ge=0, le=2)


class SolverSection(_Section):
    dt: float = Field(0.01, gt=0)
    T: float = Field(2.0, gt=0)
    scheme: Literal["exponential-euler", "strang-split"] = "exponential-euler"
    eta0: float = Field(0.05, gt=0)
    eta1: float = Field(0.05, gt=0)
    eta2: float = Field(0.02, gt=0)
    picard_max_iter: int = Field(30, ge=1)
    picard_tol: float = Field(1e-10, gt=0)
    eps: float = Field(1.0, gt=0, le=1)
    amplitude: float = Field(0.01, ge=0)
    nonlinear: bool = True


class HypoSection(_Section):
    mode: Literal["fixed", "search"] = "search"
    delta1: float = 1e-1
    delta2: float = 1e-2
    delta3: float = 1e-3
    eps_list: List[float] = Field(default_factory=lambda: [1.0, 0.5, 0.1])
    samples: int = Field(64, ge=1)
    whole_space: bool = False

    @model_validator(mode="after")
    def _ordering(self) -> "HypoSection":
        if not 0 < self.delta3 < self.delta2 < self.delta1 < 1:
            raise ValueError("hypo deltas must satisfy 0 < delta3 < delta2 < delta1 < 1")
        return self


class SweepSection(_Section):
    eps_list: List[float] = Field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    delta_target: float = Field(1.0, gt=0, le=1)
    T: float = Field(2.0, gt=0)
    dt: float = Field(0.01, gt=0)
    well_prepared: bool = True
    shear_amplitude: Optional[float] = None
    thermal_amplitude: float = 0.0
    acoustic_amplitude: float = 0.0
    nu1: Optional[float] = Field(None, gt=0)
    nu2: Optional[float] = Field(None, gt=0)

    @field_validator("eps_list")
    @classmethod
    def _decreasing(cls, eps_list: List[float]) -> List[float]:
        if not eps_list or any(e <= 0 or e > 1 for e in eps_list):
            raise ValueError("sweep.eps_list entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
            raise ValueError("sweep.eps_list must be strictly decreasing")
        return eps_list


class SpectrumSection(_Section):
    radii: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5])
    direction: List[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0])
    overlap_threshold: float = Field(0.5, gt=0, lt=1)
    viscosity_rhs_tol: float = Field(5e-2, gt=0)
    viscosity_radii: List[float] = Field(default_factory=lambda: [0.005, 0.01, 0.02], min_length=1)


class RunConfig(_Section):
    """Validated configuration of a run; unknown keys are rejected."""

    seed: int = 42
    grid: GridSection = Field(default_factory=GridSection)
    kernel: KernelSection = Field(default_factory=KernelSection)
    lattice: LatticeSection = Field(default_factory=LatticeSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    hypo: HypoSection = Field(default_factory=HypoSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    spectrum: SpectrumSection = Field(default_factory=SpectrumSection)
    output: str = "output"
    cache: Optional[str] = "cache"
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _hard_potentials(self) -> "RunConfig":
        k = self.kernel
        if k.gamma + 2 * k.s < 0 and not k.allow_soft:
            raise ValueError("kernel.gamma + 2 kernel.s must be >= 0 (hard potentials)")
        if self.grid.n ** 3 > self.grid.dense_budget:
            raise ValueError(f"grid.n={self.grid.n} exceeds grid.dense_budget={self.grid.dense_budget} nodes")
        return self

    def build_grid(self):
        from .velocity_space import build_grid

        return build_grid(self.grid.n, self.grid.R)

    def build_kernel(self):
        from .collision_core import CollisionKernel

        k = self.kernel
        extra = {} if k.b_amplitude is None else {"b_amplitude": k.b_amplitude}
        return CollisionKernel(
            gamma=k.gamma,
            s=k.s,
            theta_min=k.theta_min,
            theta_nodes=k.theta_nodes,
            azimuth_nodes=k.azimuth_nodes,
            allow_soft=k.allow_soft,
            stencil_memory_mb=k.stencil_memory_mb,
            **extra,
        )


def _read_yaml(path: Union[str, Path]) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"cannot parse {path}: {getattr(exc, 'problem', exc)}", line) from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _locate_line(path: Union[str, Path], key: str) -> Optional[int]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            for number, text in enumerate(f, start=1):
                if text.strip().startswith(f"{key}:"):
                    return number
    except OSError:
        return None
    return None


def env_overrides() -> dict:
    """Values of the BOLTZMANN_NSF_* variables, after loading a local .env file."""
    load_dotenv()
    overrides = {}
    for name in ("output", "cache", "threads", "seed", "config"):
        value = os.getenv(ENV_PREFIX + name.upper())
        if value:
            overrides[name] = value
    return overrides


def load_config(path: Optional[Union[str, Path]] = None, **overrides) -> RunConfig:
    """
    Load and validate a run configuration.

    Precedence is explicit overrides (CLI flags), then environment variables,
    then the file.

    Args:
        path (str, optional): YAML config path. Defaults to the environment
            value or configs/config.yaml when it exists.
        **overrides: Top-level values such as output, cache, threads or seed.

    Returns:
        RunConfig: The validated configuration.
    """
    env = env_overrides()
    path = path or env.pop("config", None) or (DEFAULT_CONFIG_PATH if os.path.exists(DEFAULT_CONFIG_PATH) else None)
    env.pop("config", None)
    data = _read_yaml(path) if path else {}
    data.update(env)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        config = RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        key = str(first["loc"][-1]) if first.get("loc") else ""
        line = _locate_line(path, key) if path and key else None
        raise ConfigError(f"invalid configuration: {exc}", line) from exc
    logger.info("loaded configuration from %s", path or "defaults")
    return config
