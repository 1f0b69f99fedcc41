"""Run configuration: YAML file <-> nested dataclasses with validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .physics import COEFFICIENT_FAMILIES, FORCING_FAMILIES, NONLINEAR_FAMILIES

__all__ = [
    "ConfigError",
    "GridConfig",
    "BasisConfig",
    "CoefficientConfig",
    "ForcingConfig",
    "NonlinearConfig",
    "IntegratorConfig",
    "InitialConfig",
    "ExperimentConfig",
    "RunConfig",
    "EXPERIMENT_KINDS",
    "load_config",
    "dump_config",
    "parse_config",
]

EXPERIMENT_KINDS = ("simulate", "energy-audit", "dissipativity", "pullback", "validate-assumptions")


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    nx: int = 16
    nz: int = 16


@dataclass
class BasisConfig:
    m: int = 8
    n: int = 8


@dataclass
class CoefficientConfig:
    family: str = "constant"
    mu0: float = 50.0
    rho0: float = 1.0
    decay: float = 0.0
    center: float = 0.0


@dataclass
class ForcingConfig:
    family: str = "zero"
    amp_f: float = 0.0
    amp_g: float = 0.0
    omega: float = 1.0
    decay: float = 0.1
    sigma0: float = 0.1
    c_fg: float | None = None


@dataclass
class NonlinearConfig:
    family: str = "zero"
    c: float = 0.0
    gamma: float = 0.0
    q: float = 0.0


@dataclass
class IntegratorConfig:
    dt: float = 1e-3
    fixed_point_tol: float = 1e-11
    max_fixed_point: int = 50
    max_newton: int = 50
    max_halvings: int = 10
    record_every: int = 1
    paper_literal_damping: bool = False
    paper_literal_ht_norm: bool = False


@dataclass
class InitialConfig:
    kind: str = "smooth"        # smooth | random | zero
    amplitude: float = 1.0


@dataclass
class ExperimentConfig:
    kind: str = "simulate"
    tau: float = 0.0
    t_end: float = 10.0
    initial: InitialConfig = field(default_factory=InitialConfig)
    delta: float = 0.1
    deltas: list = field(default_factory=lambda: [0.01, 0.1, 1.0])
    # ensembles
    R: float = 1.0
    R_grid: list = field(default_factory=lambda: [1.0, 2.0, 4.0])
    count: int = 64
    horizon: float = 40.0
    margin: float = 0.1
    floor: float = 1.0
    # pullback
    target: float = 0.0
    taus: list = field(default_factory=lambda: [-5.0, -10.0, -20.0, -40.0, -80.0])
    reference: str = "zero"     # zero | omega-limit
    cluster_tol: float = 1e-3
    radii: list = field(default_factory=lambda: [1e-3, 1e-2, 1e-1])
    # validators
    n_samples: int = 200
    sample_radius: float = 10.0
    eps_frac: float = 0.25
    t_min: float = -100.0
    t_max: float = 100.0


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    coefficients: CoefficientConfig = field(default_factory=CoefficientConfig)
    forcing: ForcingConfig = field(default_factory=ForcingConfig)
    nonlinearity: NonlinearConfig = field(default_factory=NonlinearConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    seed: int = 0
    output: str = "runs/out"
    cache: str | None = None

    def validate(self) -> "RunConfig":
        g, b = self.grid, self.basis
        if g.nx < 4 or g.nz < 4:
            raise ConfigError("grid.nx and grid.nz must be >= 4")
        if b.m < 1 or b.n < 1:
            raise ConfigError("basis.m and basis.n must be >= 1")
        if b.n > g.nx - 1:
            raise ConfigError(f"basis.n={b.n} exceeds the zero-mean beam dimension {g.nx - 1}")
        c = self.coefficients
        if c.family not in COEFFICIENT_FAMILIES:
            raise ConfigError(f"unknown coefficients.family {c.family!r}; choose from {COEFFICIENT_FAMILIES}")
        if c.mu0 <= 0 or c.rho0 <= 0:
            raise ConfigError("coefficients.mu0 and rho0 must be positive")
        if c.family == "logistic" and c.decay <= 0:
            raise ConfigError("logistic coefficients need decay > 0")
        if self.forcing.family not in FORCING_FAMILIES:
            raise ConfigError(f"unknown forcing.family {self.forcing.family!r}; choose from {FORCING_FAMILIES}")
        if self.forcing.sigma0 <= 0:
            raise ConfigError("forcing.sigma0 must be positive")
        nl = self.nonlinearity
        if nl.family not in NONLINEAR_FAMILIES:
            raise ConfigError(f"unknown nonlinearity.family {nl.family!r}; choose from {NONLINEAR_FAMILIES}")
        if min(nl.c, nl.gamma, nl.q) < 0:
            raise ConfigError("nonlinearity parameters must be nonnegative")
        if nl.family == "berger" and nl.gamma == 0 and nl.q > 0:
            raise ConfigError("Berger nonlinearity with gamma = 0 needs q = 0")
        it = self.integrator
        if not it.dt > 0:
            raise ConfigError("integrator.dt must be positive")
        if it.record_every < 1 or it.max_halvings < 0:
            raise ConfigError("integrator.record_every >= 1 and max_halvings >= 0 required")
        e = self.experiment
        if e.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment.kind {e.kind!r}; choose from {EXPERIMENT_KINDS}")
        if e.t_end < e.tau:
            raise ConfigError("experiment.t_end must not precede tau")
        if e.initial.kind not in ("smooth", "random", "zero"):
            raise ConfigError("experiment.initial.kind must be smooth, random or zero")
        if e.count < 1 or e.R < 0 or e.horizon <= 0:
            raise ConfigError("experiment.count >= 1, R >= 0 and horizon > 0 required")
        if e.reference not in ("zero", "omega-limit"):
            raise ConfigError("experiment.reference must be zero or omega-limit")
        if not 0 < e.eps_frac < 2:
            raise ConfigError("experiment.eps_frac must lie in (0, 2)")
        if e.delta < 0 or any(d < 0 for d in e.deltas):
            raise ConfigError("Lyapunov deltas must be nonnegative")
        if any(t >= e.target for t in e.taus):
            raise ConfigError("pullback origins must precede experiment.target")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Any, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"section '{where}' must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        else:
            kwargs[name] = _coerce(current, value, path)
    return cls(**kwargs)


def _coerce(default, value, path):
    if value is None:
        if default is None:
            return None
        raise ConfigError(f"'{path}' must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{path}' must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{path}' must be an integer")
        return value
    if isinstance(default, float) or default is None and isinstance(value, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{path}' must be a number")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{path}' must be a list")
        return [float(v) for v in value]
    if isinstance(default, str) or default is None:
        if not isinstance(value, str):
            raise ConfigError(f"'{path}' must be a string")
        return value
    return value


def parse_config(text: str) -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return _build(RunConfig, data or {}, "").validate()


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
