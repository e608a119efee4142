"""Run configuration: schema, file loading and command-line overrides.

Precedence, lowest to highest: schema defaults, the config file (YAML or
JSON), ``--set path=value`` overrides, then the global ``--seed`` flag.
Every block rejects unknown keys, and validation errors name the path to
the offending field.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, OCEError
from .losses import LossSpec
from .mnig_em import EMConfig, default_initial
from .oracle_bench import GaussianExpCase
from .sa_engine import Box, StepSchedule
from .scenarios import EmpiricalModel, GaussianModel, MNIGModel, MNIGParams
from .sensitivity import ShockSpec

__all__ = [
    "SolveConfig",
    "OracleConfig",
    "BenchmarkConfig",
    "ShockConfig",
    "FitConfig",
    "load_config",
    "parse_overrides",
]


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LossBlock(_Block):
    family: Literal["exponential", "polynomial", "cvar_coupled"]
    params: list[float] = Field(min_length=1)
    alpha: float = 0.0

    def build(self) -> LossSpec:
        return LossSpec(self.family, tuple(self.params), self.alpha)


class GaussianBlock(_Block):
    kind: Literal["gaussian"]
    mean: list[float] | None = None
    cov: list[list[float]] | None = None
    sigma: list[float] | None = None
    rho: float | None = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.cov is None) == (self.sigma is None):
            raise ValueError("give either cov, or sigma with rho for the bivariate case")
        if self.sigma is not None and len(self.sigma) != 2:
            raise ValueError("sigma must have two entries")
        return self

    def covariance(self) -> np.ndarray:
        if self.cov is not None:
            return np.asarray(self.cov, dtype=float)
        s1, s2 = self.sigma
        r = 0.0 if self.rho is None else self.rho
        return np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])

    def build(self) -> GaussianModel:
        cov = self.covariance()
        mean = np.zeros(cov.shape[0]) if self.mean is None else np.asarray(self.mean, dtype=float)
        return GaussianModel(mean, cov)


class MNIGBlock(_Block):
    kind: Literal["mnig"]
    alpha: float
    beta: list[float]
    delta: float
    mu: list[float]
    gamma: list[list[float]]
    normalize_gamma: bool = False

    def params(self) -> MNIGParams:
        ctor = MNIGParams.with_normalized_gamma if self.normalize_gamma else MNIGParams
        return ctor(self.alpha, self.beta, self.delta, self.mu, self.gamma)

    def build(self) -> MNIGModel:
        return MNIGModel(self.params())


class EmpiricalBlock(_Block):
    kind: Literal["empirical"]
    path: str
    header: bool = False

    def build(self) -> EmpiricalModel:
        return EmpiricalModel.from_csv(self.path, self.header)


Scenario = Annotated[Union[GaussianBlock, MNIGBlock, EmpiricalBlock], Field(discriminator="kind")]


class ScheduleBlock(_Block):
    c: float = 1.0
    gamma_exp: float = 0.8
    t: float = 10.0
    n_iter: int = 500_000

    def build(self) -> StepSchedule:
        return StepSchedule(self.c, self.gamma_exp, self.t, self.n_iter)


class BoxBlock(_Block):
    lower: list[float]
    upper: list[float]

    def build(self) -> Box:
        return Box(self.lower, self.upper)


class SolveConfig(_Block):
    loss: LossBlock
    scenario: Scenario
    box: BoxBlock
    schedule: ScheduleBlock = ScheduleBlock()
    m0: list[float] | None = None
    ci_level: float | None = 0.95
    burn_in: float = 0.1
    eps: float = 1e-6
    seed: int = 0


class OracleConfig(_Block):
    lam: list[float] = Field(min_length=2, max_length=2)
    alpha: float = 0.0
    sigma: list[float] = Field(default=[1.0, 1.0], min_length=2, max_length=2)
    rho: float = 0.0

    def build(self) -> GaussianExpCase:
        return GaussianExpCase(tuple(self.lam), self.alpha, tuple(self.sigma), self.rho)


class BenchmarkConfig(_Block):
    loss: LossBlock
    scenario: Scenario
    n_samples: int = 500_000
    x0: list[float] | None = None
    tol: float = 1e-8
    max_eval: int = 20_000
    seed: int = 0


class ShockBlock(_Block):
    kind: Literal["deterministic", "independent", "correlated"]
    mean: list[float]
    loading: list[float] | None = None
    scale: list[float] | None = None

    def build(self) -> ShockSpec:
        opt = lambda v: None if v is None else tuple(v)
        return ShockSpec(self.kind, tuple(self.mean), opt(self.loading), opt(self.scale))


class ShockConfig(_Block):
    loss: LossBlock
    scenario: Scenario
    shock: ShockBlock
    m_source: Literal["oracle", "sa"] = "oracle"
    n_samples: int = 1_000_000
    schedule: ScheduleBlock = ScheduleBlock()
    box: BoxBlock | None = None
    seed: int = 0

    @model_validator(mode="after")
    def _source_needs(self):
        if self.m_source == "sa" and self.box is None:
            raise ValueError("m_source 'sa' needs a box")
        return self

    def oracle_case(self) -> GaussianExpCase:
        """Closed-form case behind m_source 'oracle': exponential loss on a centred bivariate Gaussian."""
        scen = self.scenario
        if self.loss.family != "exponential" or len(self.loss.params) != 2:
            raise ConfigError("m_source 'oracle' needs an exponential loss with d = 2")
        if not isinstance(scen, GaussianBlock):
            raise ConfigError("m_source 'oracle' needs a gaussian scenario")
        if scen.mean is not None and np.any(np.asarray(scen.mean) != 0):
            raise ConfigError("m_source 'oracle' needs a centred scenario")
        cov = scen.covariance()
        if cov.shape != (2, 2):
            raise ConfigError("m_source 'oracle' needs a bivariate scenario")
        sig = np.sqrt(np.diag(cov))
        return GaussianExpCase(tuple(self.loss.params), self.loss.alpha, tuple(sig), cov[0, 1] / (sig[0] * sig[1]))


class FitConfig(_Block):
    data: str
    header: bool = False
    tol: float = 1e-5
    max_iter: int = 1000
    starts: int = Field(default=1, ge=1)
    initial: MNIGBlock | None = None
    seed: int = 0

    def em_config(self, dim: int) -> EMConfig:
        if self.initial is None:
            start = default_initial(dim)
        else:
            b = self.initial
            start = MNIGParams.initial(b.alpha, b.beta, b.delta, b.mu, b.gamma)
        return EMConfig(start, self.tol, self.max_iter)


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_overrides(items) -> dict:
    """Turn ``a.b=value`` strings into a nested dict; values are parsed as YAML scalars or lists."""
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form path=value")
        path, raw = item.split("=", 1)
        keys = [k for k in path.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override {item!r} has an empty path")
        node = out
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r} conflicts with an earlier one")
        node[keys[-1]] = yaml.safe_load(raw)
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _read_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a mapping at the top level")
    return data


def load_config(model: type[BaseModel], path=None, overrides=(), seed: int | None = None) -> BaseModel:
    raw = _read_file(path) if path is not None else {}
    raw = _merge(raw, parse_overrides(overrides))
    if seed is not None:
        raw["seed"] = seed
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def build_loss_and_model(cfg) -> tuple[Any, Any]:
    """Validated loss and scenario, checked for matching dimensions."""
    try:
        spec = cfg.loss.build()
        model = cfg.scenario.build()
    except OCEError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if spec.dim != model.dim:
        raise ConfigError(f"scenario: dimension {model.dim} does not match loss dimension {spec.dim}")
    return spec, model
