"""Scenario models for the portfolio vector X.

Every model exposes ``dim`` and ``sample(rng, n) -> (n, dim) array``. Draws go
through :class:`RngStream` so that a fixed seed reproduces the same matrices
bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "RngStream",
    "ScenarioModel",
    "GaussianModel",
    "MNIGParams",
    "MNIGModel",
    "EmpiricalModel",
    "AffineModel",
    "sample_gaussian",
    "sample_ig",
    "sample_mnig",
    "mnig_transform",
    "sample_empirical",
    "load_csv",
]

DET_TOL = 1e-6


class RngStream:
    """Seeded random stream (PCG64). Not safe to share between threads."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, index: int) -> "RngStream":
        return RngStream(self.seed + int(index))

    @property
    def state(self) -> dict:
        return self.generator.bit_generator.state

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


def _as_stream(rng) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(rng)


class ScenarioModel(Protocol):
    dim: int

    def sample(self, rng: RngStream, n: int) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Gaussian

def _gaussian_factor(cov: np.ndarray) -> np.ndarray:
    if not np.any(cov):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError:
        raise ConfigError("covariance is not positive semidefinite") from None


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    cov: np.ndarray
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ConfigError(f"covariance shape {cov.shape} does not match mean of length {d}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ConfigError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10 * max(1.0, np.abs(cov).max()):
            raise ConfigError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_factor", _gaussian_factor(cov))

    @classmethod
    def bivariate(cls, sigma: Sequence[float] = (1.0, 1.0), rho: float = 0.0, mean=(0.0, 0.0)):
        s1, s2 = sigma
        cov = [[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]]
        return cls(np.asarray(mean, dtype=float), np.asarray(cov))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, rng, n: int) -> np.ndarray:
        return sample_gaussian(self, rng, n)


def sample_gaussian(model: GaussianModel, rng, n: int) -> np.ndarray:
    g = _as_stream(rng).generator.standard_normal((int(n), model.dim))
    return model.mean + g @ model._factor.T


# ---------------------------------------------------------------------------
# Inverse Gaussian and MNIG

def sample_ig(chi: float, psi: float, rng, n: int) -> np.ndarray:
    """Inverse Gaussian draws with density proportional to z^{-3/2} exp(-(chi/z + psi z)/2).

    Mean is sqrt(chi/psi), shape is chi. Uses the Michael-Schucany-Haas
    transformation with one uniform acceptance step.
    """
    if not (chi > 0 and psi > 0):
        raise ConfigError(f"inverse Gaussian needs chi > 0 and psi > 0, got {chi}, {psi}")
    gen = _as_stream(rng).generator
    mu = math.sqrt(chi / psi)
    shape = chi
    y = gen.standard_normal(int(n)) ** 2
    u = gen.random(int(n))
    w = mu * y
    s = np.sqrt(w * w + 4.0 * shape * w)
    # smaller root of the quadratic, written without cancellation
    denom = np.square(w + s)
    x = np.where(w > 0, 4.0 * mu * shape * w / np.where(w > 0, denom, 1.0), mu)
    return np.where(u <= mu / (mu + x), x, mu * mu / x)


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(mat)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


@dataclass(frozen=True)
class MNIGParams:
    """Multivariate normal inverse Gaussian parameters.

    ``alpha`` tail shape, ``beta`` skewness, ``delta`` scale, ``mu`` location
    and ``gamma`` the correlation matrix (symmetric PSD, unit determinant).
    ``strict=False`` relaxes ``delta > 0`` to ``delta >= 0`` and drops the
    determinant check; it exists for EM starting points only.
    """

    alpha: float
    beta: np.ndarray
    delta: float
    mu: np.ndarray
    gamma: np.ndarray
    strict: bool = True

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        d = mu.shape[0]
        if beta.shape != (d,) or gamma.shape != (d, d):
            raise ConfigError(f"MNIG shapes disagree: beta {beta.shape}, mu {mu.shape}, gamma {gamma.shape}")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "delta", float(self.delta))
        vals = np.concatenate([[self.alpha, self.delta], beta, mu, gamma.ravel()])
        if not np.all(np.isfinite(vals)):
            raise ConfigError("MNIG parameters must be finite")
        if self.alpha <= 0:
            raise ConfigError("MNIG alpha must be > 0")
        if self.delta < 0 or (self.strict and self.delta == 0):
            raise ConfigError("MNIG delta must be > 0")
        if not np.allclose(gamma, gamma.T, atol=1e-10):
            raise ConfigError("MNIG gamma must be symmetric")
        eig = np.linalg.eigvalsh(gamma)
        if eig.min() <= 0:
            raise ConfigError("MNIG gamma must be positive definite")
        if self.strict and abs(np.prod(eig) - 1.0) > DET_TOL:
            raise ConfigError(f"MNIG gamma must have unit determinant, got {np.prod(eig):.8g}")
        if self.alpha ** 2 <= beta @ gamma @ beta:
            raise ConfigError("MNIG requires alpha^2 > beta' gamma beta")

    @classmethod
    def initial(cls, alpha, beta, delta, mu, gamma) -> "MNIGParams":
        return cls(alpha, beta, delta, mu, gamma, strict=False)

    @classmethod
    def with_normalized_gamma(cls, alpha, beta, delta, mu, gamma) -> "MNIGParams":
        """Rescale gamma to unit determinant (for parameters rounded to a few digits)."""
        g = np.asarray(gamma, dtype=float)
        g = g / np.linalg.det(g) ** (1.0 / g.shape[0])
        return cls(alpha, beta, delta, mu, g)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def psi(self) -> float:
        """alpha^2 - beta' gamma beta, the rate of the mixing law."""
        return self.alpha ** 2 - float(self.beta @ self.gamma @ self.beta)

    def mean(self) -> np.ndarray:
        return self.mu + self.delta / math.sqrt(self.psi) * (self.gamma @ self.beta)

    def covariance(self) -> np.ndarray:
        gb = self.gamma @ self.beta
        return self.delta / math.sqrt(self.psi) * (self.gamma + np.outer(gb, gb) / self.psi)

    def as_vector(self) -> np.ndarray:
        """Flattened (delta, mu, beta, vec(gamma), alpha)."""
        return np.concatenate([[self.delta], self.mu, self.beta, self.gamma.ravel(), [self.alpha]])

    def to_config(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "delta": self.delta,
            "mu": self.mu.tolist(),
            "gamma": self.gamma.tolist(),
        }


def mnig_transform(params: MNIGParams, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    """X = mu + Z gamma beta + sqrt(Z) gamma^{1/2} Y for given mixing draws Z and normals Y."""
    z = np.asarray(z, dtype=float)
    root = _sym_sqrt(params.gamma)
    gb = params.gamma @ params.beta
    return params.mu + z[:, None] * gb + np.sqrt(z)[:, None] * (np.asarray(y) @ root.T)


def sample_mnig(params: MNIGParams, rng, n: int, return_mixing: bool = False):
    stream = _as_stream(rng)
    z = sample_ig(params.delta ** 2, params.psi, stream, n)
    y = stream.generator.standard_normal((int(n), params.dim))
    x = mnig_transform(params, z, y)
    return (x, z) if return_mixing else x


@dataclass(frozen=True)
class MNIGModel:
    params: MNIGParams

    @property
    def dim(self) -> int:
        return self.params.dim

    def sample(self, rng, n: int) -> np.ndarray:
        return sample_mnig(self.params, rng, n)


# ---------------------------------------------------------------------------
# Empirical (bootstrap over CSV rows)

def load_csv(path, header: bool = False) -> np.ndarray:
    """Read a comma-separated matrix of finite reals, one observation per row."""
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, record in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            values = []
            for col, cell in enumerate(record, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col}: cannot parse {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {lineno}, column {col}: non-finite value {cell!r}")
                values.append(v)
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise DataError(f"{path}: row {lineno} has {len(values)} columns, expected {width}")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class EmpiricalModel:
    data: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.shape[0] < 1:
            raise DataError("empirical model needs at least one row")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_csv(cls, path, header: bool = False) -> "EmpiricalModel":
        return cls(load_csv(path, header=header))

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def sample(self, rng, n: int) -> np.ndarray:
        idx = _as_stream(rng).generator.integers(0, self.data.shape[0], size=int(n))
        return self.data[idx]


def sample_empirical(source, rng, n: int, header: bool = False) -> np.ndarray:
    model = source if isinstance(source, EmpiricalModel) else EmpiricalModel.from_csv(Path(source), header)
    return model.sample(rng, n)


@dataclass(frozen=True)
class AffineModel:
    """scale * X + shift for a base model X (componentwise scale)."""

    base: ScenarioModel
    shift: np.ndarray | float = 0.0
    scale: np.ndarray | float = 1.0

    @property
    def dim(self) -> int:
        return self.base.dim

    def sample(self, rng, n: int) -> np.ndarray:
        return np.asarray(self.scale) * self.base.sample(rng, n) + np.asarray(self.shift)
