"""Multivariate loss functions of exponential, polynomial and coupled-CVaR type.

All three families are built as a sum of univariate losses plus a systemic
coupling term weighted by ``alpha``::

    exponential   l(x) = sum (exp(lam_i x_i) - 1) / lam_i + alpha * exp(sum lam_i x_i)
    polynomial    l(x) = sum (u_i^th_i - 1) / th_i + alpha * sum_{i<j} (u_i^th_i / th_i) (u_j^th_j / th_j)
    cvar_coupled  l(x) = sum v_i + alpha * sum_{i<j} v_i v_j

with ``u_i = max(1 + x_i, 0)`` and ``v_i = max(x_i, 0) / (1 - beta_i)``.

The numerical kernels are numba-compiled so the stochastic approximation
loop can call them per sample without Python overhead.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from numba import njit

from .errors import ConfigError, DimensionError, NotTwiceDifferentiable

__all__ = [
    "Family",
    "LossSpec",
    "loss_value",
    "loss_gradient",
    "loss_hessian",
]


class Family(str, enum.Enum):
    EXPONENTIAL = "exponential"
    POLYNOMIAL = "polynomial"
    CVAR_COUPLED = "cvar_coupled"

    @property
    def code(self) -> int:
        return _FAMILY_CODES[self]


_FAMILY_CODES = {Family.EXPONENTIAL: 0, Family.POLYNOMIAL: 1, Family.CVAR_COUPLED: 2}


# ---------------------------------------------------------------------------
# numba kernels, single point

@njit(cache=True, nogil=True)
def _value(fam, p, alpha, x):
    d = x.shape[0]
    if fam == 0:
        s = 0.0
        lin = 0.0
        for i in range(d):
            lx = p[i] * x[i]
            s += math.expm1(lx) / p[i]
            lin += lx
        return s + alpha * math.exp(lin)
    s = 0.0
    coup = 0.0
    run = 0.0
    for i in range(d):
        if fam == 1:
            u = 1.0 + x[i]
            if u < 0.0:
                u = 0.0
            ui = u ** p[i]
            s += (ui - 1.0) / p[i]
            f = ui / p[i]
        else:
            f = x[i] / (1.0 - p[i]) if x[i] > 0.0 else 0.0
            s += f
        coup += f * run
        run += f
    return s + alpha * coup


@njit(cache=True, nogil=True)
def _coupling_factors(fam, p, x, f, fp):
    # f: per-coordinate coupling factor, fp: its derivative (0 at kinks)
    d = x.shape[0]
    total = 0.0
    for i in range(d):
        if fam == 1:
            u = 1.0 + x[i]
            if u > 0.0:
                f[i] = u ** p[i] / p[i]
                fp[i] = u ** (p[i] - 1.0)
            else:
                f[i] = 0.0
                fp[i] = 0.0
        else:
            if x[i] > 0.0:
                f[i] = x[i] / (1.0 - p[i])
                fp[i] = 1.0 / (1.0 - p[i])
            else:
                f[i] = 0.0
                fp[i] = 0.0
        total += f[i]
    return total


@njit(cache=True, nogil=True)
def _grad(fam, p, alpha, x, out):
    d = x.shape[0]
    if fam == 0:
        lin = 0.0
        for i in range(d):
            lin += p[i] * x[i]
        common = alpha * math.exp(lin)
        for i in range(d):
            out[i] = math.exp(p[i] * x[i]) + p[i] * common
        return
    f = np.empty(d)
    fp = np.empty(d)
    total = _coupling_factors(fam, p, x, f, fp)
    for i in range(d):
        out[i] = fp[i] * (1.0 + alpha * (total - f[i]))


@njit(cache=True, nogil=True)
def _hess(fam, p, alpha, x, out):
    d = x.shape[0]
    if fam == 0:
        lin = 0.0
        for i in range(d):
            lin += p[i] * x[i]
        common = alpha * math.exp(lin)
        for i in range(d):
            for j in range(d):
                out[i, j] = p[i] * p[j] * common
            out[i, i] += p[i] * math.exp(p[i] * x[i])
        return
    # polynomial only; cvar_coupled is rejected before reaching here
    f = np.empty(d)
    fp = np.empty(d)
    total = _coupling_factors(fam, p, x, f, fp)
    for i in range(d):
        for j in range(d):
            out[i, j] = alpha * fp[i] * fp[j]
        u = 1.0 + x[i]
        fpp = (p[i] - 1.0) * u ** (p[i] - 2.0) if (u > 0.0 and p[i] != 1.0) else 0.0
        out[i, i] = fpp * (1.0 + alpha * (total - f[i]))


# ---------------------------------------------------------------------------
# numba kernels, batches of rows

@njit(cache=True, nogil=True)
def _value_rows(fam, p, alpha, xs):
    n = xs.shape[0]
    out = np.empty(n)
    for k in range(n):
        out[k] = _value(fam, p, alpha, xs[k])
    return out


@njit(cache=True, nogil=True)
def _grad_rows(fam, p, alpha, xs):
    n, d = xs.shape
    out = np.empty((n, d))
    for k in range(n):
        _grad(fam, p, alpha, xs[k], out[k])
    return out


@njit(cache=True, nogil=True)
def _hess_rows(fam, p, alpha, xs):
    n, d = xs.shape
    out = np.empty((n, d, d))
    for k in range(n):
        _hess(fam, p, alpha, xs[k], out[k])
    return out


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """Parameterized multivariate loss.

    ``params`` holds lambda (exponential), theta (polynomial) or beta
    (cvar_coupled), one entry per portfolio; ``alpha`` is the systemic weight.
    """

    family: Family
    params: tuple[float, ...]
    alpha: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "params", tuple(float(v) for v in np.ravel(self.params)))
        object.__setattr__(self, "alpha", float(self.alpha))
        p = np.asarray(self.params)
        if p.size < 1:
            raise ConfigError("loss needs at least one component")
        if not np.all(np.isfinite(p)) or not math.isfinite(self.alpha):
            raise ConfigError("loss parameters must be finite")
        if self.alpha < 0:
            raise ConfigError(f"coupling alpha must be >= 0, got {self.alpha}")
        if self.family is Family.EXPONENTIAL and np.any(p <= 0):
            raise ConfigError("exponential lambda must be > 0")
        if self.family is Family.POLYNOMIAL and np.any(p < 1):
            raise ConfigError("polynomial theta must be >= 1")
        if self.family is Family.CVAR_COUPLED and np.any((p <= 0) | (p >= 1)):
            raise ConfigError("cvar beta must lie in (0, 1)")
        object.__setattr__(self, "_p", p.astype(np.float64))

    @classmethod
    def exponential(cls, lam: Sequence[float], alpha: float = 0.0) -> "LossSpec":
        return cls(Family.EXPONENTIAL, tuple(lam), alpha)

    @classmethod
    def polynomial(cls, theta: Sequence[float], alpha: float = 0.0) -> "LossSpec":
        return cls(Family.POLYNOMIAL, tuple(theta), alpha)

    @classmethod
    def cvar_coupled(cls, beta: Sequence[float], alpha: float = 0.0) -> "LossSpec":
        return cls(Family.CVAR_COUPLED, tuple(beta), alpha)

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def weakly_convex(self) -> bool:
        """True when some polynomial exponent equals 1 (strict convexity may fail)."""
        return self.family is Family.POLYNOMIAL and any(t == 1.0 for t in self.params)

    @property
    def twice_differentiable(self) -> bool:
        return self.family is not Family.CVAR_COUPLED

    @property
    def kernel_args(self) -> tuple[int, np.ndarray, float]:
        return self.family.code, self._p, self.alpha

    def _prepare(self, x) -> tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        arr2 = np.ascontiguousarray(arr.reshape(1, -1) if single else arr)
        if arr2.ndim != 2 or arr2.shape[1] != self.dim:
            raise DimensionError(f"expected points of dimension {self.dim}, got shape {arr.shape}")
        return arr2, single

    def value(self, x) -> float | np.ndarray:
        xs, single = self._prepare(x)
        out = _value_rows(*self.kernel_args, xs)
        return float(out[0]) if single else out

    def gradient(self, x) -> np.ndarray:
        xs, single = self._prepare(x)
        out = _grad_rows(*self.kernel_args, xs)
        return out[0] if single else out

    def hessian(self, x) -> np.ndarray:
        if not self.twice_differentiable:
            raise NotTwiceDifferentiable("cvar_coupled loss has no Hessian (piecewise linear)")
        xs, single = self._prepare(x)
        out = _hess_rows(*self.kernel_args, xs)
        return out[0] if single else out

    def warn_if_weak(self) -> None:
        if self.weakly_convex:
            warnings.warn(
                "polynomial loss with theta_i = 1: strict convexity of the objective may fail",
                RuntimeWarning,
                stacklevel=3,
            )

    def to_config(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "dim": self.dim,
            "params": list(self.params),
            "alpha": self.alpha,
        }

    @classmethod
    def from_config(cls, block: Mapping[str, Any]) -> "LossSpec":
        unknown = set(block) - {"family", "dim", "params", "alpha"}
        if unknown:
            raise ConfigError(f"loss: unknown keys {sorted(unknown)}")
        try:
            spec = cls(block["family"], tuple(block["params"]), block.get("alpha", 0.0))
        except KeyError as exc:
            raise ConfigError(f"loss: missing key {exc.args[0]!r}") from None
        except ValueError as exc:
            raise ConfigError(f"loss: {exc}") from None
        if "dim" in block and int(block["dim"]) != spec.dim:
            raise ConfigError(f"loss: dim={block['dim']} but {spec.dim} params given")
        return spec


def loss_value(spec: LossSpec, x) -> float | np.ndarray:
    return spec.value(x)


def loss_gradient(spec: LossSpec, x) -> np.ndarray:
    return spec.gradient(x)


def loss_hessian(spec: LossSpec, x) -> np.ndarray:
    return spec.hessian(x)
