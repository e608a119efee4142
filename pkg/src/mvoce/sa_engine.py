"""Projected Robbins-Monro solver for OCE allocations.

One pass over a stream of scenarios X_1, X_2, ... produces

* the RM iterates m_{n+1} = clamp_K(m_n + g_n H(X_{n+1}, m_n)), H(x, m) = grad l(-x-m) - 1,
* the companion value R_{n+1} = R_n - g_n (R_n - sum(m_n) - l(-X_{n+1} - m_n)),
* running averages of H H' and of a forward-difference Jacobian of H,

with step g_n = c / (n+1)^gamma. The reported allocation is a Polyak-Ruppert
average over a window of floor(t / g_n) iterates ending at the last one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy import stats

from .errors import ConfigError, DimensionError, SingularJacobian
from .losses import LossSpec, _grad, _value
from .scenarios import RngStream, ScenarioModel

__all__ = [
    "StepSchedule",
    "Box",
    "AllocationEstimate",
    "RMRun",
    "h1_sample",
    "rm_solve",
    "pr_anchor",
    "pr_average",
    "companion_risk",
    "covariance_estimator",
    "jacobian_estimator",
    "confidence_intervals",
    "solve_full",
]

CHUNK = 1 << 16


@dataclass(frozen=True)
class StepSchedule:
    c: float = 1.0
    gamma_exp: float = 0.8
    t: float = 10.0
    n_iter: int = 500_000

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigError("step constant c must be > 0")
        if not 0.5 < self.gamma_exp <= 1.0:
            raise ConfigError("step exponent gamma must lie in (1/2, 1]")
        if not self.t > 0:
            raise ConfigError("averaging scale t must be > 0")
        if int(self.n_iter) < 1:
            raise ConfigError("n_iter must be >= 1")

    def step(self, n):
        """g_n = c / (n+1)^gamma, n counted from 0."""
        return self.c / (np.asarray(n, dtype=float) + 1.0) ** self.gamma_exp

    def window(self, n: int) -> int:
        return max(1, int(math.floor(self.t / float(self.step(n)))))


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("box bounds must be vectors of equal length")
        if not np.all(lo < hi):
            raise ConfigError("box requires lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Box":
        return cls(np.full(d, float(lo)), np.full(d, float(hi)))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, m) -> bool:
        m = np.asarray(m, dtype=float)
        return bool(np.all(m >= self.lower) and np.all(m <= self.upper))

    def project(self, m) -> np.ndarray:
        return np.clip(m, self.lower, self.upper)


@dataclass
class AllocationEstimate:
    m_bar: np.ndarray
    m_last: np.ndarray
    risk: float
    sigma_hat: np.ndarray
    jac_hat: np.ndarray
    ci: np.ndarray | None
    iterations: int
    boundary_hits: int
    pr_anchor: int
    pr_window: int
    level: float | None = None
    iterates: np.ndarray | None = field(default=None, repr=False)

    @property
    def ci_halfwidth(self) -> np.ndarray | None:
        return None if self.ci is None else 0.5 * (self.ci[:, 1] - self.ci[:, 0])

    def to_dict(self) -> dict:
        return {
            "m_bar": self.m_bar.tolist(),
            "m_last": self.m_last.tolist(),
            "risk": self.risk,
            "sigma_hat": self.sigma_hat.tolist(),
            "jac_hat": self.jac_hat.tolist(),
            "ci": None if self.ci is None else self.ci.tolist(),
            "level": self.level,
            "iterations": self.iterations,
            "boundary_hits": self.boundary_hits,
            "pr_anchor": self.pr_anchor,
            "pr_window": self.pr_window,
        }


@dataclass
class RMRun:
    """Raw output of the recursion: iterates m_0..m_N and the scenarios X_1..X_N used."""

    iterates: np.ndarray
    samples: np.ndarray
    boundary_hits: int


def h1_sample(spec: LossSpec, x, m) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return spec.gradient(-x - np.asarray(m, dtype=float)) - 1.0


# ---------------------------------------------------------------------------
# fused kernel

@njit(cache=True, nogil=True)
def _sa_chunk(fam, p, alpha, xs, n0, c, gexp, lo, hi, burn, eps, m, state, sig, jac, iterates, store):
    # state = [R, hits, count]
    n, d = xs.shape
    z = np.empty(d)
    g = np.empty(d)
    ge = np.empty(d)
    for k in range(n):
        idx = n0 + k
        step = c / (idx + 1.0) ** gexp
        msum = 0.0
        for i in range(d):
            z[i] = -xs[k, i] - m[i]
            msum += m[i]
        _grad(fam, p, alpha, z, g)
        f = msum + _value(fam, p, alpha, z)
        state[0] -= step * (state[0] - f)
        if idx >= burn:
            state[2] += 1.0
            for i in range(d):
                hval = g[i] - 1.0
                for j in range(d):
                    sig[i, j] += hval * (g[j] - 1.0)
            for j in range(d):
                z[j] -= eps
                _grad(fam, p, alpha, z, ge)
                z[j] += eps
                for i in range(d):
                    jac[i, j] += (ge[i] - g[i]) / eps
        clamped = False
        for i in range(d):
            v = m[i] + step * (g[i] - 1.0)
            if v < lo[i]:
                v = lo[i]
                clamped = True
            elif v > hi[i]:
                v = hi[i]
                clamped = True
            m[i] = v
        if clamped:
            state[1] += 1.0
        if store:
            for i in range(d):
                iterates[idx + 1, i] = m[i]


def _check_start(spec: LossSpec, box: Box, m0) -> np.ndarray:
    m0 = np.asarray(m0, dtype=float).copy()
    if m0.shape != (spec.dim,) or box.dim != spec.dim:
        raise DimensionError(f"loss has dimension {spec.dim}, box {box.dim}, m0 shape {m0.shape}")
    if not box.contains(m0):
        raise ConfigError(f"m0 = {m0.tolist()} lies outside the box")
    return m0


def _run(spec, model, sched, box, m0, rng, burn_in, eps, keep_samples):
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    m = _check_start(spec, box, m0)
    if model.dim != spec.dim:
        raise DimensionError(f"scenario dimension {model.dim} does not match loss dimension {spec.dim}")
    if not 0.0 <= burn_in < 1.0:
        raise ConfigError("burn_in must lie in [0, 1)")
    if not eps > 0:
        raise ConfigError("eps must be > 0")
    spec.warn_if_weak()
    n_iter, d = int(sched.n_iter), spec.dim
    fam, p, alpha = spec.kernel_args
    iterates = np.empty((n_iter + 1, d))
    iterates[0] = m
    samples = np.empty((n_iter, d)) if keep_samples else None
    state = np.zeros(3)
    sig = np.zeros((d, d))
    jac = np.zeros((d, d))
    burn = int(math.floor(burn_in * n_iter))
    done = 0
    while done < n_iter:
        k = min(CHUNK, n_iter - done)
        xs = np.ascontiguousarray(model.sample(rng, k), dtype=np.float64)
        if keep_samples:
            samples[done:done + k] = xs
        _sa_chunk(fam, p, alpha, xs, done, float(sched.c), float(sched.gamma_exp),
                  box.lower, box.upper, burn, float(eps), m, state, sig, jac, iterates, True)
        done += k
    count = max(state[2], 1.0)
    return iterates, samples, state[0], int(state[1]), sig / count, jac / count


def rm_solve(spec: LossSpec, model: ScenarioModel, sched: StepSchedule, box: Box, m0, rng) -> RMRun:
    iterates, samples, _, hits, _, _ = _run(spec, model, sched, box, m0, rng, 0.0, 1e-6, True)
    return RMRun(iterates, samples, hits)


# ---------------------------------------------------------------------------
# Polyak-Ruppert averaging

def pr_anchor(sched: StepSchedule, n_iter: int | None = None) -> int:
    """Largest n with n + floor(t/g_n) - 1 <= n_iter, so the window ends at the last iterate."""
    n_iter = int(sched.n_iter if n_iter is None else n_iter)
    lo, hi = 0, n_iter
    if sched.window(0) - 1 > n_iter:
        return 0
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if mid + sched.window(mid) - 1 <= n_iter:
            lo = mid
        else:
            hi = mid - 1
    return lo


def pr_average(iterates, sched: StepSchedule, n: int | None = None) -> np.ndarray:
    """Average of m_n .. m_{n+L-1}, L = floor(t/g_n).

    With ``n=None`` the window is anchored to end at the final iterate. A
    window running past the available iterates is truncated with a warning.
    """
    it = np.asarray(iterates, dtype=float)
    last = it.shape[0] - 1
    if n is None:
        n = pr_anchor(sched, last)
    if not 0 <= n <= last:
        raise ConfigError(f"averaging start {n} outside the iterate range [0, {last}]")
    length = sched.window(n)
    if n + length - 1 > last:
        warnings.warn(
            f"averaging window of {length} iterates from n={n} exceeds the run; truncated to {last - n + 1}",
            RuntimeWarning,
            stacklevel=2,
        )
        length = last - n + 1
    return it[n:n + length].mean(axis=0)


# ---------------------------------------------------------------------------
# standalone estimators on a stored run (vectorized, independent of the fused kernel)

@njit(cache=True)
def _companion_recursion(steps, f, r0):
    r = r0
    for k in range(f.shape[0]):
        r -= steps[k] * (r - f[k])
    return r


def companion_risk(spec: LossSpec, iterates, samples, sched: StepSchedule, r0: float = 0.0) -> float:
    it, xs = np.asarray(iterates, float), np.asarray(samples, float)
    m_prev = it[: xs.shape[0]]
    f = m_prev.sum(axis=1) + spec.value(-xs - m_prev)
    steps = sched.step(np.arange(xs.shape[0]))
    return float(_companion_recursion(steps, np.asarray(f, float), float(r0)))


def _post_burn(iterates, samples, burn_in):
    it, xs = np.asarray(iterates, float), np.asarray(samples, float)
    b = int(math.floor(burn_in * xs.shape[0]))
    return it[b: xs.shape[0]], xs[b:]


def covariance_estimator(spec: LossSpec, iterates, samples, burn_in: float = 0.1) -> np.ndarray:
    m_prev, xs = _post_burn(iterates, samples, burn_in)
    h = h1_sample(spec, xs, m_prev)
    return h.T @ h / h.shape[0]


def jacobian_estimator(spec: LossSpec, iterates, samples, eps: float = 1e-6, burn_in: float = 0.1) -> np.ndarray:
    m_prev, xs = _post_burn(iterates, samples, burn_in)
    base = h1_sample(spec, xs, m_prev)
    out = np.empty((spec.dim, spec.dim))
    for j in range(spec.dim):
        shifted = h1_sample(spec, xs, m_prev + eps * np.eye(spec.dim)[j])
        out[:, j] = (shifted - base).mean(axis=0) / eps
    return out


def confidence_intervals(m_bar, sigma_hat, jac_hat, sched: StepSchedule, n: int, level: float = 0.95) -> np.ndarray:
    """Per-coordinate intervals m_bar_j +/- q sqrt(V_jj g_n / t), V = A^{-1} S A^{-T}.

    ``n`` is the start of the averaging window. Returns a (d, 2) array.
    """
    if sched.gamma_exp >= 1.0:
        raise ConfigError("confidence intervals need a step exponent gamma < 1")
    if not 0.0 <= level < 1.0:
        raise ConfigError("level must lie in [0, 1)")
    a = np.atleast_2d(np.asarray(jac_hat, float))
    s = np.atleast_2d(np.asarray(sigma_hat, float))
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) > 1e12:
        raise SingularJacobian("Jacobian estimate is singular or ill-conditioned")
    a_inv = np.linalg.inv(a)
    v = a_inv @ s @ a_inv.T
    q = stats.norm.ppf(0.5 + level / 2.0)
    half = q * np.sqrt(np.clip(np.diag(v), 0.0, None) * float(sched.step(n)) / sched.t)
    m_bar = np.asarray(m_bar, float)
    return np.column_stack([m_bar - half, m_bar + half])


def solve_full(
    spec: LossSpec,
    model: ScenarioModel,
    sched: StepSchedule,
    box: Box,
    m0: Sequence[float] | None = None,
    rng=0,
    level: float | None = 0.95,
    burn_in: float = 0.1,
    eps: float = 1e-6,
    keep_iterates: bool = False,
) -> AllocationEstimate:
    if m0 is None:
        m0 = box.project(np.zeros(spec.dim))
    if level is not None and sched.gamma_exp >= 1.0:
        raise ConfigError("confidence intervals need a step exponent gamma < 1; pass level=None")
    iterates, _, risk, hits, sig, jac = _run(spec, model, sched, box, m0, rng, burn_in, eps, False)
    anchor = pr_anchor(sched, sched.n_iter)
    window = min(sched.window(anchor), sched.n_iter - anchor + 1)
    m_bar = iterates[anchor:anchor + window].mean(axis=0)
    ci = None if level is None else confidence_intervals(m_bar, sig, jac, sched, anchor, level)
    return AllocationEstimate(
        m_bar=m_bar,
        m_last=iterates[-1].copy(),
        risk=float(risk),
        sigma_hat=0.5 * (sig + sig.T),
        jac_hat=jac,
        ci=ci,
        iterations=int(sched.n_iter),
        boundary_hits=hits,
        pr_anchor=anchor,
        pr_window=window,
        level=level,
        iterates=iterates if keep_iterates else None,
    )
