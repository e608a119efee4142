"""EM estimation of MNIG parameters.

Given X ~ MNIG, the mixing variable satisfies
Z | X = x ~ GIG(-(d+1)/2, q(x)^2, alpha^2) with
q(x) = sqrt(delta^2 + (x - mu)' Gamma^{-1} (x - mu)). The E-step needs only
E[Z | X] and E[1/Z | X]; the M-step is closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bessel import bessel_k_ratio, bessel_k_scaled
from .errors import ConfigError, DataError, DegenerateStep, NonPdScatter
from .scenarios import MNIGParams, RngStream

__all__ = [
    "EMConfig",
    "EMResult",
    "GIGMoments",
    "mahalanobis_q",
    "gig_conditional_moments",
    "em_step",
    "em_fit",
    "em_fit_multistart",
    "mnig_logpdf",
    "mnig_loglik",
    "default_initial",
]


@dataclass(frozen=True)
class EMConfig:
    initial: MNIGParams
    tol: float = 1e-5
    max_iter: int = 1000

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("EM tolerance must be > 0")
        if int(self.max_iter) < 1:
            raise ConfigError("EM max_iter must be >= 1")


@dataclass
class EMResult:
    params: MNIGParams
    iterations: int
    converged: bool
    step_norms: list[float] = field(default_factory=list)
    log_likelihoods: list[float] = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihoods[-1] if self.log_likelihoods else float("nan")

    def to_report(self) -> dict:
        return {
            "params": self.params.to_config(),
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": [
                {"iteration": i + 1, "step_norm": s, "log_likelihood": ll}
                for i, (s, ll) in enumerate(zip(self.step_norms, self.log_likelihoods))
            ],
        }


@dataclass(frozen=True)
class GIGMoments:
    zeta: np.ndarray  # E[Z | X_i]
    phi: np.ndarray  # E[1/Z | X_i]


def _check_data(data, d: int) -> np.ndarray:
    x = np.atleast_2d(np.asarray(data, dtype=float))
    if x.shape[1] != d:
        raise DataError(f"data has {x.shape[1]} columns, parameters have dimension {d}")
    if not np.all(np.isfinite(x)):
        raise DataError("data contains non-finite values")
    return x


def mahalanobis_q(params: MNIGParams, data) -> np.ndarray:
    x = _check_data(data, params.dim)
    try:
        chol = np.linalg.cholesky(params.gamma)
    except np.linalg.LinAlgError:
        raise ConfigError("gamma is singular") from None
    w = np.linalg.solve(chol, (x - params.mu).T)
    return np.sqrt(params.delta**2 + np.einsum("ij,ij->j", w, w))


def gig_conditional_moments(params: MNIGParams, data) -> GIGMoments:
    d = params.dim
    q = mahalanobis_q(params, data)
    if np.any(q <= 0):
        raise DegenerateStep("q(x) = 0: an observation coincides with mu while delta = 0")
    a = params.alpha
    z = a * q
    zeta = (q / a) * bessel_k_ratio((d - 1) / 2, (d + 1) / 2, z)
    phi = (a / q) * bessel_k_ratio((d + 3) / 2, (d + 1) / 2, z)
    return GIGMoments(zeta, phi)


def em_step(params: MNIGParams, data) -> MNIGParams:
    x = _check_data(data, params.dim)
    n, d = x.shape
    if n <= d:
        raise DataError(f"EM needs more observations than dimensions (N={n}, d={d})")
    mom = gig_conditional_moments(params, x)
    zbar = mom.zeta.mean()
    pbar = mom.phi.mean()
    xbar = x.mean(axis=0)
    xphi = mom.phi @ x / n

    gap = pbar - 1.0 / zbar
    if not gap > 0:
        raise DegenerateStep(f"mean E[1/Z] - 1/mean E[Z] = {gap:.3g} is not positive")
    delta = 1.0 / math.sqrt(gap)
    mu = (xbar - zbar * xphi) / (1.0 - zbar * pbar)
    gb = xphi - pbar * mu
    centred = x - mu
    scatter = (centred * mom.phi[:, None]).T @ centred / n - zbar * np.outer(gb, gb)
    scatter = 0.5 * (scatter + scatter.T)
    det = np.linalg.det(scatter)
    if not det > 0 or np.linalg.eigvalsh(scatter).min() <= 0:
        raise NonPdScatter(f"scatter matrix is not positive definite (det = {det:.3g})")
    gamma = scatter / det ** (1.0 / d)
    beta = np.linalg.solve(gamma, gb)
    alpha = math.sqrt(delta**2 / zbar**2 + beta @ gamma @ beta)
    return MNIGParams(alpha, beta, delta, mu, gamma)


def mnig_logpdf(params: MNIGParams, data) -> np.ndarray:
    """Log density of the MNIG law (Gamma assumed to have unit determinant)."""
    x = _check_data(data, params.dim)
    d = params.dim
    q = mahalanobis_q(params, x)
    a, delta = params.alpha, params.delta
    z = a * q
    log_k = np.log(np.asarray(bessel_k_scaled((d + 1) / 2, z))) - z
    return (
        math.log(delta)
        - 0.5 * (d - 1) * math.log(2.0)
        + 0.5 * (d + 1) * (np.log(a / math.pi) - np.log(q))
        + delta * math.sqrt(params.psi)
        + (x - params.mu) @ params.beta
        + log_k
    )


def mnig_loglik(params: MNIGParams, data) -> float:
    return float(np.sum(mnig_logpdf(params, data)))


def em_fit(config: EMConfig, data) -> EMResult:
    x = _check_data(data, config.initial.dim)
    params = config.initial
    norms: list[float] = []
    lls: list[float] = []
    converged = False
    for _ in range(int(config.max_iter)):
        new = em_step(params, x)
        norms.append(float(np.linalg.norm(new.as_vector() - params.as_vector())))
        lls.append(mnig_loglik(new, x))
        params = new
        if norms[-1] < config.tol:
            converged = True
            break
    return EMResult(params, len(norms), converged, norms, lls)


def default_initial(d: int, alpha: float = 1.0, delta: float = 0.0) -> MNIGParams:
    return MNIGParams.initial(alpha, np.zeros(d), delta, np.zeros(d), np.eye(d))


def em_fit_multistart(config: EMConfig, data, starts: int = 3, seed: int = 0) -> EMResult:
    """Run EM from ``config.initial`` and ``starts - 1`` perturbed copies; keep the best likelihood."""
    if starts < 1:
        raise ConfigError("need at least one start")
    x = _check_data(data, config.initial.dim)
    gen = RngStream(seed).generator
    spread = x.std(axis=0)
    init = config.initial
    best = None
    for k in range(starts):
        if k == 0:
            start = init
        else:
            start = MNIGParams.initial(
                init.alpha * math.exp(gen.normal(0.0, 0.5)),
                np.zeros(init.dim),
                init.delta * math.exp(gen.normal(0.0, 0.5)),
                init.mu + gen.normal(0.0, 0.5, init.dim) * spread,
                init.gamma,
            )
        try:
            res = em_fit(EMConfig(start, config.tol, config.max_iter), x)
        except (DegenerateStep, NonPdScatter):
            if k == 0 and starts == 1:
                raise
            continue
        if best is None or res.log_likelihood > best.log_likelihood:
            best = res
    if best is None:
        raise DegenerateStep("every EM start failed")
    return best
