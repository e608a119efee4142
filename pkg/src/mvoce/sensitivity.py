"""Marginal risk contributions and allocation marginals under a shock Y.

For X shifted to X + eps Y, the risk moves at rate R(X, Y) = -E[Y . grad l(-X-m*)]
and the allocation at rate RA(X, Y) = M^{-1} V with
M = E[hess l(-X-m*)] and V = -E[hess l(-X-m*) Y]. All expectations are
Monte-Carlo averages over joint samples of (X, Y), stored side by side as
an (n, 2d) matrix.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NotTwiceDifferentiable, SingularSensitivity
from .losses import Family, LossSpec
from .scenarios import RngStream, ScenarioModel

__all__ = [
    "ShockReport",
    "ShockSpec",
    "joint_samples",
    "risk_marginal",
    "alloc_marginal",
    "exp_shock_closed_form",
]

COND_LIMIT = 1e12


@dataclass
class ShockReport:
    risk_marginal: float
    alloc_marginal: np.ndarray
    m_matrix: np.ndarray
    v_vector: np.ndarray
    se: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else v

        return {
            "risk_marginal": self.risk_marginal,
            "alloc_marginal": self.alloc_marginal.tolist(),
            "m_matrix": self.m_matrix.tolist(),
            "v_vector": self.v_vector.tolist(),
            "se": {k: plain(v) for k, v in self.se.items()},
            "diagnostics": {k: plain(v) for k, v in self.diagnostics.items()},
        }


@dataclass(frozen=True)
class ShockSpec:
    """Y_i = mean_i + loading_i X_i + scale_i xi_i with xi standard normal, independent of X.

    ``deterministic`` keeps only ``mean``; ``independent`` drops ``loading``;
    ``correlated`` uses all three.
    """

    kind: str
    mean: tuple[float, ...]
    loading: tuple[float, ...] | None = None
    scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("deterministic", "independent", "correlated"):
            raise ConfigError(f"unknown shock kind {self.kind!r}")
        d = len(self.mean)
        for name in ("loading", "scale"):
            v = getattr(self, name)
            if v is not None and len(v) != d:
                raise ConfigError(f"shock {name} must have length {d}")

    @property
    def dim(self) -> int:
        return len(self.mean)


def joint_samples(model: ScenarioModel, shock: ShockSpec, rng, n: int) -> np.ndarray:
    if shock.dim != model.dim:
        raise DimensionError(f"shock dimension {shock.dim} does not match scenario dimension {model.dim}")
    stream = rng if isinstance(rng, RngStream) else RngStream(rng)
    x = model.sample(stream, n)
    y = np.tile(np.asarray(shock.mean, dtype=float), (x.shape[0], 1))
    if shock.kind == "correlated" and shock.loading is not None:
        y += np.asarray(shock.loading, dtype=float) * x
    if shock.kind != "deterministic" and shock.scale is not None:
        y += np.asarray(shock.scale, dtype=float) * stream.generator.standard_normal(x.shape)
    return np.hstack([x, y])


def _split(spec: LossSpec, joint) -> tuple[np.ndarray, np.ndarray]:
    arr = np.atleast_2d(np.asarray(joint, dtype=float))
    d = spec.dim
    if arr.shape[1] != 2 * d:
        raise DimensionError(f"joint samples need {2 * d} columns (X then Y), got {arr.shape[1]}")
    return arr[:, :d], arr[:, d:]


def risk_marginal(spec: LossSpec, joint, m_star) -> tuple[float, float]:
    """Monte-Carlo estimate of -E[Y . grad l(-X-m*)]; returns (value, standard error)."""
    if spec.family is Family.CVAR_COUPLED:
        warnings.warn("cvar_coupled gradient is used almost everywhere; X must have a continuous law",
                      RuntimeWarning, stacklevel=2)
    x, y = _split(spec, joint)
    terms = -np.einsum("ij,ij->i", y, spec.gradient(-x - np.asarray(m_star, dtype=float)))
    return float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(terms.size)) if terms.size > 1 else 0.0


def _solve(m_matrix, v_vector) -> np.ndarray:
    cond = np.linalg.cond(m_matrix)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSensitivity(f"M is singular (condition number {cond:.3g})", condition_number=cond)
    return np.linalg.solve(m_matrix, v_vector)


def alloc_marginal(spec: LossSpec, joint, m_star) -> ShockReport:
    if not spec.twice_differentiable:
        raise NotTwiceDifferentiable("allocation marginals need a twice differentiable loss")
    x, y = _split(spec, joint)
    n = x.shape[0]
    m_star = np.asarray(m_star, dtype=float)
    z = -x - m_star
    hess = spec.hessian(z)
    grad = spec.gradient(z)
    m_matrix = hess.mean(axis=0)
    m_matrix = 0.5 * (m_matrix + m_matrix.T)
    hy = np.einsum("kij,kj->ki", hess, y)
    v_vector = -hy.mean(axis=0)
    ra = _solve(m_matrix, v_vector)
    # per-sample influence of the linear solve gives the standard error of RA
    influence = np.linalg.solve(m_matrix, (-hy - np.einsum("kij,j->ki", hess, ra)).T).T
    risk_terms = -np.einsum("ij,ij->i", y, grad)
    root_n = math.sqrt(n)
    se = {
        "risk_marginal": float(risk_terms.std(ddof=1) / root_n),
        "alloc_marginal": influence.std(axis=0, ddof=1) / root_n,
        "m_matrix": hess.std(axis=0, ddof=1) / root_n,
        "v_vector": hy.std(axis=0, ddof=1) / root_n,
    }
    return ShockReport(float(risk_terms.mean()), ra, m_matrix, v_vector, se)


def exp_shock_closed_form(lam, alpha: float, joint, m_star) -> ShockReport:
    """Bivariate exponential loss, shock on the first component only.

    Builds M, V and R(X, Y) from the six moments C_X1, C_X2, C_X, C_X1Y,
    C_X2Y, C_XY and reports the unnormalized RA direction vector for
    proportionality checks.
    """
    l1, l2 = (float(v) for v in lam)
    arr = np.atleast_2d(np.asarray(joint, dtype=float))
    if arr.shape[1] != 4:
        raise DimensionError("closed form needs joint samples (X1, X2, Y1, Y2)")
    if np.any(arr[:, 3] != 0):
        raise ConfigError("closed form assumes the shock hits the first component only")
    m1, m2 = (float(v) for v in m_star)
    e1 = np.exp(l1 * (-arr[:, 0] - m1))
    e2 = np.exp(l2 * (-arr[:, 1] - m2))
    e12 = e1 * e2
    y1 = arr[:, 2]
    samples = {"C_X1": e1, "C_X2": e2, "C_X": e12, "C_X1Y": y1 * e1, "C_X2Y": y1 * e2, "C_XY": y1 * e12}
    c = {k: float(v.mean()) for k, v in samples.items()}
    root_n = math.sqrt(arr.shape[0])
    m_matrix = np.array([
        [l1 * c["C_X1"] + alpha * l1**2 * c["C_X"], alpha * l1 * l2 * c["C_X"]],
        [alpha * l1 * l2 * c["C_X"], l2 * c["C_X2"] + alpha * l2**2 * c["C_X"]],
    ])
    v_vector = np.array([-l1 * c["C_X1Y"] - alpha * l1**2 * c["C_XY"], -alpha * l1 * l2 * c["C_XY"]])
    ra = _solve(m_matrix, v_vector)
    risk_terms = -samples["C_X1Y"] - alpha * l1 * samples["C_XY"]
    direction = np.array([
        -c["C_X2"] * c["C_X1Y"] - alpha * (l1 * c["C_X2"] * c["C_XY"] + l2 * c["C_X"] * c["C_X1Y"]),
        -alpha * (l1 * c["C_X1"] * c["C_XY"] - l1 * c["C_X"] * c["C_X1Y"]),
    ])
    se = {
        "risk_marginal": float(risk_terms.std(ddof=1) / root_n),
        **{k: float(v.std(ddof=1) / root_n) for k, v in samples.items()},
    }
    return ShockReport(float(risk_terms.mean()), ra, m_matrix, v_vector, se,
                       diagnostics={**c, "direction": direction})
