"""Modified Bessel function of the second kind, K_v(z), for real v and z > 0.

For fractional order mu in [-1/2, 1/2] the pair K_mu, K_{mu+1} comes from
Temme's series when z < 2 and from Steed's continued fraction otherwise;
higher orders follow by upward recurrence, which is stable for K. Half-integer
orders start the recurrence from the closed form of K_{1/2}.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from numba import njit

__all__ = ["bessel_k", "bessel_k_scaled", "bessel_k_ratio"]

_EPS = 1e-16
_MAXIT = 10000
_EULER = 0.57721566490153287
# Taylor coefficients of (1/Gamma(1-x) - 1/Gamma(1+x)) / (2x) = -(A2 + A4 x^2 + A6 x^4)
_A4 = -0.042002635034095237
_A6 = -0.042197734555544333


@njit(cache=True, nogil=True)
def _gamma_terms(x):
    gampl = 1.0 / math.gamma(1.0 + x)
    gammi = 1.0 / math.gamma(1.0 - x)
    if abs(x) < 1e-3:
        x2 = x * x
        gam1 = -(_EULER + _A4 * x2 + _A6 * x2 * x2)
    else:
        gam1 = (gammi - gampl) / (2.0 * x)
    gam2 = 0.5 * (gammi + gampl)
    return gam1, gam2, gampl, gammi


@njit(cache=True, nogil=True)
def _k_pair_scaled(mu, z):
    """exp(z) * (K_mu(z), K_{mu+1}(z)) for |mu| <= 1/2."""
    if z < 2.0:
        x2 = 0.5 * z
        pimu = math.pi * mu
        fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
        d = -math.log(x2)
        e = mu * d
        fact2 = 1.0 if abs(e) < _EPS else math.sinh(e) / e
        gam1, gam2, gampl, gammi = _gamma_terms(mu)
        ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
        total = ff
        e = math.exp(e)
        p = 0.5 * e / gampl
        q = 0.5 / (e * gammi)
        c = 1.0
        dd = x2 * x2
        total1 = p
        mu2 = mu * mu
        for i in range(1, _MAXIT):
            ff = (i * ff + p + q) / (i * i - mu2)
            c *= dd / i
            p /= i - mu
            q /= i + mu
            term = c * ff
            total += term
            total1 += c * (p - i * ff)
            if abs(term) < abs(total) * _EPS:
                break
        scale = math.exp(z)
        return total * scale, total1 * (2.0 / z) * scale
    b = 2.0 * (1.0 + z)
    d = 1.0 / b
    h = d
    delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu * mu
    q = a1
    c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(2, _MAXIT):
        a -= 2.0 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < _EPS:
            break
    kmu = math.sqrt(math.pi / (2.0 * z)) / s
    k1 = kmu * (mu + z + 0.5 - a1 * h) / z
    return kmu, k1


@njit(cache=True, nogil=True)
def _k_scaled(v, z):
    v = abs(v)
    half = v - 0.5
    if half >= 0 and abs(half - round(half)) < 1e-15:
        # K_{1/2} = sqrt(pi / 2z) exp(-z), K_{3/2} = K_{1/2} (1 + 1/z)
        n = int(round(half))
        kmu = math.sqrt(math.pi / (2.0 * z))
        if n == 0:
            return kmu
        k1 = kmu * (1.0 + 1.0 / z)
        for i in range(1, n):
            tmp = (0.5 + i) * (2.0 / z) * k1 + kmu
            kmu = k1
            k1 = tmp
        return k1
    nl = int(v + 0.5)
    mu = v - nl
    kmu, k1 = _k_pair_scaled(mu, z)
    for i in range(1, nl + 1):
        tmp = (mu + i) * (2.0 / z) * k1 + kmu
        kmu = k1
        k1 = tmp
    return kmu


@njit(cache=True, nogil=True)
def _k_scaled_array(v, z):
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        out[i] = _k_scaled(v, z[i])
    return out


@njit(cache=True, nogil=True)
def _k_ratio_array(v1, v2, z):
    out = np.empty(z.shape[0])
    for i in range(z.shape[0]):
        out[i] = _k_scaled(v1, z[i]) / _k_scaled(v2, z[i])
    return out


def _check_z(z) -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("bessel_k requires z > 0")
    return arr


def bessel_k_scaled(v: float, z):
    """exp(z) * K_v(z)."""
    arr = _check_z(z)
    out = _k_scaled_array(float(v), np.ascontiguousarray(arr.ravel())).reshape(arr.shape)
    if np.any(np.isinf(out)):
        raise OverflowError(f"K_{v}(z) overflows for z = {arr[np.isinf(out)].min():.3g}")
    return float(out) if out.ndim == 0 else out


def bessel_k(v: float, z):
    """K_v(z). Emits a RuntimeWarning when the result underflows to zero."""
    arr = _check_z(z)
    scaled = np.asarray(bessel_k_scaled(v, arr))
    with np.errstate(under="ignore"):
        out = scaled * np.exp(-arr)
    if np.any((out == 0) | (out < np.finfo(float).tiny)):
        warnings.warn("K_v(z) underflows double precision; result flushed toward zero", RuntimeWarning, stacklevel=2)
    return float(out) if out.ndim == 0 else out


def bessel_k_ratio(v1: float, v2: float, z) -> np.ndarray:
    """K_{v1}(z) / K_{v2}(z) computed from scaled values (no underflow)."""
    arr = np.ascontiguousarray(_check_z(z).ravel())
    out = _k_ratio_array(float(v1), float(v2), arr)
    if not np.all(np.isfinite(out)):
        raise OverflowError("Bessel ratio is not finite")
    return out
