"""Single-parameter exponential families with canonical links.

All functions are vectorised: ``family`` may be a single :class:`Family` or an
integer array of family codes that broadcasts against ``theta`` (typically one
code per column of a data block).
"""
from __future__ import annotations

import enum

import numpy as np
from scipy.special import expit, gammaln

THETA_CLIP = 30.0
VARIANCE_FLOOR = 1e-10


class Family(enum.IntEnum):
    GAUSSIAN = 0
    BERNOULLI = 1
    POISSON = 2

    @classmethod
    def parse(cls, name: "str | Family") -> "Family":
        if isinstance(name, Family):
            return name
        key = str(name).strip().lower()
        aliases = {
            "gaussian": cls.GAUSSIAN, "normal": cls.GAUSSIAN, "g": cls.GAUSSIAN,
            "bernoulli": cls.BERNOULLI, "binary": cls.BERNOULLI, "b": cls.BERNOULLI,
            "poisson": cls.POISSON, "count": cls.POISSON, "p": cls.POISSON,
        }
        if key not in aliases:
            raise ValueError(f"unknown family {name!r}")
        return aliases[key]


class DomainError(ValueError):
    """Argument outside the domain of a family function."""


def _codes(family, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(family, dtype=np.int8), shape)


def _check_finite(theta: np.ndarray) -> None:
    if not np.all(np.isfinite(theta)):
        raise DomainError("natural parameter must be finite")


def _dispatch(family, theta, gauss, bern, pois, clip=True):
    theta = np.asarray(theta, dtype=float)
    _check_finite(theta)
    if np.ndim(family) == 0:
        fam = Family(int(family))
        f = {Family.GAUSSIAN: gauss, Family.BERNOULLI: bern, Family.POISSON: pois}[fam]
        if clip and fam != Family.GAUSSIAN:
            theta = np.clip(theta, -THETA_CLIP, THETA_CLIP)
        out = f(theta)
        return out[()] if out.ndim == 0 else out
    shape = np.broadcast_shapes(np.shape(family), theta.shape)
    codes = _codes(family, shape)
    theta = np.broadcast_to(theta, shape)
    out = np.empty(shape)
    for code, f in ((Family.GAUSSIAN, gauss), (Family.BERNOULLI, bern), (Family.POISSON, pois)):
        m = codes == code
        if m.any():
            t = theta[m]
            if clip and code != Family.GAUSSIAN:
                t = np.clip(t, -THETA_CLIP, THETA_CLIP)
            out[m] = f(t)
    return out


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def cumulant(family, theta):
    """b(theta), evaluated without clamping so that densities stay normalised."""
    return _dispatch(family, theta, lambda t: 0.5 * t * t, _softplus, np.exp, clip=False)


def mean_from_natural(family, theta):
    """b'(theta); Bernoulli/Poisson arguments are clamped to +-THETA_CLIP."""
    return _dispatch(family, theta, lambda t: t.copy(), expit, np.exp)


def variance_from_natural(family, theta):
    """b''(theta)."""

    def bern(t):
        p = expit(t)
        return p * (1.0 - p)

    return _dispatch(family, theta, np.ones_like, bern, np.exp)


def link(family, mu):
    """Canonical link g = (b')^{-1}; raises on the boundary of the mean domain."""
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise DomainError("mean must be finite")
    shape = np.broadcast_shapes(np.shape(family), mu.shape)
    codes = _codes(family, shape)
    mu_b = np.broadcast_to(mu, shape)
    out = np.empty(shape)
    g = codes == Family.GAUSSIAN
    out[g] = mu_b[g]
    b = codes == Family.BERNOULLI
    if b.any():
        m = mu_b[b]
        if np.any((m <= 0) | (m >= 1)):
            raise DomainError("Bernoulli mean must lie in (0, 1)")
        out[b] = np.log(m) - np.log1p(-m)
    p = codes == Family.POISSON
    if p.any():
        m = mu_b[p]
        if np.any(m <= 0):
            raise DomainError("Poisson mean must be positive")
        out[p] = np.log(m)
    return out[()] if out.ndim == 0 else out


def in_support(family, x) -> np.ndarray:
    """Elementwise support membership."""
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(np.shape(family), x.shape)
    codes = _codes(family, shape)
    x = np.broadcast_to(x, shape)
    ok = np.isfinite(x)
    ok &= np.where(codes == Family.BERNOULLI, (x == 0) | (x == 1), True)
    ok &= np.where(codes == Family.POISSON, (x >= 0) & (x == np.floor(x)), True)
    return ok


def log_base_measure(family, x):
    """log h(x)."""
    x = np.asarray(x, dtype=float)
    shape = np.broadcast_shapes(np.shape(family), x.shape)
    codes = _codes(family, shape)
    x = np.broadcast_to(x, shape)
    out = np.zeros(shape)
    g = codes == Family.GAUSSIAN
    out[g] = -0.5 * x[g] ** 2 - 0.5 * np.log(2 * np.pi)
    p = codes == Family.POISSON
    out[p] = -gammaln(x[p] + 1.0)
    return out


def log_density(family, x, theta, *, check: bool = True):
    """x*theta - b(theta) + log h(x)."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if check and not np.all(in_support(family, x)):
        raise DomainError("observation outside family support")
    out = x * theta - cumulant(family, theta) + log_base_measure(family, x)
    return out[()] if np.ndim(out) == 0 else out


def pearson_residual(family, x, theta, *, return_flag: bool = False):
    """(x - b'(theta)) / sqrt(b''(theta)) with the variance floored.

    With ``return_flag`` a boolean array marking floored denominators is
    returned as well.
    """
    var = variance_from_natural(family, theta)
    floored = var < VARIANCE_FLOOR
    r = (np.asarray(x, dtype=float) - mean_from_natural(family, theta)) / np.sqrt(
        np.maximum(var, VARIANCE_FLOOR)
    )
    if return_flag:
        return r, floored
    return r
