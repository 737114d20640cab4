"""Poisson-gamma count distributions.

Two parameterisations are used throughout the package:

- PG2(mu, eta): the mean-parameterised negative binomial, variance mu(1 + mu/eta).
- PG1(mu, gamma): PG2 with eta = mu/gamma, so the variance mu(1 + gamma) is
  proportional to the mean.

Everything is evaluated on the log scale with ``gammaln``; coverages in the
1e4-1e5 range overflow the raw gamma function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import gammaln, xlogy


@dataclass(frozen=True)
class PG2Params:
    mu: float
    eta: float

    def __post_init__(self):
        _check_positive(mu=self.mu, eta=self.eta)


@dataclass(frozen=True)
class PG1Params:
    mu: float
    gamma: float

    def __post_init__(self):
        _check_positive(mu=self.mu, gamma=self.gamma)

    @property
    def eta(self) -> float:
        return self.mu / self.gamma

    def as_pg2(self) -> PG2Params:
        return PG2Params(self.mu, self.eta)


def _check_positive(**values):
    for name, v in values.items():
        if not (np.all(np.isfinite(v)) and np.all(np.asarray(v) > 0)):
            raise ValueError(f"{name} must be finite and > 0, got {v!r}")


def _check_counts(y):
    y = np.asarray(y)
    if np.any(y < 0):
        raise ValueError("counts must be non-negative")
    if y.dtype.kind == "f" and np.any(y != np.floor(y)):
        raise ValueError("counts must be integers")
    return y


def pg2_log_pmf(y, mu, eta):
    """Log-pmf of PG2(mu, eta) at count(s) ``y``.

    Broadcasts over array arguments.
    """
    _check_positive(mu=mu, eta=eta)
    y = _check_counts(y)
    mu = np.asarray(mu, dtype=float)
    eta = np.asarray(eta, dtype=float)
    out = (
        gammaln(y + eta)
        - gammaln(y + 1.0)
        - gammaln(eta)
        - xlogy(y, 1.0 + eta / mu)
        - eta * np.log1p(mu / eta)
    )
    return out[()] if out.ndim == 0 else out


def pg1_log_pmf(y, mu, gamma):
    """Log-pmf of PG1(mu, gamma), i.e. PG2 with ``eta = mu / gamma``."""
    _check_positive(mu=mu, gamma=gamma)
    return pg2_log_pmf(y, mu, np.asarray(mu, dtype=float) / gamma)


def pg2_variance(mu, eta):
    _check_positive(mu=mu, eta=eta)
    return mu * (1.0 + mu / eta)


def pg1_variance(mu, gamma):
    _check_positive(mu=mu, gamma=gamma)
    return mu * (1.0 + gamma)


def _log1pmx(x):
    """log(1 + x) - x without cancellation near 0."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-2
    xs = np.where(small, x, 0.0)
    series = np.zeros_like(xs)
    for k in range(11, 1, -1):  # Horner form of sum_{k>=2} (-1)^(k+1) x^k / k
        series = xs * (series + (-1.0) ** (k + 1) / k)
    series *= xs
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.log1p(np.where(small, 0.0, x)) - np.where(small, 0.0, x)
    return np.where(small, series, direct)


def deviance_residual(y, mu_hat, eta_hat):
    """Signed deviance residual of PG2 observation(s).

    ``y * log(y / mu_hat)`` is taken as 0 at ``y = 0``. The squared residual is
    twice the gap between the saturated (mean = y) and fitted log-likelihood,
    with ``eta_hat`` held fixed. With u = mu_hat - y the half deviance is
    evaluated as (y + eta) L(u / (y + eta)) - y L(u / y), L(x) = log1p(x) - x,
    where the terms linear in u have cancelled analytically. For eta < y
    the regrouping (y + eta) L(c) + eta u^2 / (y mu) + eta L(u / y), with
    c = -eta u / ((y + eta) mu), avoids the remaining cancellation when eta << y.
    """
    _check_positive(mu_hat=mu_hat, eta_hat=eta_hat)
    y = np.asarray(_check_counts(y), dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    eta_hat = np.asarray(eta_hat, dtype=float)
    y, mu_hat, eta_hat = np.broadcast_arrays(y, mu_hat, eta_hat)
    u = mu_hat - y
    ysafe = np.where(y > 0, y, 1.0)
    b = u / ysafe
    far = (y + eta_hat) * _log1pmx(u / (y + eta_hat)) - y * _log1pmx(b)
    # with eta << y the two L terms nearly cancel; regrouped form
    c = -eta_hat * u / ((y + eta_hat) * mu_hat)
    near = (y + eta_hat) * _log1pmx(c) + eta_hat * u * u / (ysafe * mu_hat) + eta_hat * _log1pmx(b)
    half = np.where(eta_hat < y, near, far)
    half = np.where(y > 0, half, eta_hat * np.log1p(mu_hat / eta_hat))
    # rounding can push a zero deviance slightly negative
    out = np.sign(y - mu_hat) * np.sqrt(np.maximum(2.0 * half, 0.0))
    return out[()] if out.ndim == 0 else out


def sample_pg2(rng: np.random.Generator, mu, eta, size=None):
    """Draw PG2 variates as a gamma-mixed Poisson: rate ~ Gamma(eta, scale mu/eta)."""
    _check_positive(mu=mu, eta=eta)
    rate = rng.gamma(shape=eta, scale=np.asarray(mu, dtype=float) / eta, size=size)
    return rng.poisson(rate)


def sample_pg1(rng: np.random.Generator, mu, gamma, size=None):
    _check_positive(mu=mu, gamma=gamma)
    return sample_pg2(rng, mu, np.asarray(mu, dtype=float) / gamma, size=size)


# Scalar kernels for the compiled likelihood. Under eta = mu/gamma the PG1
# log-pmf simplifies to
#   lgamma(y+eta) - lgamma(y+1) - lgamma(eta) + y*log(gamma/(1+gamma)) - eta*log1p(gamma)


@njit(cache=True, nogil=True)
def pg1_logpmf_scalar(y, mu, gamma):
    eta = mu / gamma
    return (
        math.lgamma(y + eta)
        - math.lgamma(y + 1.0)
        - math.lgamma(eta)
        + y * (math.log(gamma) - math.log1p(gamma))
        - eta * math.log1p(gamma)
    )


@njit(cache=True, nogil=True)
def log1pmx_scalar(x):
    if abs(x) < 1e-2:
        acc = 0.0
        for k in range(11, 1, -1):
            acc = x * (acc + (-1.0) ** (k + 1) / k)
        return acc * x
    return math.log1p(x) - x


@njit(cache=True, nogil=True)
def deviance_residual_scalar(y, mu, eta):
    if y > 0:
        u = mu - y
        b = u / y
        if eta < y:
            c = -eta * u / ((y + eta) * mu)
            d = 2.0 * ((y + eta) * log1pmx_scalar(c) + eta * u * u / (y * mu) + eta * log1pmx_scalar(b))
        else:
            d = 2.0 * ((y + eta) * log1pmx_scalar(u / (y + eta)) - y * log1pmx_scalar(b))
    else:
        d = 2.0 * eta * math.log1p(mu / eta)
    if d < 0.0:
        d = 0.0
    r = math.sqrt(d)
    if y < mu:
        return -r
    if y > mu:
        return r
    return 0.0
