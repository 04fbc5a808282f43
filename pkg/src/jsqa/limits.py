"""Closed-form limiting distributions for the three regimes: density, CDF,
MGF, and moments, plus the limiting unused-service rate of the critical
family.

Per coordinate, with sigma2 = limiting per-slot variance and n queues:

  classic:     Exponential with mean sigma2 / (2 n constant)
  critical:    Normal(constant / n, sigma2 / (2 n^2)) conditioned positive
  overloaded:  Normal(0, bar_sigma2 / (2 n^2))

The scaled total follows the same law with n replaced by 1 (the limit vector
is a single scalar times the all-ones vector).

Gaussian integrals use error-function closed forms; quadrature is kept to
test-time cross-checks and to truncated-normal moments, where it is exact
enough at the stated tolerance and avoids a recurrence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erf, ndtr

from .regimes import RegimeSpec, limit_sigma2

__all__ = [
    "LimitDistribution",
    "exponential",
    "truncated_gaussian",
    "gaussian",
    "limit_for_regime",
    "critical_unused_limit",
]

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LimitDistribution:
    """One limiting law. `kind` selects the family; `mean` is the exponential
    mean, (`mu0`, `var`) the underlying Gaussian parameters (truncation at 0
    from below applies only to the truncated kind)."""

    kind: str
    mean: float = 0.0
    mu0: float = 0.0
    var: float = 0.0

    def __post_init__(self):
        if self.kind == "exponential":
            if self.mean <= 0:
                raise ValueError("exponential mean must be positive")
        elif self.kind in ("truncated-gaussian", "gaussian"):
            if self.var <= 0:
                raise ValueError("gaussian variance must be positive")
        else:
            raise ValueError(f"unknown limit kind {self.kind!r}")

    def _norm_mass_above_zero(self) -> float:
        return float(ndtr(self.mu0 / math.sqrt(self.var)))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            out = np.where(x < 0, 0.0, np.exp(-x / self.mean) / self.mean)
        elif self.kind == "truncated-gaussian":
            sd = math.sqrt(self.var)
            body = np.exp(-0.5 * ((x - self.mu0) / sd) ** 2) / (sd * _SQRT2PI)
            out = np.where(x < 0, 0.0, body / self._norm_mass_above_zero())
        else:
            sd = math.sqrt(self.var)
            out = np.exp(-0.5 * (x / sd) ** 2) / (sd * _SQRT2PI)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            out = np.where(x < 0, 0.0, 1.0 - np.exp(-x / self.mean))
        elif self.kind == "truncated-gaussian":
            sd = math.sqrt(self.var)
            z = self._norm_mass_above_zero()
            body = (ndtr((x - self.mu0) / sd) - ndtr(-self.mu0 / sd)) / z
            out = np.where(x < 0, 0.0, body)
        else:
            out = ndtr(x / math.sqrt(self.var))
        return out if out.ndim else float(out)

    def mgf(self, phi: float) -> float:
        if self.kind == "exponential":
            if phi >= 1.0 / self.mean:
                raise ValueError(
                    f"exponential MGF diverges for phi >= {1.0 / self.mean:g}"
                )
            return 1.0 / (1.0 - phi * self.mean)
        if self.kind == "truncated-gaussian":
            sd = math.sqrt(self.var)
            num = ndtr((self.mu0 + self.var * phi) / sd)
            den = ndtr(self.mu0 / sd)
            return math.exp(self.mu0 * phi + 0.5 * self.var * phi**2) * num / den
        return math.exp(0.5 * self.var * phi**2)

    def moment(self, m: int) -> float:
        if m < 1:
            raise ValueError("moment order must be >= 1")
        if self.kind == "exponential":
            return math.factorial(m) * self.mean**m
        if self.kind == "gaussian":
            if m % 2 == 1:
                return 0.0
            # (m-1)!! * var^(m/2)
            return float(np.prod(np.arange(1, m, 2))) * self.var ** (m // 2)
        sd = math.sqrt(self.var)
        val, _ = integrate.quad(
            lambda x: x**m * self.pdf(x),
            0.0,
            max(self.mu0, 0.0) + (12.0 + m) * sd,
            epsrel=1e-8,
            limit=200,
        )
        return val


def exponential(mean: float) -> LimitDistribution:
    return LimitDistribution(kind="exponential", mean=mean)


def truncated_gaussian(mu0: float, var: float) -> LimitDistribution:
    return LimitDistribution(kind="truncated-gaussian", mu0=mu0, var=var)


def gaussian(var: float) -> LimitDistribution:
    return LimitDistribution(kind="gaussian", var=var)


def limit_for_regime(spec: RegimeSpec) -> tuple[LimitDistribution, LimitDistribution]:
    """(per-coordinate, scaled-total) limiting laws of the family."""
    sigma2, bar_sigma2 = limit_sigma2(spec)
    n = spec.n
    if spec.kind == "classic":
        return (
            exponential(sigma2 / (2.0 * n * spec.constant)),
            exponential(sigma2 / (2.0 * spec.constant)),
        )
    if spec.kind == "critical":
        return (
            truncated_gaussian(spec.constant / n, sigma2 / (2.0 * n**2)),
            truncated_gaussian(spec.constant, sigma2 / 2.0),
        )
    return (
        gaussian(bar_sigma2 / (2.0 * n**2)),
        gaussian(bar_sigma2 / 2.0),
    )


def critical_unused_limit(c_c: float, sigma2: float) -> float:
    """Limiting unused service per sqrt(gamma) slot in the critical family.

    Equals the reciprocal of the integral of
    exp(-s^2 sigma2 / 4 - c_c s) over s < 0, evaluated via the error
    function:

      integral = (sqrt(pi) / sigma) * exp(c_c^2 / sigma2) * (1 + erf(c_c / sigma)).
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    sigma = math.sqrt(sigma2)
    integral = (math.sqrt(math.pi) / sigma) * math.exp(c_c**2 / sigma2) * (1.0 + erf(c_c / sigma))
    return 1.0 / integral
