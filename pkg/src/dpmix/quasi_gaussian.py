"""Quasi-Gaussian mixture mechanism.

Density proportional to e^eps exp(-x^2/(2 s^2)) + exp(-(|x| - D)^2/(2 s^2)):
a central Gaussian plus a symmetric pair of half-Gaussians pinned at +-D.
It has no tuning knobs; sigma = max(sigma1, sigma2) where sigma1 solves the
tail condition psi1 = 0 and sigma2 makes max f / min f on [0, D] equal e^eps.

For eps below about 0.25 the ratio is not monotone in sigma: it rises again
near sigma = D/2 and, for eps in roughly [0.107, 0.16], crosses e^eps three
times. max(sigma1, sigma2) can then land where the ratio condition fails, so
calibration moves up to the next sigma that satisfies it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import special

from .analytic_gaussian import PrivacyParams
from .numerics import BracketError, Tolerance, bisect, golden_section_opt

_SQRT2PI = math.sqrt(2 * math.pi)


class QuasiCalibrationError(RuntimeError):
    """A bracket that the theory guarantees turned out not to bracket."""


@dataclass(frozen=True)
class QuasiGaussianDist:
    params: PrivacyParams
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    @cached_property
    def _phi_ratio(self) -> float:
        return float(special.ndtr(self.params.sensitivity / self.sigma))

    @cached_property
    def central_prob(self) -> float:
        """e^eps / (e^eps + 2 Phi(D/s)), written to avoid overflowing e^eps."""
        return 1.0 / (1.0 + 2.0 * self._phi_ratio * math.exp(-self.params.epsilon))

    @cached_property
    def side_prob(self) -> float:
        """1 - central_prob, computed directly; the difference underflows
        for large eps."""
        t = 2.0 * self._phi_ratio * math.exp(-self.params.epsilon)
        return t / (1.0 + t)

    @cached_property
    def norm_const(self) -> float:
        return _SQRT2PI * self.sigma * (math.exp(self.params.epsilon) + 2 * self._phi_ratio)


class MaxMinResult(NamedTuple):
    """Extremes of the density on [0, D].

    log_f_max and log_f_min carry the same information as f_max and f_min
    but stay finite when sigma is so small that the density underflows.
    """

    x_max: float
    f_max: float
    x_min: float
    f_min: float
    case_tag: str
    log_f_max: float
    log_f_min: float


class QuasiCalibration(NamedTuple):
    dist: QuasiGaussianDist
    sigma1: float
    sigma2: float


def qg_pdf(dist: QuasiGaussianDist, x):
    x = np.asarray(x, dtype=float)
    s, d = dist.sigma, dist.params.sensitivity
    p0 = dist.central_prob
    side = dist.side_prob / (2.0 * dist._phi_ratio)
    out = (p0 * np.exp(-0.5 * (x / s) ** 2)
           + side * np.exp(-0.5 * ((np.abs(x) - d) / s) ** 2)) / (_SQRT2PI * s)
    return float(out) if out.ndim == 0 else out


def qg_cdf(dist: QuasiGaussianDist, x):
    """Two-branch closed form, split at 0; numerator and denominator are
    scaled by e^-eps."""
    x = np.asarray(x, dtype=float)
    s, d = dist.sigma, dist.params.sensitivity
    em = math.exp(-dist.params.epsilon)
    ndtr = special.ndtr
    denom = 1.0 + 2.0 * em * ndtr(d / s)
    neg = (ndtr(x / s) + em * ndtr((x + d) / s)) / denom
    pos = (ndtr(x / s) + em * (ndtr((x - d) / s) + ndtr(d / s) - ndtr(-d / s))) / denom
    out = np.where(x < 0, neg, pos)
    return float(out) if out.ndim == 0 else out


def qg_sample(dist: QuasiGaussianDist, rng: np.random.Generator, size=None):
    """Central Gaussian with probability e^eps/(e^eps + 2 Phi(D/s)); otherwise
    an inverse-cdf draw from the half-Gaussian at D with a random sign."""
    s, d = dist.sigma, dist.params.sensitivity
    central = rng.random(size) >= dist.side_prob
    z = rng.standard_normal(size)
    p = rng.random(size)
    sign = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    u = special.ndtr(-d / s) + p * special.ndtr(d / s)
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    side = sign * (d + s * special.ndtri(u))
    out = np.where(central, s * z, side)
    return float(out) if np.ndim(out) == 0 else out


def qg_l1_loss(dist: QuasiGaussianDist) -> float:
    s, d, eps = dist.sigma, dist.params.sensitivity, dist.params.epsilon
    em = math.exp(-eps)
    ph = dist._phi_ratio
    num = math.sqrt(2 / math.pi) * s * (1.0 + math.exp(-eps - d * d / (2 * s * s))) + 2 * d * ph * em
    return num / (1.0 + 2.0 * ph * em)


def qg_l2_loss(dist: QuasiGaussianDist) -> float:
    s, d, eps = dist.sigma, dist.params.sensitivity, dist.params.epsilon
    em = math.exp(-eps)
    ph = dist._phi_ratio
    side = ph * (s * s + d * d) + s * d / _SQRT2PI * math.exp(-d * d / (2 * s * s))
    return (s * s + 2.0 * em * side) / (1.0 + 2.0 * ph * em)


def qg_psi1(params: PrivacyParams, sigma: float) -> float:
    """Tail condition; sigma is feasible for it when the value is >= 0."""
    eps, delta = params.epsilon, params.delta
    r = sigma / params.sensitivity
    h1 = (math.exp(2 * eps + special.log_ndtr(-eps * r - 1 / r))
          - special.ndtr(-eps * r + 1 / r))
    h2 = (math.exp(eps) + 2 * special.ndtr(1 / r)) * delta
    return float(h1 + h2)


def _psi1_region_end(eps: float, delta: float) -> float:
    return math.sqrt(2 * (eps - math.log(delta))) / eps


def qg_sigma1(params: PrivacyParams) -> float:
    eps, delta = params.epsilon, params.delta
    if math.exp(eps) + 2 >= 1 / delta:
        return 0.0
    unit = params.unit()
    f = lambda r: qg_psi1(unit, r)
    lo, hi = 1e-10, _psi1_region_end(eps, delta)
    f_lo = (math.exp(eps) + 2) * delta - 1  # sigma -> 0 limit
    f_hi = f(hi)
    if f_hi < 0:
        raise QuasiCalibrationError(
            f"psi1 negative at the end of its monotone region (eps={eps}, delta={delta})")
    tol = Tolerance(abs_x=1e-12 * max(1.0, hi), max_iter=200)
    r = bisect(f, lo, hi, tol, feasible="hi", method="illinois", f_lo=f_lo, f_hi=f_hi)
    return r * params.sensitivity


def _log_density_unit(eps: float, r: float):
    """Unnormalized log density on [0, 1] at unit sensitivity."""
    inv = 0.5 / (r * r)
    return lambda x: float(np.logaddexp(eps - x * x * inv, -(x - 1) ** 2 * inv))


def _max_min_unit(eps: float, r: float):
    g = _log_density_unit(eps, r)
    inset = 1e-12
    disc = 1.0 - 4.0 * r * r
    if disc <= 0:
        x_max, g_max = golden_section_opt(g, inset, 0.5 - inset, maximize=True)
        return x_max, g_max, 1.0, g(1.0), "i"
    root = math.sqrt(disc)
    x1 = 2 * r * r / (1 + root)  # (1 - root)/2 without cancellation
    x2 = 0.5 * (1 + root)
    edge = min(inset, 0.25 * x1)
    x_max, g_max = golden_section_opt(g, edge, x1 - edge, maximize=True)
    # t = -e^eps + ((1 - x2)/x2) exp((2 x2 - 1)/(2 r^2)), compared in logs.
    # 1 - x2 equals x1; using x1 keeps the sign right when x2 rounds to 1.
    t_positive = math.log(x1 / x2) + (2 * x2 - 1) / (2 * r * r) > eps
    if not t_positive:
        return x_max, g_max, 1.0, g(1.0), "ii"
    x_tmp, g_tmp = golden_section_opt(g, 0.5 + inset, x2 - inset, maximize=False)
    g_end = g(1.0)
    if g_tmp < g_end:
        return x_max, g_max, x_tmp, g_tmp, "iii"
    return x_max, g_max, 1.0, g_end, "iii"


def qg_max_min(params: PrivacyParams, sigma: float) -> MaxMinResult:
    d = params.sensitivity
    eps = params.epsilon
    r = sigma / d
    x_max, g_max, x_min, g_min, tag = _max_min_unit(eps, r)
    # log c at unit sensitivity, then back to query units (density scales by 1/d).
    log_c = (math.log(_SQRT2PI * r) + eps
             + math.log1p(2 * special.ndtr(1 / r) * math.exp(-eps)) + math.log(d))
    lmax, lmin = g_max - log_c, g_min - log_c
    return MaxMinResult(x_max * d, math.exp(lmax), x_min * d, math.exp(lmin),
                        tag, lmax, lmin)


def qg_ratio(params: PrivacyParams, sigma: float) -> float:
    """max f / min f on [0, D]; may be inf when sigma is tiny."""
    _, g_max, _, g_min, _ = _max_min_unit(params.epsilon, sigma / params.sensitivity)
    with np.errstate(over="ignore"):
        return float(np.exp(g_max - g_min))


def qg_psi2(params: PrivacyParams, sigma: float) -> float:
    """Ratio condition; sigma is feasible for it when the value is <= 0."""
    return qg_ratio(params, sigma) - math.exp(params.epsilon)


def qg_sigma2(params: PrivacyParams) -> float:
    eps = params.epsilon

    def f(r):
        _, g_max, _, g_min, _ = _max_min_unit(eps, r)
        return (g_max - g_min) - eps

    lo, hi = 1e-10, 1.0 / math.sqrt(2 * eps)
    f_hi = f(hi)
    if f_hi > 1e-12:
        raise QuasiCalibrationError(
            f"ratio exceeds e^eps at sigma = D/sqrt(2 eps) (eps={eps}, excess {f_hi:.3g})")
    if f_hi > 0:  # equality up to rounding at the right end
        return hi * params.sensitivity
    tol = Tolerance(abs_x=1e-12 * max(1.0, hi), max_iter=200)
    try:
        r = bisect(f, lo, hi, tol, feasible="hi", method="illinois", f_hi=f_hi)
    except BracketError as exc:
        raise QuasiCalibrationError(str(exc)) from exc
    return r * params.sensitivity


_RATIO_SCAN = 64


def _ratio_feasible_from(eps: float, r0: float) -> float:
    """Smallest r >= r0 (resolved on a geometric scan) with max/min <= e^eps.

    Every r >= 1/sqrt(2 eps) qualifies, so the scan stops there.
    """
    right = 1.0 / math.sqrt(2 * eps)

    def f(r):
        _, g_max, _, g_min, _ = _max_min_unit(eps, r)
        return (g_max - g_min) - eps

    if r0 >= right or f(r0) <= 0:
        return r0
    prev, f_prev = r0, f(r0)
    for r in np.geomspace(r0, right, _RATIO_SCAN)[1:]:
        fr = f(r)
        if fr <= 0:
            tol = Tolerance(abs_x=1e-12 * max(1.0, r), max_iter=200)
            return bisect(f, prev, r, tol, feasible="hi", method="illinois",
                          f_lo=f_prev, f_hi=fr)
        prev, f_prev = r, fr
    return right


def qg_calibrate_detail(params: PrivacyParams) -> QuasiCalibration:
    s1 = qg_sigma1(params)
    s2 = qg_sigma2(params)
    d = params.sensitivity
    sigma = _ratio_feasible_from(params.epsilon, max(s1, s2) / d) * d
    return QuasiCalibration(QuasiGaussianDist(params, sigma), s1, s2)


def qg_calibrate(params: PrivacyParams) -> QuasiGaussianDist:
    return qg_calibrate_detail(params).dist
