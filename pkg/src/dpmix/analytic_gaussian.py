"""Analytic Gaussian mechanism: the smallest Gaussian sigma meeting (eps, delta)-DP.

The calibration solves

    delta = Phi(D/(2s) - eps*s/D) - exp(eps) * Phi(-D/(2s) - eps*s/D)

for s. The right-hand side is strictly decreasing in s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .numerics import BracketError, Tolerance, bisect


@dataclass(frozen=True)
class PrivacyParams:
    """Target privacy level and query sensitivity."""

    epsilon: float
    delta: float
    sensitivity: float = 1.0

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not (self.sensitivity > 0 and math.isfinite(self.sensitivity)):
            raise ValueError(
                f"sensitivity must be positive, got {self.sensitivity}")

    def with_delta(self, delta: float) -> "PrivacyParams":
        return PrivacyParams(self.epsilon, delta, self.sensitivity)

    def unit(self) -> "PrivacyParams":
        """Same privacy level at sensitivity 1."""
        return PrivacyParams(self.epsilon, self.delta, 1.0)


@dataclass(frozen=True)
class GaussianMechanism:
    params: PrivacyParams
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def gaussian_delta(epsilon: float, ratio: float) -> float:
    """Tightest delta of a Gaussian with sigma/sensitivity = ratio.

    The exp(eps) * Phi(b) term is formed in log space so large epsilon
    does not overflow.
    """
    a = 0.5 / ratio - epsilon * ratio
    b = -0.5 / ratio - epsilon * ratio
    return float(special.ndtr(a) - math.exp(epsilon + special.log_ndtr(b)))


def calibration_residual(params: PrivacyParams, sigma: float) -> float:
    """delta(sigma) - target delta; negative means sigma is feasible."""
    return gaussian_delta(params.epsilon, sigma / params.sensitivity) - params.delta


def _classical_ratio(epsilon: float, delta: float) -> float:
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def calibrate_analytic_gaussian(
    params: PrivacyParams, tol_scale: float = 1e-12
) -> GaussianMechanism:
    """Smallest sigma for which the Gaussian mechanism is (eps, delta)-DP.

    Works at unit sensitivity and rescales. The bracket starts at 1e-10 and
    at the classical sigma, which is doubled until the residual turns
    nonpositive. The larger end of the final bracket is returned.

    Raises:
      BracketError: no finite upper end found (delta pathologically near 1).
    """
    eps, delta = params.epsilon, params.delta
    f = lambda r: gaussian_delta(eps, r) - delta
    lo = 1e-10
    hi = _classical_ratio(eps, delta)
    fhi = f(hi)
    for _ in range(200):
        if fhi <= 0:
            break
        lo, hi = hi, 2.0 * hi
        fhi = f(hi)
    else:
        raise BracketError(
            f"no feasible sigma found for epsilon={eps}, delta={delta}")
    tol = Tolerance(abs_x=tol_scale * max(1.0, hi), max_iter=200)
    ratio = bisect(f, lo, hi, tol, feasible="hi", method="illinois", f_hi=fhi)
    return GaussianMechanism(params, ratio * params.sensitivity)


def gaussian_l1_loss(mech: GaussianMechanism) -> float:
    return mech.sigma * math.sqrt(2.0 / math.pi)


def gaussian_l2_loss(mech: GaussianMechanism) -> float:
    return mech.sigma ** 2


def gaussian_zcdp_rho(mech: GaussianMechanism) -> float:
    return mech.params.sensitivity ** 2 / (2.0 * mech.sigma ** 2)
