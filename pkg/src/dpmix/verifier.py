"""Independent numerical (eps, delta)-DP check for symmetric additive noise.

For a symmetric density f, the mechanism is (eps, delta)-DP for shifts up
to D iff for every phi in [0, D]

    integral of min(e^eps f(x) - f(x + phi), 0) dx >= -delta.

The verifier evaluates this integral by adaptive Gauss-Kronrod quadrature
on a uniform shift grid. It shares no code with the calibration kernels
beyond the quadrature and grid-search helpers. A pass is a grid
certificate: the condition holds at every grid shift, not on the continuum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from .analytic_gaussian import PrivacyParams
from .numerics import QuadratureError, Tolerance, adaptive_quad, grid_argmin

DEFAULT_SLACK_MARGIN = -1e-9
DEFAULT_ETA = 0.01
LABEL = "grid certificate"


@dataclass(frozen=True)
class VerifierConfig:
    """Grid and accuracy policy.

    Attributes:
      phi_grid_size: number of shifts on [0, D], both ends included.
      quad_tol: relative quadrature tolerance. The absolute error target
        per integral is min(quad_tol * delta, 1e-11), well inside the
        default slack margin.
      slack_margin: required minimum of worst_slack - quad_err_bound.
      feature_scale: smallest length scale of the density (e.g. sigma); the
        quadrature starts from pieces of twice this width so no narrow
        bump hides between Kronrod nodes. None starts from 64 pieces.
      coarse: coarse shift-grid size for large grids.
    """

    phi_grid_size: int
    quad_tol: float = 1e-6
    slack_margin: float = DEFAULT_SLACK_MARGIN
    feature_scale: Optional[float] = None
    coarse: int = 64

    def __post_init__(self):
        if self.phi_grid_size < 2:
            raise ValueError("phi_grid_size must be at least 2")
        if not self.quad_tol > 0:
            raise ValueError("quad_tol must be positive")


class VerificationReport(NamedTuple):
    worst_phi: float
    worst_slack: float
    passed: bool
    quad_err_bound: float
    phi_grid_size: int
    evaluated: int
    label: str = LABEL

    def to_dict(self):
        return self._asdict()


def shortfall_integral(pdf, support_radius, epsilon, phi, delta,
                       quad_tol=1e-6, feature_scale=None):
    """(integral of min(e^eps f(x) - f(x + phi), 0), error estimate)."""
    if phi == 0:
        return 0.0, 0.0
    ee = math.exp(epsilon)
    integrand = lambda x: np.minimum(ee * pdf(x) - pdf(x + phi), 0.0)
    # Outside [-R - |phi|, R + |phi|] both densities are negligible.
    a = -support_radius - abs(phi)
    b = support_radius + abs(phi)
    if feature_scale is None:
        pieces = 64
    else:
        pieces = max(8, int(math.ceil((b - a) / (2.0 * feature_scale))))
    tol = Tolerance(rel_f=quad_tol, abs_f=min(quad_tol * delta, 1e-11), max_iter=200)
    return adaptive_quad(integrand, a, b, tol, initial_pieces=pieces)


def verify_dp(
    pdf: Callable[[np.ndarray], np.ndarray],
    support_radius: float,
    params: PrivacyParams,
    cfg: VerifierConfig,
) -> VerificationReport:
    """Minimum DP slack over a uniform grid of shifts in [0, D].

    Args:
      pdf: vectorized symmetric density.
      support_radius: the density is negligible outside [-R, R].
      params: target (eps, delta) and the sensitivity D.
      cfg: grid and tolerance policy.

    Raises:
      QuadratureError: an integral failed to converge; the message names
        the offending shift.
    """
    d = params.sensitivity
    n = cfg.phi_grid_size - 1
    errs = {}

    def evaluate(idx):
        vals = np.empty(idx.size)
        for j, i in enumerate(idx):
            phi = d * i / n
            try:
                v, e = shortfall_integral(pdf, support_radius, params.epsilon, phi,
                                          params.delta, cfg.quad_tol, cfg.feature_scale)
            except QuadratureError as exc:
                raise QuadratureError(f"at phi={phi!r}: {exc}") from exc
            vals[j] = v
            errs[int(i)] = e
        return vals, None

    i, v, evaluated = grid_argmin(evaluate, n, coarse=cfg.coarse)
    slack = v + params.delta
    err = max(errs.values())
    return VerificationReport(
        worst_phi=d * i / n,
        worst_slack=slack,
        passed=bool(slack - err >= cfg.slack_margin),
        quad_err_bound=err,
        phi_grid_size=cfg.phi_grid_size,
        evaluated=evaluated,
    )


def grid_size_for(params: PrivacyParams, sigma: float, eta: float) -> int:
    """Points on [0, D] at spacing at most sqrt(2 pi) eta sigma delta."""
    steps = math.ceil(params.sensitivity / (math.sqrt(2 * math.pi) * eta * sigma * params.delta))
    return int(steps) + 1


def mechanism_density(mechanism: str, params: PrivacyParams, sigma: float, k=None):
    """(pdf, support_radius) for a mechanism family at scale sigma."""
    from .multi_gaussian import MultiGaussianDist, mg_pdf
    from .quasi_gaussian import QuasiGaussianDist, qg_pdf

    d = params.sensitivity
    if mechanism == "analytic-gaussian":
        c = 1.0 / (math.sqrt(2 * math.pi) * sigma)
        return (lambda x: c * np.exp(-0.5 * (x / sigma) ** 2)), 12 * sigma + d
    if mechanism == "multi-gaussian":
        if k is None:
            raise ValueError("multi-gaussian needs K")
        dist = MultiGaussianDist(params, sigma, int(k))
        return (lambda x: mg_pdf(dist, x)), int(k) * d + 12 * sigma + d
    if mechanism == "quasi-gaussian":
        dist = QuasiGaussianDist(params, sigma)
        return (lambda x: qg_pdf(dist, x)), 12 * sigma + 2 * d
    raise ValueError(f"unknown mechanism {mechanism!r}")


def verify_mechanism(mechanism, params, sigma, k=None, eta=DEFAULT_ETA,
                     refine_factor=2.0, quad_tol=1e-6,
                     slack_margin=DEFAULT_SLACK_MARGIN) -> VerificationReport:
    if refine_factor < 1:
        raise ValueError("refine_factor must be >= 1")
    pdf, radius = mechanism_density(mechanism, params, sigma, k)
    cfg = VerifierConfig(
        phi_grid_size=grid_size_for(params, sigma, eta / refine_factor),
        quad_tol=quad_tol,
        slack_margin=slack_margin,
        feature_scale=sigma,
    )
    return verify_dp(pdf, radius, params, cfg)


def verify_calibrated(result, refine_factor: float = 2.0) -> VerificationReport:
    """Re-verifies a calibration result on a grid refine_factor times finer
    than the calibration grid (eta = 0.01 for families without eta)."""
    eta = getattr(result, "eta", None) or DEFAULT_ETA
    return verify_mechanism(result.mechanism, result.params, result.sigma,
                            k=getattr(result, "chosen_k", None), eta=eta,
                            refine_factor=refine_factor)
