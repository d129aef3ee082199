"""Multi-Gaussian mixture mechanism.

2K+1 Gaussians with common scale sigma, centred at k*sensitivity for
k = -K..K and weighted proportionally to exp(-|k| eps).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import special

from . import kernels
from .analytic_gaussian import PrivacyParams, calibrate_analytic_gaussian
from .numerics import BracketError, ConvergenceError, Tolerance, bisect, grid_argmin

# The calibrated sigma must clear the shortfall test by this much.
PSI_MARGIN = 1e-10
DEFAULT_ETA = 0.01
DEFAULT_K_GRID = tuple(range(1, 21))


class CalibrationError(RuntimeError):
    """Calibration could not produce a feasible sigma."""


@dataclass(frozen=True)
class MultiGaussianDist:
    params: PrivacyParams
    sigma: float
    modality: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.modality < 0 or int(self.modality) != self.modality:
            raise ValueError(f"modality must be a nonnegative integer, got {self.modality}")

    @cached_property
    def ks(self) -> np.ndarray:
        return np.arange(-self.modality, self.modality + 1)

    @cached_property
    def raw_weights(self) -> np.ndarray:
        return np.exp(-np.abs(self.ks) * self.params.epsilon)

    @cached_property
    def weights(self) -> np.ndarray:
        w = self.raw_weights
        return w / w.sum()

    @cached_property
    def norm_const(self) -> float:
        return math.sqrt(2 * math.pi) * self.sigma * float(self.raw_weights.sum())


@dataclass(frozen=True)
class CalibrationHyper:
    eta: float = DEFAULT_ETA
    k_grid: Tuple[int, ...] = field(default=DEFAULT_K_GRID)

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError(f"eta must lie in (0, 1), got {self.eta}")
        grid = tuple(int(k) for k in self.k_grid)
        if not grid or min(grid) < 0:
            raise ValueError("k_grid must be nonempty with entries >= 0")
        object.__setattr__(self, "k_grid", grid)


class ShortfallResult(NamedTuple):
    psi: float
    worst_phi: float
    grid_steps: int
    evaluated: int


def mg_pdf(dist: MultiGaussianDist, x):
    x = np.asarray(x, dtype=float)
    centres = dist.ks * dist.params.sensitivity
    z = (x[..., None] - centres) / dist.sigma
    out = np.exp(-0.5 * z * z) @ dist.raw_weights / dist.norm_const
    return float(out) if out.ndim == 0 else out


def mg_cdf(dist: MultiGaussianDist, x):
    """Mixture cdf; the right half is taken as 1 - F(-x) to keep tail precision."""
    x = np.asarray(x, dtype=float)
    centres = dist.ks * dist.params.sensitivity
    left = -np.abs(x)
    lower = special.ndtr((left[..., None] - centres) / dist.sigma) @ dist.weights
    out = np.where(x > 0, 1.0 - lower, lower)
    out = np.where(x == 0, 0.5, out)  # exact by symmetry
    return float(out) if out.ndim == 0 else out


def mg_sample(dist: MultiGaussianDist, rng: np.random.Generator, size=None):
    """Picks a component by weight, then draws from that Gaussian."""
    k = rng.choice(dist.ks, size=size, p=dist.weights)
    return k * dist.params.sensitivity + dist.sigma * rng.standard_normal(size)


def mg_l1_loss(dist: MultiGaussianDist) -> float:
    s, d = dist.sigma, dist.params.sensitivity
    k = dist.ks.astype(float)
    terms = (2 * s * s * np.exp(-(k * d) ** 2 / (2 * s * s))
             + k * d * math.sqrt(2 * math.pi) * s
             * (1 - 2 * special.ndtr(-k * d / s)))
    return float(dist.raw_weights @ terms / dist.norm_const)


def mg_l2_loss(dist: MultiGaussianDist) -> float:
    k = dist.ks.astype(float)
    second = dist.sigma ** 2 + (k * dist.params.sensitivity) ** 2
    return float(dist.raw_weights @ second / dist.raw_weights.sum())


def mg_zcdp_rho(dist: MultiGaussianDist) -> float:
    return dist.params.sensitivity ** 2 / (2 * dist.sigma ** 2)


def grid_steps(lam: float, eta: float, delta: float) -> int:
    """Number of steps of the shift grid on [0, 1] at unit sensitivity."""
    return int(math.ceil(1.0 / (math.sqrt(2 * math.pi) * eta * lam * delta)))


def _shortfall_unit(eps, delta, lam, K, eta, coarse):
    n = grid_steps(lam, eta, delta)
    evaluate = lambda idx: kernels.shortfall_curve(eps, lam, K, idx / n)
    i, v, evaluated = grid_argmin(evaluate, n, coarse=coarse)
    return ShortfallResult(v + (1 - eta) * delta, i / n, n, evaluated)


def mg_shortfall_detail(
    dist: MultiGaussianDist, eta: float = DEFAULT_ETA, coarse: int = 128
) -> ShortfallResult:
    """Worst-case slack over the shift grid, with the minimizing shift."""
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    p = dist.params
    res = _shortfall_unit(p.epsilon, p.delta, dist.sigma / p.sensitivity,
                          dist.modality, eta, coarse)
    return res._replace(worst_phi=res.worst_phi * p.sensitivity)


def mg_shortfall(dist: MultiGaussianDist, eta: float = DEFAULT_ETA) -> float:
    """min over the shift grid of the shortfall integral, plus (1 - eta) delta."""
    return mg_shortfall_detail(dist, eta).psi


def mg_calibrate(
    params: PrivacyParams,
    K: int,
    eta: float = DEFAULT_ETA,
    *,
    coarse: int = 128,
    method: str = "bisection",
    guess: Optional[float] = None,
) -> MultiGaussianDist:
    """Smallest sigma whose shortfall clears PSI_MARGIN, searched below the
    analytic Gaussian sigma at delta' = (1 - eta) delta.

    Args:
      guess: optional sigma near the answer (e.g. from a neighbouring K);
        it only narrows the initial bracket, never the result.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    eps, delta = params.epsilon, params.delta
    hi = calibrate_analytic_gaussian(params.unit().with_delta((1 - eta) * delta)).sigma
    hints = []

    def f(lam):
        # One grid point below the margin already proves infeasibility, so
        # the shifts that were worst at earlier iterates are tried first.
        n = grid_steps(lam, eta, delta)
        if hints:
            idx = np.unique(np.clip(np.round(np.array(hints) * n), 0, n))
            s, _ = kernels.shortfall_curve(eps, lam, K, idx / n)
            v = float(s.min()) + (1 - eta) * delta - PSI_MARGIN
            if v < 0:
                return v
        res = _shortfall_unit(eps, delta, lam, K, eta, coarse)
        if res.worst_phi not in hints:
            hints.append(res.worst_phi)
            del hints[:-4]
        return res.psi - PSI_MARGIN

    fhi = f(hi)
    if fhi < 0:
        if fhi + PSI_MARGIN < -1e-9:
            raise CalibrationError(
                f"analytic Gaussian sigma {hi} fails the shortfall test "
                f"(psi={fhi + PSI_MARGIN:.3e}) at eps={eps}, delta={delta}, K={K}")
        # sigma_g is feasible by theory; a psi below the margin here is
        # rounding, so the bracket top is kept as the feasible end.
        fhi = 0.0

    lo = None
    if guess is not None and 0 < guess / params.sensitivity < hi:
        g = guess / params.sensitivity
        g_hi, g_lo = min(hi, 1.01 * g), 0.99 * g
        f_ghi = f(g_hi) if g_hi < hi else fhi
        if f_ghi >= 0:
            hi, fhi = g_hi, f_ghi
            f_glo = f(g_lo)
            if f_glo < 0:
                lo, flo = g_lo, f_glo
    if lo is None:
        lo = 1e-3 * hi
        flo = f(lo)
        while flo >= 0:
            if lo < 1e-12:
                return MultiGaussianDist(params, lo * params.sensitivity, K)
            lo *= 1e-2
            flo = f(lo)

    # The result is the feasible end of the bracket, so this tolerance only
    # affects optimality, by at most a relative 1e-10.
    tol = Tolerance(abs_x=1e-10 * hi, max_iter=200)
    lam = bisect(f, lo, hi, tol, feasible="hi", method=method, f_lo=flo, f_hi=fhi)
    return MultiGaussianDist(params, lam * params.sensitivity, K)


_LOSSES = {"l1": mg_l1_loss, "l2": mg_l2_loss}


def mg_calibrate_grid(
    params: PrivacyParams, hyper: CalibrationHyper = CalibrationHyper()
) -> Dict[int, Union[MultiGaussianDist, Exception]]:
    """Calibrates every K in the grid; failures are kept as the exception."""
    out: Dict[int, Union[MultiGaussianDist, Exception]] = {}
    guess = None
    for K in sorted(set(hyper.k_grid)):
        try:
            out[K] = mg_calibrate(params, K, hyper.eta, guess=guess)
            guess = out[K].sigma
        except (CalibrationError, BracketError, ConvergenceError) as exc:
            out[K] = exc
    return out


def select_best_k(
    candidates: Dict[int, Union[MultiGaussianDist, Exception]], loss: str = "l1"
) -> Tuple[MultiGaussianDist, int, float]:
    """Lowest-loss entry of mg_calibrate_grid output; ties go to the smaller
    K and failed K are skipped with a warning.

    Raises:
      CalibrationError: every K failed.
    """
    if loss not in _LOSSES:
        raise ValueError(f"loss must be 'l1' or 'l2', got {loss!r}")
    loss_fn = _LOSSES[loss]
    best: Optional[Tuple[MultiGaussianDist, int, float]] = None
    for K in sorted(candidates):
        dist = candidates[K]
        if isinstance(dist, Exception):
            warnings.warn(f"K={K} skipped: {dist}")
            continue
        value = loss_fn(dist)
        if best is None or value < best[2]:
            best = (dist, K, value)
    if best is None:
        raise CalibrationError(f"no K in {sorted(candidates)} could be calibrated")
    return best


def mg_calibrate_best_k(
    params: PrivacyParams,
    hyper: CalibrationHyper = CalibrationHyper(),
    loss: str = "l1",
) -> Tuple[MultiGaussianDist, int, float]:
    """Calibrates every K in the grid and keeps the lowest-loss one."""
    if loss not in _LOSSES:
        raise ValueError(f"loss must be 'l1' or 'l2', got {loss!r}")
    return select_best_k(mg_calibrate_grid(params, hyper), loss)
