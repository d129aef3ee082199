"""One entry point that calibrates any of the three mechanism families and
reports its losses against the analytic Gaussian baseline."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence

from .analytic_gaussian import (
    GaussianMechanism,
    PrivacyParams,
    calibrate_analytic_gaussian,
    gaussian_l1_loss,
    gaussian_l2_loss,
)
from .multi_gaussian import (
    DEFAULT_ETA,
    DEFAULT_K_GRID,
    CalibrationHyper,
    MultiGaussianDist,
    mg_calibrate,
    mg_calibrate_grid,
    mg_l1_loss,
    mg_l2_loss,
    select_best_k,
)
from .quasi_gaussian import qg_calibrate_detail, qg_l1_loss, qg_l2_loss

MECHANISMS = ("analytic-gaussian", "multi-gaussian", "quasi-gaussian")
LOSSES = ("l1", "l2")


def improvement_pct(baseline: float, loss: float) -> float:
    """100 (a - m) / max(a, m); positive when the mechanism beats the baseline."""
    return 100.0 * (baseline - loss) / max(baseline, loss)


@dataclass(frozen=True)
class LossReport:
    l1: float
    l2: float
    baseline_l1: float
    baseline_l2: float

    @property
    def improvement_l1_pct(self) -> float:
        return improvement_pct(self.baseline_l1, self.l1)

    @property
    def improvement_l2_pct(self) -> float:
        return improvement_pct(self.baseline_l2, self.l2)

    def improvement(self, loss: str) -> float:
        return self.improvement_l1_pct if loss == "l1" else self.improvement_l2_pct


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of one calibration.

    A failed cell keeps mechanism and params, has NaN numeric fields and a
    nonempty reason.
    """

    mechanism: str
    params: PrivacyParams
    sigma: float
    chosen_k: Optional[int]
    eta: Optional[float]
    l1: float
    l2: float
    improvement_vs_baseline_pct: float
    verify_slack: Optional[float]
    wall_ms: float
    loss: str = "l1"
    reason: str = ""
    detail: Dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.reason

    def with_slack(self, slack: Optional[float]) -> "CalibrationResult":
        return replace(self, verify_slack=slack)


def baseline_losses(params: PrivacyParams):
    g = calibrate_analytic_gaussian(params)
    return gaussian_l1_loss(g), gaussian_l2_loss(g)


def failed_result(mechanism, params, reason, *, k=None, eta=None, loss="l1",
                  wall_ms=math.nan) -> CalibrationResult:
    nan = math.nan
    return CalibrationResult(mechanism, params, nan, k, eta, nan, nan, nan, None,
                             wall_ms, loss, reason or "calibration failed")


def _result(mechanism, params, sigma, k, eta, l1, l2, loss, wall_ms, detail=None):
    a1, a2 = baseline_losses(params)
    rep = LossReport(l1, l2, a1, a2)
    return CalibrationResult(mechanism, params, sigma, k, eta, l1, l2,
                             rep.improvement(loss), None, wall_ms, loss,
                             detail=detail or {})


def _quasi_branch(cal) -> str:
    if cal.dist.sigma > max(cal.sigma1, cal.sigma2):
        return "ratio"  # lifted past a non-monotone stretch of the ratio
    if cal.sigma1 == 0:
        return "sigma1=0"
    return "sigma1" if cal.sigma1 >= cal.sigma2 else "sigma2"


def multi_results_from_grid(params, candidates, eta, loss, wall_ms):
    """Best-K result from precomputed per-K calibrations."""
    dist, k, _ = select_best_k(candidates, loss)
    return _result("multi-gaussian", params, dist.sigma, k, eta,
                   mg_l1_loss(dist), mg_l2_loss(dist), loss, wall_ms)


def calibrate(
    mechanism: str,
    params: PrivacyParams,
    *,
    k: Optional[int] = None,
    eta: float = DEFAULT_ETA,
    k_grid: Sequence[int] = DEFAULT_K_GRID,
    loss: str = "l1",
) -> CalibrationResult:
    """Calibrates one mechanism family at params.

    Args:
      mechanism: one of MECHANISMS.
      params: target budget and sensitivity.
      k: fixed modality for the multi-Gaussian; None searches k_grid.
      eta: grid slack for the multi-Gaussian.
      k_grid: candidate modalities when k is None.
      loss: objective for K selection and the improvement metric.

    Returns:
      A CalibrationResult with verify_slack unset; see verifier.verify_calibrated.

    Raises:
      ValueError: unknown mechanism or loss.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; choose from {MECHANISMS}")
    if loss not in LOSSES:
        raise ValueError(f"loss must be 'l1' or 'l2', got {loss!r}")
    t0 = time.perf_counter()
    ms = lambda: 1e3 * (time.perf_counter() - t0)
    if mechanism == "analytic-gaussian":
        g: GaussianMechanism = calibrate_analytic_gaussian(params)
        return _result(mechanism, params, g.sigma, None, None,
                       gaussian_l1_loss(g), gaussian_l2_loss(g), loss, ms())
    if mechanism == "quasi-gaussian":
        cal = qg_calibrate_detail(params)
        d = cal.dist
        detail = {"sigma1": cal.sigma1, "sigma2": cal.sigma2,
                  "branch": _quasi_branch(cal)}
        return _result(mechanism, params, d.sigma, None, None,
                       qg_l1_loss(d), qg_l2_loss(d), loss, ms(), detail)
    if k is not None:
        dist: MultiGaussianDist = mg_calibrate(params, int(k), eta)
        return _result(mechanism, params, dist.sigma, int(k), eta,
                       mg_l1_loss(dist), mg_l2_loss(dist), loss, ms())
    cands = mg_calibrate_grid(params, CalibrationHyper(eta, tuple(k_grid)))
    return multi_results_from_grid(params, cands, eta, loss, ms())
