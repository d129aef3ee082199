import math

import pytest

from dpmix.analytic_gaussian import PrivacyParams, calibrate_analytic_gaussian, gaussian_l1_loss
from dpmix.calibration import (
    LossReport,
    baseline_losses,
    calibrate,
    failed_result,
    improvement_pct,
)
from dpmix.multi_gaussian import MultiGaussianDist, mg_l1_loss

P = PrivacyParams(1.0, 0.1)


def test_improvement_identity():
    assert improvement_pct(2.0, 1.0) == 50.0
    assert improvement_pct(1.0, 2.0) == -50.0
    assert improvement_pct(1.0, 1.0) == 0.0


def test_loss_report():
    r = LossReport(1.0, 4.0, 2.0, 2.0)
    assert r.improvement("l1") == 50.0 and r.improvement("l2") == -50.0


def test_analytic_has_zero_improvement():
    r = calibrate("analytic-gaussian", P)
    assert r.ok and r.improvement_vs_baseline_pct == 0.0
    assert r.sigma == calibrate_analytic_gaussian(P).sigma
    assert r.chosen_k is None


def test_fixed_k():
    r = calibrate("multi-gaussian", P, k=2)
    assert r.chosen_k == 2 and r.eta == 0.01
    a = gaussian_l1_loss(calibrate_analytic_gaussian(P))
    m = mg_l1_loss(MultiGaussianDist(P, r.sigma, 2))
    assert r.improvement_vs_baseline_pct == pytest.approx(100 * (a - m) / a, rel=1e-12)


def test_small_k_grid_picks_best():
    r = calibrate("multi-gaussian", P, k_grid=(1, 2, 3))
    assert r.chosen_k == 2
    assert r.improvement_vs_baseline_pct == pytest.approx(13.13, abs=0.01)


def test_quasi_detail():
    r = calibrate("quasi-gaussian", P)
    assert r.detail["branch"] in ("sigma1=0", "sigma1", "sigma2")
    assert r.sigma == max(r.detail["sigma1"], r.detail["sigma2"])
    assert r.improvement_vs_baseline_pct == pytest.approx(-3.32, abs=0.005)


def test_l2_objective():
    r = calibrate("analytic-gaussian", P, loss="l2")
    assert r.loss == "l2" and r.l2 == pytest.approx(r.sigma ** 2)


@pytest.mark.parametrize("kw", [{"mechanism": "laplace"}, {"loss": "linf"}])
def test_bad_arguments(kw):
    args = {"mechanism": "analytic-gaussian", **kw}
    mech = args.pop("mechanism")
    with pytest.raises(ValueError):
        calibrate(mech, P, **args)


def test_failed_result():
    r = failed_result("multi-gaussian", P, "no bracket")
    assert not r.ok and math.isnan(r.sigma) and r.reason == "no bracket"


def test_slack_attach():
    r = calibrate("analytic-gaussian", P).with_slack(0.01)
    assert r.verify_slack == 0.01


def test_baseline_losses():
    l1, l2 = baseline_losses(P)
    assert l2 == pytest.approx(math.pi / 2 * l1 ** 2, rel=1e-14)
