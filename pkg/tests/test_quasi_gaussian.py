import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dpmix.analytic_gaussian import PrivacyParams, calibrate_analytic_gaussian, gaussian_l1_loss
from dpmix.calibration import calibrate
from dpmix.numerics import adaptive_quad
from dpmix.quasi_gaussian import (
    QuasiGaussianDist,
    _psi1_region_end,
    qg_calibrate,
    qg_calibrate_detail,
    qg_cdf,
    qg_l1_loss,
    qg_l2_loss,
    qg_max_min,
    qg_pdf,
    qg_psi1,
    qg_psi2,
    qg_ratio,
    qg_sample,
    qg_sigma1,
    qg_sigma2,
)
from dpmix.verifier import verify_mechanism


def qd(eps=1.0, sigma=0.25, delta=0.1, sens=1.0):
    return QuasiGaussianDist(PrivacyParams(eps, delta, sens), sigma)


def _quad_moment(d, fn):
    s, D = d.sigma, d.params.sensitivity
    R = D + 40 * s
    pieces = max(8, int(2 * R / s))
    v, _ = adaptive_quad(lambda x: fn(x) * qg_pdf(d, x), -R, R,
                         breakpoints=[-D, 0.0, D], initial_pieces=pieces)
    return v


class TestDist:
    def test_invalid_sigma(self):
        with pytest.raises(ValueError):
            qd(sigma=0.0)

    def test_norm_const(self):
        d = qd(eps=1.0, sigma=0.5)
        expected = math.sqrt(2 * math.pi) * 0.5 * (math.e + 2 * stats.norm.cdf(2.0))
        assert d.norm_const == pytest.approx(expected, rel=1e-15)

    def test_side_prob_survives_large_eps(self):
        d = qd(eps=60.0, sigma=0.1)
        assert 0 < d.side_prob < 1e-25
        assert d.central_prob == 1.0


class TestPdfCdf:
    # mpmath evaluation at eps=1, sigma=0.25, D=1.
    PDF_ORACLE = [(0.0, 0.91947533575972856), (0.4, 0.27460247596783888),
                  (1.0, 0.33852274527696523), (2.5, 5.1509974520117637e-9)]

    @pytest.mark.parametrize("x,expected", PDF_ORACLE)
    def test_pdf_oracle(self, x, expected):
        assert qg_pdf(qd(), x) == pytest.approx(expected, rel=1e-13)

    def test_pdf_matches_defining_formula(self):
        d = qd(eps=2.0, sigma=0.4)
        x = np.linspace(-3, 3, 61)
        e, s = math.exp(2.0), 0.4
        raw = e * np.exp(-x ** 2 / (2 * s * s)) + np.exp(-(np.abs(x) - 1) ** 2 / (2 * s * s))
        assert np.allclose(qg_pdf(d, x), raw / d.norm_const, rtol=1e-13, atol=0)

    def test_large_eps_tends_to_gaussian(self):
        d = qd(eps=60.0, sigma=0.3)
        x = np.linspace(-2, 2, 21)
        assert np.allclose(qg_pdf(d, x), stats.norm.pdf(x, scale=0.3), rtol=1e-12, atol=1e-300)

    def test_cdf_oracle(self):
        d = qd(eps=1.0, sigma=0.25)
        assert qg_cdf(d, 0.6) == pytest.approx(0.79494719794808152, rel=1e-13)
        q, _ = adaptive_quad(lambda x: qg_pdf(d, x), -(1 + 40 * 0.25), 0.6,
                             breakpoints=[-1.0, 0.0], initial_pieces=64)
        assert qg_cdf(d, 0.6) == pytest.approx(q, abs=1e-9)

    def test_cdf_centre_and_tails(self):
        d = qd(eps=1.5, sigma=0.3)
        assert qg_cdf(d, 0.0) == pytest.approx(0.5, abs=1e-12)
        left = qg_cdf(d, -1e-300)
        assert left == pytest.approx(0.5, abs=1e-12)
        assert qg_cdf(d, -(1 + 40 * 0.3)) < 1e-12
        assert qg_cdf(d, 1 + 40 * 0.3) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 20), st.floats(0.02, 3), st.floats(0.2, 5), st.floats(-6, 6))
    def test_invariants(self, eps, sigma, sens, u):
        d = qd(eps=eps, sigma=sigma * sens, sens=sens)
        x = u * sens
        assert qg_pdf(d, x) == pytest.approx(qg_pdf(d, -x), rel=1e-14)
        assert qg_cdf(d, x) + qg_cdf(d, -x) == pytest.approx(1.0, abs=1e-9)
        mass = _quad_moment(d, lambda t: np.ones_like(t))
        assert mass == pytest.approx(1.0, abs=1e-9)
        lo = -(sens + 40 * d.sigma)
        if x > lo:
            q, _ = adaptive_quad(lambda t: qg_pdf(d, t), lo, x,
                                 breakpoints=[b for b in (-sens, 0.0, sens) if lo < b < x],
                                 initial_pieces=max(8, int((x - lo) / d.sigma)))
            assert qg_cdf(d, x) == pytest.approx(q, abs=1e-9)


class TestLosses:
    def test_oracle(self):
        d = qd(eps=1.0, sigma=0.3)
        assert qg_l1_loss(d) == pytest.approx(0.56190199180205311, rel=1e-13)
        assert qg_l2_loss(d) == pytest.approx(0.51397447645576029, rel=1e-13)

    def test_gaussian_limit(self):
        d = qd(eps=80.0, sigma=0.7)
        assert qg_l1_loss(d) == pytest.approx(0.7 * math.sqrt(2 / math.pi), rel=1e-14)
        assert qg_l2_loss(d) == pytest.approx(0.49, rel=1e-14)

    def test_l2_bound_at_feasibility_point(self):
        eps = 5.0
        d = qd(eps=eps, sigma=1 / math.sqrt(2 * eps), delta=0.05)
        assert qg_l2_loss(d) <= 1 / (2 * eps) + (4 + 1 / eps) * math.exp(-eps)

    def test_monte_carlo(self):
        d = qd(eps=1.0, sigma=0.3)
        x = qg_sample(d, np.random.default_rng(21), 10 ** 6)
        for vals, closed in ((np.abs(x), qg_l1_loss(d)), (x * x, qg_l2_loss(d))):
            se = vals.std() / math.sqrt(vals.size)
            assert abs(vals.mean() - closed) < 3 * se


class TestSampler:
    def test_mean_and_branch_frequency(self):
        d = qd(eps=1.0, sigma=0.3)
        n = 10 ** 6
        x = qg_sample(d, np.random.default_rng(8), n)
        assert abs(x.mean()) < 3 * x.std() / math.sqrt(n)
        # The branch draw is the first uniform of the stream.
        central = np.random.default_rng(8).random(n) >= d.side_prob
        p = d.central_prob
        assert abs(central.mean() - p) < 3 * math.sqrt(p * (1 - p) / n)

    def test_ks(self):
        d = qd(eps=1.0, sigma=0.25)
        x = qg_sample(d, np.random.default_rng(4), 10 ** 6)
        stat = stats.kstest(x, lambda t: qg_cdf(d, t)).statistic
        assert stat < 1.63 / math.sqrt(x.size)

    def test_scalar_draw(self):
        assert isinstance(qg_sample(qd(), np.random.default_rng(0)), float)


class TestSigma1:
    # Roots of psi1 by a 150-step bisection in mpmath.
    ORACLE = [((1.0, 0.1), 0.87287268170174751), ((2.0, 1e-4), 1.6614684398997315),
              ((0.5, 1e-6), 8.0265618000686365)]

    @pytest.mark.parametrize("key,expected", ORACLE)
    def test_oracle(self, key, expected):
        s = qg_sigma1(PrivacyParams(*key))
        assert s == pytest.approx(expected, rel=1e-12)
        assert abs(qg_psi1(PrivacyParams(*key), s)) <= 1e-10

    def test_zero_branch(self):
        assert qg_sigma1(PrivacyParams(1.0, 0.25)) == 0.0

    def test_limit_at_zero(self):
        p = PrivacyParams(1.0, 0.01)
        assert qg_psi1(p, 1e-6) == pytest.approx((math.e + 2) * 0.01 - 1, abs=1e-12)

    def test_region_end_nonnegative(self):
        for eps, delta in ((1.0, 0.01), (0.1, 1e-6), (5.0, 1e-3)):
            p = PrivacyParams(eps, delta)
            assert qg_psi1(p, _psi1_region_end(eps, delta)) >= 0

    def test_scaling(self):
        assert qg_sigma1(PrivacyParams(1.0, 0.01, 2.0)) == pytest.approx(
            2 * qg_sigma1(PrivacyParams(1.0, 0.01)), rel=1e-12)

    def test_monotone_on_grid(self):
        p = PrivacyParams(1.0, 0.01)
        s = np.linspace(1e-3, _psi1_region_end(1.0, 0.01), 400)
        v = np.array([qg_psi1(p, x) for x in s])
        assert np.all(np.diff(v) >= -1e-10)


class TestMaxMin:
    def test_case_i(self):
        r = qg_max_min(PrivacyParams(1.0, 0.1), 0.6)
        assert r.case_tag == "i" and r.x_min == 1.0

    def test_grid_scan_sigma_02(self):
        p = PrivacyParams(1.0, 0.1)
        d = QuasiGaussianDist(p, 0.2)
        r = qg_max_min(p, 0.2)
        x = np.linspace(0, 1, 10 ** 6 + 1)
        f = qg_pdf(d, x)
        assert abs(r.x_max - x[f.argmax()]) < 1e-5
        assert abs(r.x_min - x[f.argmin()]) < 1e-5
        assert r.f_max == pytest.approx(f.max(), abs=1e-10)
        assert r.f_min == pytest.approx(f.min(), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10), st.floats(0.05, 1.0))
    def test_bounds_midpoint(self, eps, sigma):
        p = PrivacyParams(eps, 0.1)
        r = qg_max_min(p, sigma)
        mid = qg_pdf(QuasiGaussianDist(p, sigma), 0.5)
        assert 0 <= r.x_min <= 1 and 0 <= r.x_max <= 1
        assert r.f_max * (1 + 1e-12) >= mid >= r.f_min * (1 - 1e-12)
        assert r.f_min > 0

    def test_scaling(self):
        a = qg_max_min(PrivacyParams(1.0, 0.1), 0.2)
        b = qg_max_min(PrivacyParams(1.0, 0.1, 3.0), 0.6)
        assert b.x_max == pytest.approx(3 * a.x_max, rel=1e-9)
        assert b.f_max == pytest.approx(a.f_max / 3, rel=1e-12)


class TestSigma2:
    # Roots of the log-ratio condition by bisection in mpmath, with the
    # extremes located by a 2000-point scan plus golden refinement.
    ORACLE = [(1.0, 0.34087203837126822), (2.0, 0.29815910881258279), (10.0, 0.18475003781810168)]

    @pytest.mark.parametrize("eps,expected", ORACLE)
    def test_oracle(self, eps, expected):
        assert qg_sigma2(PrivacyParams(eps, 0.1)) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("eps", [0.1, 1.0, 3.0, 10.0, 40.0])
    def test_bounded_by_feasibility_point(self, eps):
        assert qg_sigma2(PrivacyParams(eps, 0.1)) <= 1 / math.sqrt(2 * eps)

    def test_residual(self):
        p = PrivacyParams(1.0, 0.1)
        assert abs(qg_psi2(p, qg_sigma2(p))) <= 1e-8

    def test_scaling(self):
        assert qg_sigma2(PrivacyParams(1.0, 0.1, 2.0)) == pytest.approx(
            2 * qg_sigma2(PrivacyParams(1.0, 0.1)), rel=1e-12)

    def test_ratio_at_feasibility_point(self):
        for eps in (0.5, 1.0, 5.0, 20.0):
            assert qg_ratio(PrivacyParams(eps, 0.1), 1 / math.sqrt(2 * eps)) <= math.exp(eps) * (1 + 1e-12)


class TestCalibrate:
    def test_sigma_is_max(self):
        c = qg_calibrate_detail(PrivacyParams(1.0, 0.1))
        assert c.dist.sigma == max(c.sigma1, c.sigma2)

    def test_ratio_rises_again_for_small_eps(self):
        # At eps=0.145 the log-ratio crosses eps three times; the middle
        # stretch is infeasible although it lies above sigma2.
        p = PrivacyParams(0.145, 0.3)
        assert qg_psi2(p, 0.5) > 0 and qg_psi2(p, qg_sigma2(p)) <= 0

    def test_lifted_past_infeasible_stretch(self):
        p = PrivacyParams(0.145, 0.3)
        c = qg_calibrate_detail(p)
        assert c.sigma2 < c.sigma1 < c.dist.sigma
        assert qg_psi2(p, c.sigma1) > 0
        assert qg_psi2(p, c.dist.sigma) <= 0
        assert qg_psi1(p, c.dist.sigma) >= 0
        assert verify_mechanism("quasi-gaussian", p, c.dist.sigma).passed
        assert calibrate("quasi-gaussian", p).detail["branch"] == "ratio"

    @pytest.mark.parametrize("eps", np.linspace(0.1, 0.25, 16).tolist())
    def test_ratio_condition_holds_at_result(self, eps):
        for delta in (0.01, 0.2, 0.3, 0.4):
            p = PrivacyParams(eps, delta)
            s = qg_calibrate(p).sigma
            assert qg_psi2(p, s) <= 1e-12 and qg_psi1(p, s) >= 0

    @pytest.mark.parametrize("eps,delta", [(1.0, 0.1), (10.0, 5e-5), (0.5, 1e-6), (2.0, 0.01)])
    def test_dominance(self, eps, delta):
        p = PrivacyParams(eps, delta)
        s = qg_calibrate(p).sigma
        violated_1 = qg_psi1(p, 0.999 * s) < 0
        violated_2 = qg_psi2(p, 0.999 * s) > 0
        assert violated_1 or violated_2

    @pytest.mark.parametrize("eps,delta,expected", [(10.0, 5e-5, 60.60), (1.0, 0.1, -3.32)])
    def test_improvement(self, eps, delta, expected):
        p = PrivacyParams(eps, delta)
        a = gaussian_l1_loss(calibrate_analytic_gaussian(p))
        m = qg_l1_loss(qg_calibrate(p))
        assert 100 * (a - m) / max(a, m) == pytest.approx(expected, abs=0.005)
