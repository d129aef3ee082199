"""Gaussian-mixture noise mechanisms for differential privacy: calibration,
sampling, losses, numerical DP verification and zCDP composition."""

from .accountant import CompositionLedger, UnsupportedMechanismError, ledger_add, ledger_to_dp, merge
from .analytic_gaussian import (
    GaussianMechanism,
    PrivacyParams,
    calibrate_analytic_gaussian,
    gaussian_l1_loss,
    gaussian_l2_loss,
)
from .calibration import CalibrationResult, LossReport, calibrate, improvement_pct
from .multi_gaussian import (
    CalibrationHyper,
    MultiGaussianDist,
    mg_calibrate,
    mg_calibrate_best_k,
    mg_cdf,
    mg_l1_loss,
    mg_l2_loss,
    mg_pdf,
    mg_sample,
    mg_shortfall,
    mg_zcdp_rho,
)
from .quasi_gaussian import (
    QuasiGaussianDist,
    qg_calibrate,
    qg_cdf,
    qg_l1_loss,
    qg_l2_loss,
    qg_max_min,
    qg_pdf,
    qg_sample,
    qg_sigma1,
    qg_sigma2,
)
from .verifier import VerificationReport, VerifierConfig, verify_calibrated, verify_dp

__version__ = "0.1.0"
