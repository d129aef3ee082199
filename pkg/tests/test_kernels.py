import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpmix import _kernels_numba as nb
from dpmix import _kernels_numpy as npk
from dpmix import kernels

# Shortfall integral of min(e^eps f(x) - f(x + phi), 0) at unit sensitivity,
# computed in mpmath (30 digits) by scanning for sign changes, bisecting the
# roots and integrating between them with tanh-sinh quadrature.
MPMATH_SHORTFALL = [
    ((1.0, 0.3, 2, 0.5), -0.051307982324895659),
    ((1.0, 0.3, 2, 1.0), -0.067450650721344406),
    ((2.0, 0.12, 5, 0.37), -0.69512367679319103),
    ((0.5, 1.5, 3, 0.8), -0.020037952978460836),
    ((10.0, 0.05, 3, 0.5), -0.99994593497107179),
    ((1.0, 0.27, 10, 0.5), -0.091184700375105027),
]


@pytest.mark.parametrize("impl", [nb, npk], ids=["numba", "numpy"])
@pytest.mark.parametrize("args,expected", MPMATH_SHORTFALL)
def test_shortfall_matches_mpmath(impl, args, expected):
    s, _ = impl.shortfall_one(*args)
    assert s == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("impl", [nb, npk], ids=["numba", "numpy"])
def test_zero_shift(impl):
    assert impl.shortfall_one(1.0, 0.3, 2, 0.0) == (0.0, 0.0)


def _brute(eps, lam, K, phi, n=400_001):
    ks = np.arange(-K, K + 1)
    w = np.exp(-np.abs(ks) * eps)
    w /= w.sum()
    R = K + 14 * lam + 1 + phi
    x = np.linspace(-R, R, n)
    f = lambda y: (np.exp(-0.5 * ((y[:, None] - ks) / lam) ** 2) @ w) / (np.sqrt(2 * np.pi) * lam)
    g = np.minimum(np.exp(eps) * f(x) - f(x + phi), 0.0)
    return np.trapezoid(g, x)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.2, 3), st.integers(0, 6), st.floats(0.01, 1))
def test_backends_agree_and_match_brute_force(eps, lam, K, phi):
    s1, d1 = nb.shortfall_one(eps, lam, K, phi)
    s2, d2 = npk.shortfall_one(eps, lam, K, phi)
    assert s1 == pytest.approx(s2, abs=1e-13)
    assert d1 == pytest.approx(d2, abs=1e-11)
    assert s1 == pytest.approx(_brute(eps, lam, K, phi), abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 10), st.floats(0.02, 0.2), st.integers(1, 12), st.floats(0.01, 1))
def test_backends_agree_small_sigma(eps, lam, K, phi):
    s1, d1 = nb.shortfall_one(eps, lam, K, phi)
    s2, d2 = npk.shortfall_one(eps, lam, K, phi)
    assert s1 == pytest.approx(s2, abs=1e-12)
    assert d1 == pytest.approx(d2, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("args", [(1.0, 0.3, 2, 0.5), (2.0, 0.12, 5, 0.37), (0.5, 1.5, 3, 0.8)])
def test_slope_matches_finite_difference(args):
    eps, lam, K, phi = args
    h = 1e-6
    _, ds = nb.shortfall_one(eps, lam, K, phi)
    fd = (nb.shortfall_one(eps, lam, K, phi + h)[0] - nb.shortfall_one(eps, lam, K, phi - h)[0]) / (2 * h)
    assert ds == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_curve_wrapper_casts_types():
    s, ds = kernels.shortfall_curve(1, 1, 2.0, [0.25, 0.5])
    assert s.shape == ds.shape == (2,)
    assert np.all(s <= 0)


def _backend_in_subprocess(value):
    env = {**os.environ, "DPMIX_BACKEND": value}
    return subprocess.run([sys.executable, "-c", "from dpmix import kernels; print(kernels.BACKEND)"],
                          env=env, capture_output=True, text=True)


def test_env_selects_numpy_backend():
    out = _backend_in_subprocess("numpy")
    assert out.returncode == 0 and out.stdout.strip() == "numpy"


def test_env_rejects_unknown_backend():
    out = _backend_in_subprocess("fortran")
    assert out.returncode != 0 and "DPMIX_BACKEND" in out.stderr


def test_active_backend_follows_env():
    assert kernels.BACKEND == os.environ.get("DPMIX_BACKEND", "numba").strip().lower()
