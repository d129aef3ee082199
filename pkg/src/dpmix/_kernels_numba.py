"""numba kernels for the multi-Gaussian privacy shortfall.

Everything here works at unit sensitivity. For a shift phi the shortfall

    s(phi) = integral of min(e^eps f(x) - f(x + phi), 0) dx

is evaluated exactly: the set where the privacy loss
r(x) = eps + log f(x) - log f(x + phi) is negative is located as a union
of intervals, and the integral over each interval is a difference of
mixture cdf values. The slope ds/dphi = -sum[f(b + phi) - f(a + phi)]
comes for free because the integrand vanishes at the interval ends.
"""

import math

import numpy as np
from numba import njit

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)
# Mixture components whose log-weight trails the leading one by more than
# this are dropped from log f; e^-40 is far below double precision.
_LOG_CUT = 40.0
# Offsets, in units of sigma^2, around each hand-over point between
# neighbouring components; the hand-over is complete within about 8 sigma^2.
_CLUSTER = np.array([-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0])


@njit(cache=True)
def component_reach(eps, lam):
    c = 1.0 + 2.0 * lam * lam * eps
    return int(math.ceil(0.5 * (c + math.sqrt(c * c + 8.0 * _LOG_CUT * lam * lam))))


@njit(cache=True)
def _logmix(x, eps, lam, K, m):
    """log of the unnormalized mixture density and its x-derivative."""
    k0 = int(math.floor(x + 0.5))
    if k0 < -K:
        k0 = -K
    elif k0 > K:
        k0 = K
    lo = max(-K, k0 - m)
    hi = min(K, k0 + m)
    inv = 0.5 / (lam * lam)
    # Single pass with a running maximum.
    mx = -np.inf
    s = 0.0
    sd = 0.0
    for k in range(lo, hi + 1):
        d = x - k
        t = -abs(k) * eps - d * d * inv
        if t > mx:
            c = math.exp(mx - t)
            s = s * c + 1.0
            sd = sd * c - d
            mx = t
        else:
            w = math.exp(t - mx)
            s += w
            sd -= w * d
    return mx + math.log(s), sd / (s * lam * lam)


@njit(cache=True)
def _loss(x, eps, lam, K, phi, m):
    l0, d0 = _logmix(x, eps, lam, K, m)
    l1, d1 = _logmix(x + phi, eps, lam, K, m)
    return eps + l0 - l1, d0 - d1


@njit(cache=True)
def scan_points(eps, lam, K, phi):
    """Abscissae fine enough that each cell holds at most one sign change
    of the privacy loss or one interior extremum."""
    R = K + 12.0 * lam + 1.0
    clustered = lam * lam < 1.0 / 32.0 and K > 0
    if lam >= 0.25:
        h = lam / 8.0
    elif clustered:
        # Between hand-over zones the loss is linear up to e^-8 terms.
        h = 0.25
    else:
        h = 1.0 / 16.0
    n = int(math.ceil(2.0 * R / h)) + 1
    n_cl = 0
    if clustered:
        n_cl = 2 * (2 * K) * _CLUSTER.size
    pts = np.empty(n + n_cl)
    for i in range(n):
        pts[i] = -R + 2.0 * R * i / (n - 1)
    if n_cl > 0:
        lam2 = lam * lam
        j = n
        for kk in range(-K, K):
            # Hand-over point between neighbouring dominant components.
            step = -eps if kk >= 0 else eps
            t = kk + 0.5 + lam2 * step
            for c in range(_CLUSTER.size):
                for shift in (0.0, phi):
                    v = t - shift + lam2 * _CLUSTER[c]
                    if v < -R:
                        v = -R
                    elif v > R:
                        v = R
                    pts[j] = v
                    j += 1
    return np.sort(pts)


@njit(cache=True)
def _refine_root(a, b, fa, eps, lam, K, phi, m):
    # Safeguarded Newton inside a sign-change bracket.
    x = 0.5 * (a + b)
    for _ in range(80):
        fx, dx = _loss(x, eps, lam, K, phi, m)
        if fx == 0.0:
            return x
        if (fx < 0.0) == (fa < 0.0):
            a = x
            fa = fx
        else:
            b = x
        xn = x - fx / dx if dx != 0.0 else np.nan
        if not (a < xn < b):
            xn = 0.5 * (a + b)
        scale = max(1.0, abs(x))
        if abs(xn - x) <= 1e-14 * scale or b - a <= 1e-14 * scale:
            return xn
        x = xn
    return 0.5 * (a + b)


@njit(cache=True)
def _critical(a, b, eps, lam, K, phi, m):
    # Bisection on the sign of r' (r'(a) and r'(b) have opposite signs).
    _, da = _loss(a, eps, lam, K, phi, m)
    for _ in range(60):
        c = 0.5 * (a + b)
        _, dc = _loss(c, eps, lam, K, phi, m)
        if (dc < 0.0) == (da < 0.0):
            a = c
            da = dc
        else:
            b = c
        if b - a <= 1e-14 * max(1.0, abs(a)):
            break
    return 0.5 * (a + b)


@njit(cache=True)
def _q(z):
    return 0.5 * math.erfc(z / _SQRT2)


@njit(cache=True)
def _mass(a, b, k, lam):
    za = (a - k) / lam
    zb = (b - k) / lam
    if za >= 0.0:
        return _q(za) - _q(zb)
    if zb <= 0.0:
        return _q(-zb) - _q(-za)
    return 1.0 - _q(-za) - _q(zb)


@njit(cache=True)
def negative_set(eps, lam, K, phi):
    """Ends (a_i, b_i) of the intervals where the privacy loss is negative."""
    m = component_reach(eps, lam)
    xs = scan_points(eps, lam, K, phi)
    n = xs.size
    r = np.empty(n)
    dr = np.empty(n)
    for i in range(n):
        r[i], dr[i] = _loss(xs[i], eps, lam, K, phi, m)
    roots = np.empty(2 * n)
    nr = 0
    for i in range(n - 1):
        xa = xs[i]
        xb = xs[i + 1]
        if xb <= xa:
            continue
        na = r[i] < 0.0
        nb = r[i + 1] < 0.0
        if na != nb:
            roots[nr] = _refine_root(xa, xb, r[i], eps, lam, K, phi, m)
            nr += 1
        elif (not na and dr[i] < 0.0 < dr[i + 1]) or (
                na and dr[i] > 0.0 > dr[i + 1]):
            xc = _critical(xa, xb, eps, lam, K, phi, m)
            rc, _ = _loss(xc, eps, lam, K, phi, m)
            if (rc < 0.0) != na:
                roots[nr] = _refine_root(xa, xc, r[i], eps, lam, K, phi, m)
                roots[nr + 1] = _refine_root(xc, xb, rc, eps, lam, K, phi, m)
                nr += 2
    lo = np.empty(nr // 2 + 2)
    hi = np.empty(nr // 2 + 2)
    cnt = 0
    neg = r[0] < 0.0
    start = -np.inf
    for j in range(nr):
        if neg:
            lo[cnt] = start
            hi[cnt] = roots[j]
            cnt += 1
        else:
            start = roots[j]
        neg = not neg
    if neg:
        lo[cnt] = start
        hi[cnt] = np.inf
        cnt += 1
    return lo[:cnt], hi[:cnt]


@njit(cache=True)
def shortfall_one(eps, lam, K, phi):
    """(s(phi), ds/dphi) at unit sensitivity."""
    if phi == 0.0:
        return 0.0, 0.0
    lo, hi = negative_set(eps, lam, K, phi)
    w = np.empty(2 * K + 1)
    z = 0.0
    for k in range(-K, K + 1):
        w[k + K] = math.exp(-abs(k) * eps)
        z += w[k + K]
    w /= z
    ee = math.exp(eps)
    m1 = 0.0
    m2 = 0.0
    dens = 0.0
    inv = 0.5 / (lam * lam)
    reach = 40.0 * lam
    for i in range(lo.size):
        a = lo[i]
        b = hi[i]
        for k in range(-K, K + 1):
            # Components far outside both intervals carry no mass.
            if k < a - reach and k < a + phi - reach:
                continue
            if k > b + phi + reach and k > b + reach:
                continue
            wk = w[k + K]
            m1 += wk * _mass(a, b, k, lam)
            m2 += wk * _mass(a + phi, b + phi, k, lam)
            if b < np.inf:
                d = b + phi - k
                dens += wk * math.exp(-d * d * inv)
            if a > -np.inf:
                d = a + phi - k
                dens -= wk * math.exp(-d * d * inv)
    return ee * m1 - m2, -dens / (_SQRT2PI * lam)


@njit(cache=True)
def shortfall_curve(eps, lam, K, phis):
    n = phis.size
    s = np.empty(n)
    ds = np.empty(n)
    for i in range(n):
        s[i], ds[i] = shortfall_one(eps, lam, K, phis[i])
    return s, ds
