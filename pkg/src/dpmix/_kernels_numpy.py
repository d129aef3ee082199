"""Pure-numpy twin of the numba shortfall kernel.

Same algorithm, vectorized over scan points and roots instead of looped.
Used when numba is unavailable or DPMIX_BACKEND=numpy.
"""

import math

import numpy as np
from scipy import special

_SQRT2PI = math.sqrt(2.0 * math.pi)
# Offsets, in units of sigma^2, around each hand-over point between
# neighbouring components; the hand-over is complete within about 8 sigma^2.
_CLUSTER = np.array([-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0])


def _logmix(x, eps, lam, K):
    ks = np.arange(-K, K + 1, dtype=float)
    t = -np.abs(ks) * eps - (x[:, None] - ks) ** 2 * (0.5 / (lam * lam))
    mx = t.max(axis=1)
    w = np.exp(t - mx[:, None])
    s = w.sum(axis=1)
    sd = (w * (ks - x[:, None])).sum(axis=1)
    return mx + np.log(s), sd / (s * lam * lam)


def _loss(x, eps, lam, K, phi):
    l0, d0 = _logmix(x, eps, lam, K)
    l1, d1 = _logmix(x + phi, eps, lam, K)
    return eps + l0 - l1, d0 - d1


def scan_points(eps, lam, K, phi):
    R = K + 12.0 * lam + 1.0
    clustered = lam * lam < 1.0 / 32.0 and K > 0
    if lam >= 0.25:
        h = lam / 8.0
    elif clustered:
        h = 0.25
    else:
        h = 1.0 / 16.0
    n = int(math.ceil(2.0 * R / h)) + 1
    pts = [np.linspace(-R, R, n)]
    if clustered:
        kk = np.arange(-K, K)
        t = kk + 0.5 + lam * lam * np.where(kk >= 0, -eps, eps)
        t = np.concatenate([t, t - phi])
        pts.append((t[:, None] + lam * lam * _CLUSTER).ravel())
    return np.sort(np.clip(np.concatenate(pts), -R, R))


def _refine_roots(a, b, fa, eps, lam, K, phi):
    a, b = a.copy(), b.copy()
    neg_a = fa < 0.0
    x = 0.5 * (a + b)
    for _ in range(80):
        fx, dx = _loss(x, eps, lam, K, phi)
        same = (fx < 0.0) == neg_a
        a = np.where(same, x, a)
        b = np.where(same, b, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - fx / dx
        ok = (xn > a) & (xn < b)
        xn = np.where(ok, xn, 0.5 * (a + b))
        xn = np.where(fx == 0.0, x, xn)
        scale = np.maximum(1.0, np.abs(x))
        done = (np.abs(xn - x) <= 1e-14 * scale) | (b - a <= 1e-14 * scale)
        x = xn
        if done.all():
            break
    return x


def _critical(a, b, eps, lam, K, phi):
    a, b = a.copy(), b.copy()
    _, da = _loss(a, eps, lam, K, phi)
    neg = da < 0.0
    for _ in range(60):
        c = 0.5 * (a + b)
        _, dc = _loss(c, eps, lam, K, phi)
        same = (dc < 0.0) == neg
        a = np.where(same, c, a)
        b = np.where(same, b, c)
    return 0.5 * (a + b)


def negative_set(eps, lam, K, phi):
    xs = scan_points(eps, lam, K, phi)
    r, dr = _loss(xs, eps, lam, K, phi)
    xa, xb = xs[:-1], xs[1:]
    ra, rb = r[:-1], r[1:]
    valid = xb > xa
    na, nb = ra < 0.0, rb < 0.0
    flip = valid & (na != nb)
    turn = valid & (na == nb) & (
        (~na & (dr[:-1] < 0.0) & (dr[1:] > 0.0))
        | (na & (dr[:-1] > 0.0) & (dr[1:] < 0.0)))

    # Each root is keyed by (cell, order-in-cell) so they sort left to right.
    keys, vals = [], []
    idx = np.nonzero(flip)[0]
    if idx.size:
        vals.append(_refine_roots(xa[idx], xb[idx], ra[idx], eps, lam, K, phi))
        keys.append(idx * 2.0)
    idx = np.nonzero(turn)[0]
    if idx.size:
        xc = _critical(xa[idx], xb[idx], eps, lam, K, phi)
        rc, _ = _loss(xc, eps, lam, K, phi)
        hit = (rc < 0.0) != na[idx]
        idx, xc, rc = idx[hit], xc[hit], rc[hit]
        if idx.size:
            vals.append(_refine_roots(xa[idx], xc, ra[idx], eps, lam, K, phi))
            keys.append(idx * 2.0)
            vals.append(_refine_roots(xc, xb[idx], rc, eps, lam, K, phi))
            keys.append(idx * 2.0 + 1.0)
    if vals:
        order = np.argsort(np.concatenate(keys), kind="stable")
        roots = np.concatenate(vals)[order]
    else:
        roots = np.empty(0)
    ends = roots
    if r[0] < 0.0:
        ends = np.concatenate([[-np.inf], ends])
    if ends.size % 2:
        ends = np.concatenate([ends, [np.inf]])
    return ends[0::2], ends[1::2]


def _mass(a, b, ks, lam):
    za = (a[:, None] - ks) / lam
    zb = (b[:, None] - ks) / lam
    q = special.ndtr
    upper = q(-za) - q(-zb)
    lower = q(zb) - q(za)
    mid = 1.0 - q(za) - q(-zb)
    return np.where(za >= 0.0, upper, np.where(zb <= 0.0, lower, mid))


def shortfall_one(eps, lam, K, phi):
    if phi == 0.0:
        return 0.0, 0.0
    lo, hi = negative_set(eps, lam, K, phi)
    if lo.size == 0:
        return 0.0, 0.0
    ks = np.arange(-K, K + 1, dtype=float)
    w = np.exp(-np.abs(ks) * eps)
    w /= w.sum()
    m1 = float((_mass(lo, hi, ks, lam) @ w).sum())
    m2 = float((_mass(lo + phi, hi + phi, ks, lam) @ w).sum())
    inv = 0.5 / (lam * lam)

    def dens(x):
        x = x[np.isfinite(x)]
        return float((np.exp(-(x[:, None] + phi - ks) ** 2 * inv) @ w).sum())

    return math.exp(eps) * m1 - m2, -(dens(hi) - dens(lo)) / (_SQRT2PI * lam)


def shortfall_curve(eps, lam, K, phis):
    phis = np.asarray(phis, dtype=float)
    s = np.empty(phis.size)
    ds = np.empty(phis.size)
    for i, p in enumerate(phis):
        s[i], ds[i] = shortfall_one(eps, lam, K, p)
    return s, ds
