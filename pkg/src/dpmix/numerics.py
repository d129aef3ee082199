"""Numerical primitives shared by the calibration routines.

Normal cdf and its inverse come from scipy.special (cephes ndtr/ndtri),
which already meet the accuracy the calibration needs. Root finding,
golden-section search and Gauss-Kronrod quadrature are implemented here
because the calibration needs feasible-side rounding, explicit iteration
caps and a batched integrator that scipy does not expose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special


class BracketError(ValueError):
    """The function does not change sign over the supplied bracket."""


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration or subdivision budget."""


class QuadratureError(ConvergenceError):
    """Adaptive quadrature could not reach the requested tolerance."""


@dataclass(frozen=True)
class Tolerance:
    """Stopping rule for the iterative routines.

    Attributes:
      abs_x: absolute tolerance on the searched argument.
      rel_f: relative tolerance on function or integral values.
      max_iter: iteration cap (bisection steps, golden steps or
        quadrature refinement levels).
      abs_f: absolute floor on integral error, used when the integral
        itself is close to zero.
    """

    abs_x: float = 1e-12
    rel_f: float = 1e-10
    max_iter: int = 200
    abs_f: float = 1e-15

    def __post_init__(self):
        if not self.abs_x > 0:
            raise ValueError(f"abs_x must be positive, got {self.abs_x}")
        if not self.rel_f > 0:
            raise ValueError(f"rel_f must be positive, got {self.rel_f}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.abs_f < 0:
            raise ValueError(f"abs_f must be nonnegative, got {self.abs_f}")


GOLDEN_TOL = Tolerance(abs_x=1e-10)


def std_normal_cdf(x):
    """Standard normal cdf. Accepts scalars or arrays."""
    out = special.ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def log_std_normal_cdf(x):
    """log Phi(x), accurate deep in the left tail."""
    out = special.log_ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_cdf_inv(p):
    """Inverse of the standard normal cdf on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise ValueError("std_normal_cdf_inv requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_pdf(x):
    out = np.exp(-0.5 * np.square(x)) / math.sqrt(2 * math.pi)
    return float(out) if np.ndim(out) == 0 else out


def bisect(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: Tolerance = Tolerance(),
    *,
    feasible: Optional[str] = None,
    method: str = "bisection",
    f_lo: Optional[float] = None,
    f_hi: Optional[float] = None,
) -> float:
    """Finds a root of a monotone function inside [lo, hi].

    Args:
      f: monotone function with a sign change on [lo, hi].
      lo: left end of the bracket.
      hi: right end of the bracket.
      tol: stopping rule; iteration stops once the bracket is narrower
        than tol.abs_x.
      feasible: "hi" or "lo" returns that end of the final bracket, which
        is how calibration rounds toward the privacy-feasible side. None
        returns the midpoint.
      method: "bisection" halves the bracket each step. "illinois" uses
        Illinois-modified false position with a halving fallback; the
        final bracket satisfies the same guarantees.
      f_lo: known value of f at lo, e.g. an analytic limit.
      f_hi: known value of f at hi.

    Returns:
      A point within tol.abs_x of the root.

    Raises:
      BracketError: f(lo) and f(hi) have the same strict sign.
      ConvergenceError: the bracket did not shrink below tol.abs_x
        within tol.max_iter steps.
    """
    if not lo < hi:
        raise ValueError(f"bisect needs lo < hi, got [{lo}, {hi}]")
    if feasible not in (None, "lo", "hi"):
        raise ValueError(f"unknown feasible side {feasible!r}")
    if method not in ("bisection", "illinois"):
        raise ValueError(f"unknown method {method!r}")
    flo = f(lo) if f_lo is None else f_lo
    fhi = f(hi) if f_hi is None else f_hi
    if math.isnan(flo) or math.isnan(fhi):
        raise BracketError("function is NaN at a bracket end")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")

    # Illinois bookkeeping: weights that get halved when one end is retained.
    wlo, whi = flo, fhi
    side = 0
    stalled = 0
    for _ in range(tol.max_iter):
        width = hi - lo
        if width <= tol.abs_x:
            break
        x = 0.5 * (lo + hi)
        if method == "illinois" and stalled < 2:
            if math.isfinite(wlo) and math.isfinite(whi) and whi != wlo:
                cand = (lo * whi - hi * wlo) / (whi - wlo)
                guard = 0.25 * tol.abs_x
                if lo + guard < cand < hi - guard:
                    x = cand
        fx = f(x)
        if math.isnan(fx):
            raise ConvergenceError(f"function returned NaN at {x}")
        if fx == 0:
            lo = hi = x
            break
        if (fx > 0) == (flo > 0):
            lo, flo, wlo = x, fx, fx
            if side == -1:
                whi *= 0.5
            side = -1
        else:
            hi, fhi, whi = x, fx, fx
            if side == 1:
                wlo *= 0.5
            side = 1
        # Force a halving step when false position stops shrinking.
        stalled = stalled + 1 if hi - lo > 0.5 * width else 0
        if stalled > 2:
            stalled = 0
    else:
        if hi - lo > tol.abs_x:
            raise ConvergenceError(
                f"bisection did not converge in {tol.max_iter} steps; "
                f"bracket [{lo}, {hi}]")
    if feasible == "hi":
        return hi
    if feasible == "lo":
        return lo
    return 0.5 * (lo + hi)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_opt(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    maximize: bool = False,
    tol: Tolerance = GOLDEN_TOL,
) -> Tuple[float, float]:
    """Golden-section search for the optimum of a unimodal function.

    Returns:
      (argopt, f(argopt)), argopt within tol.abs_x of the optimizer.
    """
    if not lo <= hi:
        raise ValueError(f"golden_section_opt needs lo <= hi, got [{lo}, {hi}]")
    sign = -1.0 if maximize else 1.0
    g = lambda x: sign * f(x)
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    gc, gd = g(c), g(d)
    for _ in range(tol.max_iter):
        if b - a <= tol.abs_x:
            break
        if gc <= gd:
            b, d, gd = d, c, gc
            c = b - _INVPHI * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _INVPHI * (b - a)
            gd = g(d)
    else:
        if b - a > tol.abs_x:
            raise ConvergenceError(
                f"golden-section search did not converge in {tol.max_iter} steps")
    x = 0.5 * (a + b)
    return x, f(x)


# 21-point Gauss-Kronrod rule (QUADPACK qk21), nodes on [0, 1) mirrored.
_XGK = np.array([
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.0])
_WGK = np.array([
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077958109831074, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821])
_WG = np.array([
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KW = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GW = np.zeros(21)
_GW[1:10:2] = _WG
_GW[11:20:2] = _WG[::-1]


def _gk21(f, lo, hi):
    """Batched GK21 on intervals [lo_i, hi_i]; returns (kronrod, |k - g|)."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    k = half * (fx @ _KW)
    g = half * (fx @ _GW)
    return k, np.abs(k - g)


def adaptive_quad(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: Tolerance = Tolerance(rel_f=1e-12, max_iter=80),
    *,
    breakpoints: Optional[Sequence[float]] = None,
    initial_pieces: int = 1,
    max_intervals: int = 400_000,
) -> Tuple[float, float]:
    """Adaptive 21-point Gauss-Kronrod quadrature of a vectorized integrand.

    All unresolved intervals are bisected together each level, so f is
    called on one large array per level. An interval is accepted once its
    error estimate |K21 - G10| falls below its width share of
    max(tol.abs_f, tol.rel_f * |integral|). The raw |K21 - G10| is a
    deliberately pessimistic estimate for smooth pieces.

    Args:
      f: vectorized integrand, maps an array of abscissae to values.
      a: left end.
      b: right end.
      tol: tolerance; max_iter caps the number of refinement levels.
      breakpoints: optional known kinks inside (a, b) to split at.
      initial_pieces: number of equal pieces each initial segment starts as.
      max_intervals: cap on intervals evaluated in total.

    Returns:
      (integral, err_estimate).

    Raises:
      QuadratureError: the error target is not met within the budget.
    """
    if not a < b:
        if a == b:
            return 0.0, 0.0
        raise ValueError(f"adaptive_quad needs a < b, got [{a}, {b}]")
    edges = [a]
    if breakpoints is not None:
        edges.extend(sorted(p for p in breakpoints if a < p < b))
    edges.append(b)
    pieces = []
    for l, r in zip(edges[:-1], edges[1:]):
        pieces.append(np.linspace(l, r, initial_pieces + 1))
    lo = np.concatenate([p[:-1] for p in pieces])
    hi = np.concatenate([p[1:] for p in pieces])

    total_width = b - a
    done_val = 0.0
    done_err = 0.0
    evaluated = 0
    comp = 0.0  # Kahan compensation for the accepted sum
    for _ in range(tol.max_iter):
        k, e = _gk21(f, lo, hi)
        evaluated += lo.size
        estimate = done_val + float(np.sum(k))
        target = max(tol.abs_f, tol.rel_f * abs(estimate))
        width = hi - lo
        share = target * width / total_width
        # Intervals at floating-point resolution cannot be split further.
        tiny = width <= 64 * np.finfo(float).eps * np.maximum(
            np.abs(lo), np.abs(hi))
        accept = (e <= share) | tiny
        for v in k[accept]:
            y = v - comp
            t = done_val + y
            comp = (t - done_val) - y
            done_val = t
        done_err += float(np.sum(e[accept]))
        if accept.all():
            return done_val, done_err
        lo, hi = lo[~accept], hi[~accept]
        if evaluated + 2 * lo.size > max_intervals:
            break
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    k, e = _gk21(f, lo, hi)
    val = done_val + float(np.sum(k))
    err = done_err + float(np.sum(e))
    if err <= max(tol.abs_f, tol.rel_f * abs(val)):
        return val, err
    raise QuadratureError(
        f"adaptive_quad on [{a}, {b}]: error {err:.3g} above target after "
        f"{evaluated} intervals")


def grid_argmin(
    evaluate: Callable[[np.ndarray], Tuple[np.ndarray, Optional[np.ndarray]]],
    n_steps: int,
    *,
    coarse: int = 128,
    exhaustive: int = 256,
) -> Tuple[int, float, int]:
    """Minimum of a function sampled on the integer grid {0, ..., n_steps}.

    Small grids are evaluated in full. Larger grids are scanned on about
    `coarse` evenly spaced nodes (both ends included); each coarse local
    minimum is then narrowed to a single node, by bisecting the sign of the
    derivative when `evaluate` supplies one and by a discrete ternary
    search otherwise. The result is exact whenever the function is
    unimodal between neighbouring coarse nodes.

    Args:
      evaluate: maps an int array of node indices to (values, slopes);
        slopes may be None.
      n_steps: number of grid steps; nodes run 0..n_steps inclusive.
      coarse: number of coarse intervals for large grids.
      exhaustive: grids with at most this many steps are evaluated in full.

    Returns:
      (argmin index, min value, number of nodes evaluated).
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    cache = {}

    def ev(idx):
        idx = np.asarray(idx, dtype=np.int64)
        new = np.array([i for i in np.unique(idx) if i not in cache],
                       dtype=np.int64)
        if new.size:
            vals, slopes = evaluate(new)
            for j, i in enumerate(new):
                cache[int(i)] = (float(vals[j]),
                                 None if slopes is None else float(slopes[j]))
        return idx

    if n_steps <= exhaustive:
        ev(np.arange(n_steps + 1))
    else:
        nodes = np.unique(np.round(
            np.linspace(0, n_steps, coarse + 1)).astype(np.int64))
        ev(nodes)
        v = np.array([cache[int(i)][0] for i in nodes])
        d = [cache[int(i)][1] for i in nodes]
        has_d = d[0] is not None
        brackets = []
        m = len(nodes)
        for i in range(m):
            left = v[i - 1] if i > 0 else np.inf
            right = v[i + 1] if i < m - 1 else np.inf
            # Flat runs (the shortfall is exactly 0 for small shifts) are
            # not minima worth descending into.
            if v[i] <= left and v[i] <= right and (v[i] < left or v[i] < right):
                if i > 0 and (not has_d or d[i] < 0 or v[i - 1] == v[i]):
                    brackets.append((nodes[i - 1], nodes[i]))
                if i < m - 1 and (not has_d or d[i] > 0 or v[i + 1] == v[i]):
                    brackets.append((nodes[i], nodes[i + 1]))
            if has_d and i < m - 1 and d[i] < 0 < d[i + 1]:
                brackets.append((nodes[i], nodes[i + 1]))
        for lo, hi in set(brackets):
            lo, hi = int(lo), int(hi)
            if has_d:
                _descend_slope(ev, cache, lo, hi)
            else:
                _descend_ternary(ev, cache, lo, hi)
    best = min(cache.items(), key=lambda kv: (kv[1][0], kv[0]))
    return best[0], best[1][0], len(cache)


def _descend_slope(ev, cache, lo, hi):
    # Narrow to adjacent nodes where the slope turns from negative to not,
    # by false position on the slope with a halving fallback.
    ev([lo, hi])
    dlo, dhi = cache[lo][1], cache[hi][1]
    if not (dlo < 0 <= dhi):
        _descend_ternary(ev, cache, lo, hi)
        return
    halve = False
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if not halve and dhi != dlo:
            guess = lo + int(round((hi - lo) * (-dlo) / (dhi - dlo)))
            mid = min(max(guess, lo + 1), hi - 1)
        width = hi - lo
        ev([mid])
        dm = cache[mid][1]
        if dm < 0:
            lo, dlo = mid, dm
        else:
            hi, dhi = mid, dm
        halve = (hi - lo) > 0.5 * width and not halve


def _descend_ternary(ev, cache, lo, hi):
    # Golden-section search over integers; one new node per step.
    val = lambda i: cache[i][0]
    m1 = hi - int(round(_INVPHI * (hi - lo)))
    m2 = lo + int(round(_INVPHI * (hi - lo)))
    while hi - lo > 4:
        m1 = min(max(m1, lo + 1), hi - 2)
        m2 = min(max(m2, m1 + 1), hi - 1)
        ev([m1, m2])
        if val(m1) <= val(m2):
            hi, m2 = m2, m1
            m1 = hi - int(round(_INVPHI * (hi - lo)))
        else:
            lo, m1 = m1, m2
            m2 = lo + int(round(_INVPHI * (hi - lo)))
    ev(np.arange(lo, hi + 1))
