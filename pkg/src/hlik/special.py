"""Special functions used throughout the package.

Everything here is self-contained double precision: Lanczos log-gamma,
digamma/trigamma (recurrence plus asymptotic series), regularized incomplete
gamma P/Q (series / Lentz continued fraction) with inverses by a bracketed
Halley/Newton iteration, and the standard normal cdf/quantile (rational
approximation refined by one Newton step).

The scalar kernels are numba-compiled when available so they can be called
from the jitted simulation loops; the array entry points fall back to
vectorized numpy implementations of the same algorithms when numba is off
(``HLIK_NUMBA=0``).
"""

import math

import numpy as np

from ._jit import NUMBA_ENABLED, njit

__all__ = [
    "loggamma", "digamma", "trigamma",
    "gammainc_p", "gammainc_q", "gammainc_p_inv", "gammainc_q_inv",
    "norm_cdf", "norm_ppf",
    "SpecialFnTable", "special_functions",
]

_EPS = 2.220446049250313e-16
_LN_SQRT_2PI = 0.9189385332046727  # log(sqrt(2*pi))

# Lanczos approximation, g=7, 9 terms; ~1e-14 relative error.
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


# ---------------------------------------------------------------------------
# Scalar kernels (njit-compiled when numba is enabled)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lanczos_core(x):
    # valid for x >= 0.5
    z = x - 1.0
    a = _LANCZOS[0]
    for i in range(1, 9):
        a += _LANCZOS[i] / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _LN_SQRT_2PI + (z + 0.5) * math.log(t) - t + math.log(a)


@njit(cache=True)
def _lgamma_s(x):
    """log Gamma(x) for x > 0 via Lanczos; reflection below 0.5."""
    if x < 0.5:
        return math.log(math.pi / math.sin(math.pi * x)) - _lanczos_core(1.0 - x)
    return _lanczos_core(x)


@njit(cache=True)
def _digamma_s(x):
    """psi(x) for x > 0: shift to x >= 10 then asymptotic series."""
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    # log x - 1/(2x) - sum_k B_2k / (2k x^2k)
    ser = inv2 * (-1.0 / 12.0 + inv2 * (1.0 / 120.0 + inv2 * (-1.0 / 252.0
          + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0
          + inv2 * (691.0 / 32760.0 + inv2 * (-1.0 / 12.0)))))))
    return acc + math.log(x) - 0.5 * inv + ser


@njit(cache=True)
def _trigamma_s(x):
    """psi'(x) for x > 0: shift to x >= 10 then asymptotic series."""
    acc = 0.0
    while x < 10.0:
        acc += 1.0 / (x * x)
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    ser = 1.0 + inv * 0.5 + inv2 * (1.0 / 6.0 + inv2 * (-1.0 / 30.0
          + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0
          + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * (7.0 / 6.0)))))))
    return acc + inv * ser


@njit(cache=True)
def _gammainc_q_s(a, x):
    """Regularized upper incomplete gamma Q(a, x), a > 0, x >= 0."""
    if x <= 0.0:
        return 1.0
    lpre = a * math.log(x) - x - _lgamma_s(a)
    if x < a + 1.0:
        # series for P, then complement
        term = 1.0 / a
        total = term
        for n in range(1, 10000):
            term *= x / (a + n)
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return 1.0 - total * math.exp(lpre)
    # Lentz continued fraction for Q
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(lpre) * h


@njit(cache=True)
def _gammainc_p_s(a, x):
    """Regularized lower incomplete gamma P(a, x) = 1 - Q(a, x)."""
    if x <= 0.0:
        return 0.0
    lpre = a * math.log(x) - x - _lgamma_s(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        for n in range(1, 10000):
            term *= x / (a + n)
            total += term
            if abs(term) < abs(total) * _EPS:
                break
        return total * math.exp(lpre)
    return 1.0 - _gammainc_q_s(a, x)


@njit(cache=True)
def _gammainc_p_inv_s(a, p):
    """Solve P(a, x) = p for x: NR-style initial guess, bracketed Halley."""
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return np.inf
    gln = _lgamma_s(a)
    a1 = a - 1.0
    afac = 0.0
    lna1 = 0.0
    if a > 1.0:
        lna1 = math.log(a1)
        afac = math.exp(a1 * (lna1 - 1.0) - gln)
        pp = p if p < 0.5 else 1.0 - p
        t = math.sqrt(-2.0 * math.log(pp))
        x = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        if p < 0.5:
            x = -x
        x = a * (1.0 - 1.0 / (9.0 * a) - x / (3.0 * math.sqrt(a))) ** 3
        if x <= 0.0:
            x = 1e-3
    else:
        t = 1.0 - a * (0.253 + a * 0.12)
        if p < t:
            x = (p / t) ** (1.0 / a)
        else:
            x = 1.0 - math.log(1.0 - (p - t) / (1.0 - t))
    if x < 1e-280:
        # so small that P(a, x) = x^a / Gamma(a+1) to machine precision
        lx = (math.log(p) + _lgamma_s(a + 1.0)) / a
        return math.exp(lx) if lx > -744.0 else 0.0
    lo = 0.0
    hi = np.inf
    for _ in range(60):
        if x <= 0.0:
            x = 1e-300
        err = _gammainc_p_s(a, x) - p
        if err > 0.0:
            if x < hi:
                hi = x
        else:
            if x > lo:
                lo = x
        # dP/dx = x^(a-1) e^(-x) / Gamma(a)
        if a > 1.0:
            t = afac * math.exp(-(x - a1) + a1 * (math.log(x) - lna1))
        else:
            t = math.exp(-x + a1 * math.log(x) - gln)
        if t <= 0.0:
            x = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * x + 1.0
            continue
        u = err / t
        step = u / (1.0 - 0.5 * min(1.0, u * (a1 / x - 1.0)))
        xn = x - step
        if xn <= lo or xn >= hi:
            xn = 0.5 * (lo + hi) if np.isfinite(hi) else 0.5 * (lo + 2.0 * x + 1.0)
        if abs(xn - x) <= 1e-15 * (abs(xn) + 1e-300):
            return xn
        x = xn
    return x


@njit(cache=True)
def _gammainc_q_inv_s(a, q):
    """Solve Q(a, x) = q for x."""
    return _gammainc_p_inv_s(a, 1.0 - q)


@njit(cache=True)
def _norm_cdf_s(x):
    """Standard normal cdf via the incomplete gamma tail Q(1/2, x^2/2)."""
    tail = 0.5 * _gammainc_q_s(0.5, 0.5 * x * x)
    return tail if x < 0.0 else 1.0 - tail


# Acklam's rational approximation coefficients for the normal quantile.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


@njit(cache=True)
def _norm_ppf_s(p):
    """Standard normal quantile: Acklam approximation + one Newton step."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    plow = 0.02425
    c, d = _ACK_C, _ACK_D
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    elif p <= 1.0 - plow:
        A, B = _ACK_A, _ACK_B
        q = p - 0.5
        r = q * q
        x = (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q / \
            (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        x -= (_norm_cdf_s(x) - p) / pdf
    return x


# ---------------------------------------------------------------------------
# Batch kernels (jit path): loops over flattened arrays
# ---------------------------------------------------------------------------


@njit(cache=True)
def _map1_jit(which, x, out):
    for i in range(x.shape[0]):
        v = x[i]
        if which == 0:
            out[i] = _lgamma_s(v)
        elif which == 1:
            out[i] = _digamma_s(v)
        elif which == 2:
            out[i] = _trigamma_s(v)
        elif which == 3:
            out[i] = _norm_cdf_s(v)
        else:
            out[i] = _norm_ppf_s(v)


@njit(cache=True)
def _map2_jit(which, a, x, out):
    for i in range(x.shape[0]):
        if which == 0:
            out[i] = _gammainc_p_s(a[i], x[i])
        elif which == 1:
            out[i] = _gammainc_q_s(a[i], x[i])
        elif which == 2:
            out[i] = _gammainc_p_inv_s(a[i], x[i])
        else:
            out[i] = _gammainc_q_inv_s(a[i], x[i])


# ---------------------------------------------------------------------------
# Pure-numpy fallback implementations (same algorithms, vectorized)
# ---------------------------------------------------------------------------


def _lgamma_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x < 0.5
    if small.any():
        xs = x[small]
        z = -xs  # (1 - xs) - 1
        a = np.full_like(z, _LANCZOS[0])
        for i in range(1, 9):
            a += _LANCZOS[i] / (z + i)
        t = z + _LANCZOS_G + 0.5
        core = _LN_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(a)
        out[small] = np.log(np.pi / np.sin(np.pi * xs)) - core
    rest = ~small
    if rest.any():
        z = x[rest] - 1.0
        a = np.full_like(z, _LANCZOS[0])
        for i in range(1, 9):
            a += _LANCZOS[i] / (z + i)
        t = z + _LANCZOS_G + 0.5
        out[rest] = _LN_SQRT_2PI + (z + 0.5) * np.log(t) - t + np.log(a)
    return out


def _shifted_series_np(x, trig):
    x = np.array(x, dtype=np.float64, copy=True)
    acc = np.zeros_like(x)
    while True:
        m = x < 10.0
        if not m.any():
            break
        if trig:
            acc[m] += 1.0 / (x[m] * x[m])
        else:
            acc[m] -= 1.0 / x[m]
        x[m] += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    if trig:
        ser = 1.0 + inv * 0.5 + inv2 * (1.0 / 6.0 + inv2 * (-1.0 / 30.0
              + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0
              + inv2 * (5.0 / 66.0 + inv2 * (-691.0 / 2730.0 + inv2 * (7.0 / 6.0)))))))
        return acc + inv * ser
    ser = inv2 * (-1.0 / 12.0 + inv2 * (1.0 / 120.0 + inv2 * (-1.0 / 252.0
          + inv2 * (1.0 / 240.0 + inv2 * (-1.0 / 132.0
          + inv2 * (691.0 / 32760.0 + inv2 * (-1.0 / 12.0)))))))
    return acc + np.log(x) - 0.5 * inv + ser


def _digamma_np(x):
    return _shifted_series_np(x, trig=False)


def _trigamma_np(x):
    return _shifted_series_np(x, trig=True)


def _gammainc_pq_np(a, x, upper):
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    zero = x <= 0.0
    out[zero] = 1.0 if upper else 0.0
    live = ~zero
    if not live.any():
        return out
    av, xv = a[live], x[live]
    lpre = av * np.log(xv) - xv - _lgamma_np(av)
    res = np.empty_like(xv)

    ser = xv < av + 1.0
    if ser.any():
        aa, xx = av[ser], xv[ser]
        term = 1.0 / aa
        total = term.copy()
        active = np.ones(aa.shape, dtype=bool)
        for n in range(1, 10000):
            term[active] *= xx[active] / (aa[active] + n)
            total[active] += term[active]
            active &= np.abs(term) >= np.abs(total) * _EPS
            if not active.any():
                break
        p = total * np.exp(lpre[ser])
        res[ser] = (1.0 - p) if upper else p

    cf = ~ser
    if cf.any():
        aa, xx = av[cf], xv[cf]
        tiny = 1e-300
        b = xx + 1.0 - aa
        c = np.full_like(xx, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        active = np.ones(aa.shape, dtype=bool)
        for i in range(1, 10000):
            idx = np.where(active)[0]
            if idx.size == 0:
                break
            an = -i * (i - aa[idx])
            b[idx] += 2.0
            dn = an * d[idx] + b[idx]
            dn[np.abs(dn) < tiny] = tiny
            cn = b[idx] + an / c[idx]
            cn[np.abs(cn) < tiny] = tiny
            dn = 1.0 / dn
            delta = dn * cn
            h[idx] *= delta
            d[idx] = dn
            c[idx] = cn
            active[idx[np.abs(delta - 1.0) < _EPS]] = False
        q = np.exp(lpre[cf]) * h
        res[cf] = q if upper else 1.0 - q

    out[live] = res
    return out


def _gammainc_p_inv_np(a, p):
    a = np.asarray(a, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    out[p <= 0.0] = 0.0
    out[p >= 1.0] = np.inf
    live = (p > 0.0) & (p < 1.0)
    if not live.any():
        return out
    av, pv = a[live], p[live]
    gln = _lgamma_np(av)
    a1 = av - 1.0

    x = np.empty_like(pv)
    big = av > 1.0
    if big.any():
        pb = pv[big]
        pp = np.where(pb < 0.5, pb, 1.0 - pb)
        t = np.sqrt(-2.0 * np.log(pp))
        x0 = (2.30753 + t * 0.27061) / (1.0 + t * (0.99229 + t * 0.04481)) - t
        x0 = np.where(pb < 0.5, -x0, x0)
        ab = av[big]
        x[big] = np.maximum(1e-3, ab * (1.0 - 1.0 / (9.0 * ab) - x0 / (3.0 * np.sqrt(ab))) ** 3)
    small = ~big
    if small.any():
        ab, pb = av[small], pv[small]
        t = 1.0 - ab * (0.253 + ab * 0.12)
        x[small] = np.where(pb < t, (pb / t) ** (1.0 / ab),
                            1.0 - np.log(np.maximum(1e-300, 1.0 - (pb - t) / (1.0 - t))))
    deno = x < 1e-280
    if deno.any():
        # P(a, x) = x^a / Gamma(a+1) to machine precision down here
        lx = (np.log(pv[deno]) + _lgamma_np(av[deno] + 1.0)) / av[deno]
        x[deno] = np.where(lx > -744.0, np.exp(np.maximum(lx, -745.0)), 0.0)
        done = deno
    else:
        done = np.zeros(x.shape, dtype=bool)

    lo = np.zeros_like(x)
    hi = np.full_like(x, np.inf)
    for _ in range(60):
        x = np.where(~done & (x <= 0.0), 1e-300, x)
        err = _gammainc_pq_np(av, x, upper=False) - pv
        err[done] = 0.0
        hi = np.where(~done & (err > 0.0) & (x < hi), x, hi)
        lo = np.where(~done & (err <= 0.0) & (x > lo), x, lo)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
            logx = np.log(np.maximum(x, 1e-300))
            t = np.where(big,
                         np.exp(a1 * (logx - np.log(np.maximum(a1, 1e-300)))
                                - (x - a1) + a1 * (np.log(np.maximum(a1, 1e-300)) - 1.0) - gln),
                         np.exp(-x + a1 * logx - gln))
            u = err / np.maximum(t, 1e-300)
            step = u / (1.0 - 0.5 * np.minimum(1.0, u * (a1 / np.maximum(x, 1e-300) - 1.0)))
        fallback = 0.5 * (lo + np.where(np.isfinite(hi), hi, 2.0 * x + 1.0))
        xn = np.where(t > 0.0, x - step, fallback)
        xn = np.where((xn <= lo) | (xn >= hi), fallback, xn)
        xn = np.where(done, x, xn)
        if np.all(np.abs(xn - x) <= 1e-15 * (np.abs(xn) + 1e-300)):
            x = xn
            break
        x = xn
    out[live] = x
    return out


def _norm_cdf_np(x):
    x = np.asarray(x, dtype=np.float64)
    tail = 0.5 * _gammainc_pq_np(np.full_like(x, 0.5), 0.5 * x * x, upper=True)
    return np.where(x < 0.0, tail, 1.0 - tail)


def _norm_ppf_np(p):
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    out[p <= 0.0] = -np.inf
    out[p >= 1.0] = np.inf
    live = (p > 0.0) & (p < 1.0)
    if not live.any():
        return out
    pv = p[live]
    x = np.empty_like(pv)
    plow = 0.02425
    lo = pv < plow
    mid = (pv >= plow) & (pv <= 1.0 - plow)
    hip = pv > 1.0 - plow
    c, d = _ACK_C, _ACK_D
    if lo.any():
        q = np.sqrt(-2.0 * np.log(pv[lo]))
        x[lo] = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
                ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if mid.any():
        A, B = _ACK_A, _ACK_B
        q = pv[mid] - 0.5
        r = q * q
        x[mid] = (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q / \
                 (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    if hip.any():
        q = np.sqrt(-2.0 * np.log(1.0 - pv[hip]))
        x[hip] = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
                 ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    x = x - (_norm_cdf_np(x) - pv) / pdf
    out[live] = x
    return out


# ---------------------------------------------------------------------------
# Public API: scalar in -> float out, array in -> ndarray out
# ---------------------------------------------------------------------------


def _dispatch1(which, scalar_fn, np_fn, x):
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(scalar_fn(float(x)))
    x = np.ascontiguousarray(x, dtype=np.float64)
    if NUMBA_ENABLED:
        flat = x.ravel()
        out = np.empty_like(flat)
        _map1_jit(which, flat, out)
        return out.reshape(x.shape)
    return np_fn(x)


def _dispatch2(which, scalar_fn, np_fn, a, x):
    if (np.isscalar(a) or np.ndim(a) == 0) and (np.isscalar(x) or np.ndim(x) == 0):
        return float(scalar_fn(float(a), float(x)))
    a, x = np.broadcast_arrays(np.asarray(a, dtype=np.float64),
                               np.asarray(x, dtype=np.float64))
    if NUMBA_ENABLED:
        af = np.ascontiguousarray(a).ravel()
        xf = np.ascontiguousarray(x).ravel()
        out = np.empty_like(xf)
        _map2_jit(which, af, xf, out)
        return out.reshape(x.shape)
    return np_fn(a, x)


def _check_shape(a):
    if np.any(np.asarray(a, dtype=np.float64) <= 0.0):
        raise ValueError("gamma shape parameter must be positive")


def loggamma(x):
    """log Gamma(x) for x > 0."""
    return _dispatch1(0, _lgamma_s, _lgamma_np, x)


def digamma(x):
    """psi(x) = d/dx log Gamma(x), x > 0."""
    return _dispatch1(1, _digamma_s, _digamma_np, x)


def trigamma(x):
    """psi'(x), x > 0."""
    return _dispatch1(2, _trigamma_s, _trigamma_np, x)


def norm_cdf(x):
    """Standard normal cumulative distribution function."""
    return _dispatch1(3, _norm_cdf_s, _norm_cdf_np, x)


def norm_ppf(p):
    """Standard normal quantile function."""
    return _dispatch1(4, _norm_ppf_s, _norm_ppf_np, p)


def gammainc_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    _check_shape(a)
    return _dispatch2(0, _gammainc_p_s, lambda aa, xx: _gammainc_pq_np(aa, xx, False), a, x)


def gammainc_q(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    _check_shape(a)
    return _dispatch2(1, _gammainc_q_s, lambda aa, xx: _gammainc_pq_np(aa, xx, True), a, x)


def gammainc_p_inv(a, p):
    """Inverse of P(a, .): x such that P(a, x) = p."""
    _check_shape(a)
    return _dispatch2(2, _gammainc_p_inv_s, _gammainc_p_inv_np, a, p)


def gammainc_q_inv(a, q):
    """Inverse of Q(a, .): x such that Q(a, x) = q."""
    _check_shape(a)
    return _dispatch2(
        3, _gammainc_q_inv_s,
        lambda aa, qq: _gammainc_p_inv_np(aa, 1.0 - np.asarray(qq, dtype=np.float64)),
        a, q)


class SpecialFnTable:
    """Bundle of the implemented special functions (introspection helper)."""

    def __init__(self):
        self.loggamma = loggamma
        self.digamma = digamma
        self.trigamma = trigamma
        self.gammainc_p = gammainc_p
        self.gammainc_q = gammainc_q
        self.gammainc_p_inv = gammainc_p_inv
        self.gammainc_q_inv = gammainc_q_inv
        self.norm_cdf = norm_cdf
        self.norm_ppf = norm_ppf


def special_functions():
    """Return the table of special-function implementations."""
    return SpecialFnTable()
