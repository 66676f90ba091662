"""Confidence and predictive distributions, and interval constructors.

Exact closed-form CD/PD pairs are available for the two worked exponential
examples (sufficient statistic / pivot constructions); every other model goes
through the approximate predictive distributions C1-C3, which mix the
conditional law of the latent over a weight on theta (Jeffreys posterior,
normalized likelihood, or the asymptotic normal of the estimator).

All intervals are central (equal-tail).
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import special as sp
from .data import FixedParams
from .dists import Gamma
from .errors import DomainError, NumericalError, UnsupportedOperationError
from .estimate import mhle_fit, variance_estimates
from .modelcore import h_loglik_profile
from .rng import rng_streams

__all__ = [
    "DensityCurve", "Interval", "HConfidenceDensity",
    "ex3_cd", "ex3_pd", "ex4_cd", "ex4_pd", "h_confidence_density",
    "wald_interval", "plugin_pd", "approx_pd", "simultaneous_pis",
]


@dataclass
class DensityCurve:
    """A distribution over a scalar unknown: pdf, cdf and exact quantiles."""

    support: tuple
    pdf: Callable
    cdf: Callable
    quantile: Callable
    kind: str  # "cd" | "pd" | "joint"

    def central_interval(self, alpha, target, method):
        if not 0.0 < alpha < 1.0:
            raise DomainError("alpha must be in (0, 1)")
        lo = float(self.quantile(alpha / 2.0))
        hi = float(self.quantile(1.0 - alpha / 2.0))
        return Interval(lower=lo, upper=hi, level=1.0 - alpha, target=target, method=method)

    def mean(self, points=4096):
        """Numerical mean via quantile sampling (midpoint rule in p-space)."""
        ps = (np.arange(points) + 0.5) / points
        return float(np.mean(self.quantile(ps)))

    def var(self, points=4096):
        ps = (np.arange(points) + 0.5) / points
        q = self.quantile(ps)
        return float(np.var(q))


@dataclass
class Interval:
    lower: float
    upper: float
    level: float
    target: str   # "fixed" | "future-latent" | "realized-latent"
    method: str   # "cd" | "pd" | "wald" | "plugin" | "c1" | "c2" | "c3"
    cluster: Optional[int] = None

    def __post_init__(self):
        if self.lower >= self.upper and not (self.lower == self.upper):
            raise DomainError("interval bounds out of order")

    def contains(self, x):
        return self.lower <= x <= self.upper


def _curve_from_dist(dist, kind, support=(0.0, np.inf)):
    return DensityCurve(support=support, pdf=dist.pdf, cdf=dist.cdf,
                        quantile=dist.ppf, kind=kind)


# ---------------------------------------------------------------------------
# Exact CD/PD for the worked exponential examples
# ---------------------------------------------------------------------------


def ex3_cd(t, n):
    """Confidence density of the exponential mean given the sum t of n draws.

    c(theta) = t^n exp(-t/theta) / (theta^(n+1) Gamma(n)); the cdf is the
    upper incomplete gamma Q(n, t/theta), so quantiles come from its inverse.
    """
    t = float(t)
    n = int(n)
    if t <= 0 or n < 1:
        raise DomainError("need t > 0 and n >= 1")
    lognorm = n * math.log(t) - sp.loggamma(n)

    def pdf(theta):
        theta = np.asarray(theta, dtype=np.float64)
        return np.exp(lognorm - t / theta - (n + 1) * np.log(theta))

    def cdf(theta):
        theta = np.asarray(theta, dtype=np.float64)
        return sp.gammainc_q(n, t / theta)

    def quantile(p):
        return t / sp.gammainc_q_inv(n, p)

    return DensityCurve(support=(0.0, np.inf), pdf=pdf, cdf=cdf, quantile=quantile, kind="cd")


def ex3_pd(t, n):
    """Predictive density of a future draw: c(u) = n t^n (t+u)^(-(n+1))."""
    t = float(t)
    n = int(n)
    if t <= 0 or n < 1:
        raise DomainError("need t > 0 and n >= 1")

    def pdf(u):
        u = np.asarray(u, dtype=np.float64)
        return n * t ** n * (t + u) ** (-(n + 1.0))

    def cdf(u):
        u = np.asarray(u, dtype=np.float64)
        return 1.0 - (t / (t + u)) ** n

    def quantile(p):
        p = np.asarray(p, dtype=np.float64)
        return t * ((1.0 - p) ** (-1.0 / n) - 1.0)

    return DensityCurve(support=(0.0, np.inf), pdf=pdf, cdf=cdf, quantile=quantile, kind="pd")


def ex4_cd(t, m):
    """Confidence density for the latent exponential rate model:
    c(theta) = m t^m / (theta + t)^(m+1)."""
    t = float(t)
    m = int(m)
    if t <= 0 or m < 1:
        raise DomainError("need t > 0 and m >= 1")

    def pdf(theta):
        theta = np.asarray(theta, dtype=np.float64)
        return m * t ** m * (theta + t) ** (-(m + 1.0))

    def cdf(theta):
        theta = np.asarray(theta, dtype=np.float64)
        return 1.0 - (t / (theta + t)) ** m

    def quantile(p):
        p = np.asarray(p, dtype=np.float64)
        return t * ((1.0 - p) ** (-1.0 / m) - 1.0)

    return DensityCurve(support=(0.0, np.inf), pdf=pdf, cdf=cdf, quantile=quantile, kind="cd")


def ex4_pd(t, m):
    """Predictive density of the realized rate u: Gamma(shape m, rate t)."""
    t = float(t)
    m = int(m)
    if t <= 0 or m < 1:
        raise DomainError("need t > 0 and m >= 1")
    return _curve_from_dist(Gamma(m, t), kind="pd")


@dataclass
class HConfidenceDensity:
    """Joint confidence density over (theta, u) whose marginals are CD and PD."""

    pdf: Callable                 # pdf(theta, u)
    theta_marginal: DensityCurve
    u_marginal: DensityCurve
    c0: Callable                  # modification term c0(theta, u)
    c_prime: Optional[Callable] = None   # realized-value construction, example 4


def h_confidence_density(example, t, shape):
    """Joint h-confidence for worked example 3 or 4.

    Example 3: c_h(theta, u) = t^n exp(-(t+u)/theta) / (theta^(n+2) Gamma(n)).
    Example 4: c_h(theta, u) = t^m u^m exp(-u (theta+t)) / Gamma(m).
    """
    t = float(t)
    k = int(shape)
    if example == 3:
        lognorm = k * math.log(t) - sp.loggamma(k)

        def pdf(theta, u):
            theta = np.asarray(theta, dtype=np.float64)
            u = np.asarray(u, dtype=np.float64)
            return np.exp(lognorm - (t + u) / theta - (k + 2) * np.log(theta))

        def c0(theta, u):
            # c(theta)/L(theta) = t^n / (theta Gamma(n))
            theta = np.asarray(theta, dtype=np.float64)
            return np.exp(lognorm) / theta

        return HConfidenceDensity(pdf=pdf, theta_marginal=ex3_cd(t, k),
                                  u_marginal=ex3_pd(t, k), c0=c0)
    if example == 4:
        lognorm = k * math.log(t) - sp.loggamma(k)

        def pdf(theta, u):
            theta = np.asarray(theta, dtype=np.float64)
            u = np.asarray(u, dtype=np.float64)
            return np.exp(lognorm + k * np.log(u) - u * (theta + t))

        def c0(theta, u):
            theta = np.asarray(theta, dtype=np.float64)
            return np.exp(lognorm) / theta

        def c_prime(theta, u):
            return u * np.exp(-u * np.asarray(theta, dtype=np.float64))

        return HConfidenceDensity(pdf=pdf, theta_marginal=ex4_cd(t, k),
                                  u_marginal=ex4_pd(t, k), c0=c0, c_prime=c_prime)
    raise DomainError("example must be 3 or 4")


# ---------------------------------------------------------------------------
# Wald and plug-in comparators
# ---------------------------------------------------------------------------


def wald_interval(fit, variance, coordinate, alpha, target="fixed", model=None):
    """estimate +/- z_{1-alpha/2} sqrt(var) for one coordinate of (theta, v).

    ``coordinate`` indexes the stacked [theta vector, v] layout used by the
    variance estimate; pass the model so the theta layout is unambiguous.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must be in (0, 1)")
    var = float(variance.cov[coordinate, coordinate])
    if var < 0:
        raise NumericalError("negative variance entry")
    if model is not None:
        tvec = model.theta_to_vector(fit.theta_hat)
    else:
        tvec = np.asarray([*fit.theta_hat.beta, *fit.theta_hat.dispersions.values()])
    full = np.concatenate([tvec, fit.v_hat.values])
    est = float(full[coordinate])
    half = float(sp.norm_ppf(1.0 - alpha / 2.0)) * math.sqrt(var)
    return Interval(lower=est - half, upper=est + half, level=1.0 - alpha,
                    target=target, method="wald")


def plugin_pd(model, fit, data, latent_index):
    """Conditional density of the latent at theta = theta_hat (plug-in PD)."""
    dist = model.conditional_latent(fit.theta_hat, data, latent_index)
    return _curve_from_dist(dist, kind="pd",
                            support=(-np.inf, np.inf) if dist.__class__.__name__ == "Normal"
                            else (0.0, np.inf))


# ---------------------------------------------------------------------------
# Approximate predictive distributions C1-C3
# ---------------------------------------------------------------------------


def _mixture_curve(dists, weights, kind="pd"):
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()

    def pdf(x):
        x = np.asarray(x, dtype=np.float64)
        acc = np.zeros_like(x, dtype=np.float64)
        for w, d in zip(weights, dists):
            acc = acc + w * d.pdf(x)
        return acc

    def cdf(x):
        x = np.asarray(x, dtype=np.float64)
        acc = np.zeros_like(x, dtype=np.float64)
        for w, d in zip(weights, dists):
            acc = acc + w * d.cdf(x)
        return acc

    lo = min(float(d.ppf(1e-12)) for d in dists)
    hi = max(float(d.ppf(1.0 - 1e-12)) for d in dists)

    def quantile(p):
        p_arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
        out = np.empty_like(p_arr)
        for i, pi in enumerate(p_arr):
            out[i] = _invert_cdf(cdf, pi, lo, hi)
        return float(out[0]) if np.ndim(p) == 0 else out

    return DensityCurve(support=(lo, hi), pdf=pdf, cdf=cdf, quantile=quantile, kind=kind)


def _invert_cdf(cdf, p, lo, hi, tol=1e-12, max_iter=200):
    a, b = lo, hi
    fa, fb = cdf(a) - p, cdf(b) - p
    for _ in range(200):
        if fa <= 0.0:
            break
        a = a - max(1.0, abs(a)) if a < 0 or lo < 0 else a * 0.5
        fa = cdf(a) - p
    for _ in range(200):
        if fb >= 0.0:
            break
        b = b * 2.0 + 1.0
        fb = cdf(b) - p
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        fm = cdf(mid) - p
        if fm <= 0.0:
            a = mid
        else:
            b = mid
        if b - a < tol * max(1.0, abs(mid)):
            break
    return 0.5 * (a + b)


def approx_pd(model, data, method, latent_index, fit=None, n_grid=None,
              B=10000, seed=0, cov_tt=None):
    """Approximate predictive distribution for one latent coordinate.

    C1 mixes the conditional law of the latent over the Jeffreys posterior of
    theta, C2 over the normalized likelihood, C3 over the asymptotic normal
    N(theta_hat, I^{theta theta}) by sampling.
    """
    if method not in ("c1", "c2", "c3"):
        raise DomainError("method must be one of c1, c2, c3")
    if fit is None:
        fit = mhle_fit(model, data)
    if method == "c3":
        if B < 1000:
            raise DomainError("C3 needs B >= 1000 samples")
        if cov_tt is None:
            cov_tt = variance_estimates(model, fit, data).cov_tt
        tvec = model.theta_to_vector(fit.theta_hat)
        d = tvec.shape[0]
        stream = rng_streams(seed).stream("c3", latent_index)
        cov = np.atleast_2d(np.asarray(cov_tt, dtype=np.float64))
        if np.allclose(cov, 0.0):
            chol = np.zeros((d, d))
        else:
            chol = np.linalg.cholesky(cov + 1e-14 * np.eye(d) * max(1.0, cov.max()))
        dists = []
        tries = 0
        while len(dists) < B and tries < 20 * B:
            tries += 1
            z = stream.normal(size=d)
            cand = tvec + chol @ z
            try:
                theta = model.vector_to_theta(cand)
            except DomainError:
                continue
            dists.append(model.conditional_latent(theta, data, latent_index))
        if len(dists) < B:
            raise NumericalError("could not draw enough valid theta samples for C3")
        return _mixture_curve(dists, np.ones(len(dists)))

    # quadrature methods: theta dimension <= 3
    kinds = model.transform_kinds()
    d = len(kinds)
    if d > 3:
        raise UnsupportedOperationError("C1/C2 quadrature supports up to 3 fixed parameters")
    if method == "c1" and not hasattr(model, "jeffreys_log_prior"):
        raise UnsupportedOperationError("model does not expose a Jeffreys prior")

    tvec_hat = model.theta_to_vector(fit.theta_hat)
    ref = h_loglik_profile(model, fit.theta_hat, data)

    def log_weight(tvec):
        theta = model.vector_to_theta(tvec)
        lw = h_loglik_profile(model, theta, data) - ref
        if method == "c1":
            lw += model.jeffreys_log_prior(theta, data)
        return lw, theta

    from scipy.integrate import quad

    # integrate on unconstrained coordinates (log for positive parameters)
    from .estimate import _from_unconstrained, _to_unconstrained, _chain_factor
    eta_hat = _to_unconstrained(tvec_hat, kinds)

    if d == 1:
        # segmented so the adaptive rule finds both the peak and the tails
        cuts = [eta_hat[0] - 45.0, eta_hat[0] - 12.0, eta_hat[0] + 12.0, eta_hat[0] + 45.0]

        def weighted(fn):
            def integrand(e):
                tv = _from_unconstrained(np.array([e]), kinds)
                lw, theta = log_weight(tv)
                jac = float(np.prod(np.abs(_chain_factor(tv, kinds))))
                return math.exp(lw) * jac * fn(theta)
            val = 0.0
            for a, b in zip(cuts[:-1], cuts[1:]):
                seg, err = quad(integrand, a, b, limit=300, epsabs=1e-13, epsrel=1e-10)
                val += seg
            if not np.isfinite(val):
                raise NumericalError("quadrature failed to converge")
            return val
    else:
        from scipy.integrate import nquad

        def weighted(fn):
            def integrand(*es):
                tv = _from_unconstrained(np.asarray(es), kinds)
                lw, theta = log_weight(tv)
                jac = float(np.prod(np.abs(_chain_factor(tv, kinds))))
                return math.exp(lw) * jac * fn(theta)
            ranges = [(eta_hat[j] - 8.0, eta_hat[j] + 8.0) for j in range(d)]
            val, err = nquad(integrand, ranges, opts={"limit": 80})
            if not np.isfinite(val):
                raise NumericalError("quadrature failed to converge")
            return val

    norm = weighted(lambda theta: 1.0)
    if norm <= 0:
        raise NumericalError("degenerate weight in C1/C2 quadrature")

    def pdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = np.array([weighted(lambda th, xi=xi:
                                 float(model.conditional_latent(th, data, latent_index).pdf(xi)))
                        for xi in x]) / norm
        return float(out[0]) if np.ndim(x) == 0 else out

    def cdf(x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = np.array([weighted(lambda th, xi=xi:
                                 float(model.conditional_latent(th, data, latent_index).cdf(xi)))
                        for xi in x]) / norm
        return out if out.shape[0] > 1 else float(out[0])

    ref_dist = model.conditional_latent(fit.theta_hat, data, latent_index)
    lo = float(ref_dist.ppf(1e-10))
    hi = float(ref_dist.ppf(1.0 - 1e-10))

    def quantile(p):
        p_arr = np.atleast_1d(np.asarray(p, dtype=np.float64))
        out = np.array([_invert_cdf(lambda x: np.atleast_1d(cdf(x))[0], pi, lo, hi, tol=1e-10)
                        for pi in p_arr])
        return float(out[0]) if np.ndim(p) == 0 else out

    return DensityCurve(support=(lo, hi), pdf=pdf, cdf=cdf, quantile=quantile, kind="pd")


def simultaneous_pis(model, data, alpha, B, seed, fit=None):
    """Per-cluster C3 predictive intervals for all realized latent values.

    Returns (intervals, flags) with flags +1 / -1 / 0 for clusters whose
    interval lies entirely above / below / across 1.
    """
    if fit is None:
        fit = mhle_fit(model, data)
    cov_tt = variance_estimates(model, fit, data).cov_tt
    tvec = model.theta_to_vector(fit.theta_hat)
    d = tvec.shape[0]
    stream = rng_streams(seed).stream("simultaneous")
    chol = np.linalg.cholesky(cov_tt + 1e-14 * np.eye(d) * max(1.0, cov_tt.max()))
    thetas = []
    tries = 0
    while len(thetas) < B and tries < 20 * B:
        tries += 1
        cand = tvec + chol @ stream.normal(size=d)
        try:
            thetas.append(model.vector_to_theta(cand))
        except DomainError:
            continue
    intervals = []
    flags = []
    for i in range(data.n_clusters):
        dists = [model.conditional_latent(th, data, i) for th in thetas]
        curve = _mixture_curve(dists, np.ones(len(dists)))
        iv = curve.central_interval(alpha, target="realized-latent", method="c3")
        iv.cluster = i
        intervals.append(iv)
        flags.append(1 if iv.lower > 1.0 else (-1 if iv.upper < 1.0 else 0))
    return intervals, flags
