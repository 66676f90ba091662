"""Tiny frozen distributions built on hlik.special (normal, gamma, lognormal).

Used for conditional laws of latent values, plug-in predictive densities and
importance-sampling proposals. ``ppf`` uses the package's own inverse special
functions so sampling by inversion stays smooth in the parameters.
"""

import math

import numpy as np

from . import special as sp

__all__ = ["Normal", "Gamma", "LogNormal"]


class Normal:
    def __init__(self, mean, sd):
        self.mean_ = float(mean)
        self.sd = float(sd)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean_) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2.0 * math.pi)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        return sp.norm_cdf((np.asarray(x, dtype=np.float64) - self.mean_) / self.sd)

    def ppf(self, p):
        return self.mean_ + self.sd * sp.norm_ppf(p)

    def mean(self):
        return self.mean_

    def var(self):
        return self.sd ** 2

    def sample(self, stream, size=None):
        return stream.normal(self.mean_, self.sd, size=size)


class Gamma:
    """Shape/rate parameterization: mean = shape/rate."""

    def __init__(self, shape, rate):
        self.shape = float(shape)
        self.rate = float(rate)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (self.shape * math.log(self.rate) - sp.loggamma(self.shape)
                   + (self.shape - 1.0) * np.log(x) - self.rate * x)
        return np.where(x > 0.0, out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        return sp.gammainc_p(self.shape, self.rate * np.asarray(x, dtype=np.float64))

    def ppf(self, p):
        return sp.gammainc_p_inv(self.shape, p) / self.rate

    def mean(self):
        return self.shape / self.rate

    def var(self):
        return self.shape / self.rate ** 2

    def mode(self):
        if self.shape < 1.0:
            return 0.0
        return (self.shape - 1.0) / self.rate

    def sample(self, stream, size=None):
        return stream.gamma(self.shape, rate=self.rate, size=size)

    def sample_by_inversion(self, uniforms):
        return sp.gammainc_p_inv(self.shape, uniforms) / self.rate


class LogNormal:
    """exp of Normal(mu, sd); used for u = exp(v) conditionals."""

    def __init__(self, mu, sd):
        self.mu = float(mu)
        self.sd = float(sd)

    def logpdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            z = (lx - self.mu) / self.sd
            out = -0.5 * z * z - lx - math.log(self.sd) - 0.5 * math.log(2.0 * math.pi)
        return np.where(x > 0.0, out, -np.inf)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return np.where(x > 0.0, sp.norm_cdf((np.log(np.maximum(x, 1e-300)) - self.mu) / self.sd), 0.0)

    def ppf(self, p):
        return np.exp(self.mu + self.sd * sp.norm_ppf(p))

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sd ** 2)

    def var(self):
        s2 = self.sd ** 2
        return (math.exp(s2) - 1.0) * math.exp(2.0 * self.mu + s2)
