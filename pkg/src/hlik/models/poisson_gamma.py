"""Poisson-gamma hierarchical GLM with log link.

y_ij | u_i ~ Poisson(exp(x_ij' beta) u_i), u_i ~ Gamma(alpha, alpha) so that
E(u) = 1 and Var(u) = 1/alpha. The model works on the Bartlizable scale
v = log u; the conjugate gamma structure gives closed forms for the inner
maximizer, the modification term, and the conditional law of u given y.
"""

from dataclasses import dataclass

import numpy as np

from .. import special as sp
from ..data import ClusteredDataset, FixedParams, LatentVector
from ..dists import Gamma
from ..errors import DomainError
from ..modelcore import HModel


@dataclass
class PoissonGammaSpec:
    beta: np.ndarray
    alpha: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.alpha <= 0:
            raise DomainError("alpha must be positive")

    def to_theta(self):
        return FixedParams(beta=self.beta, dispersions={"alpha": self.alpha})

    def model(self):
        return PoissonGammaModel(n_coef=self.beta.shape[0])


class PoissonGammaModel(HModel):
    latent_scale = "v"
    response_kind = "count"

    def __init__(self, n_coef=1):
        self.n_coef = int(n_coef)

    def theta_names(self):
        return [f"beta{j}" for j in range(self.n_coef)] + ["alpha"]

    def transform_kinds(self):
        return ["free"] * self.n_coef + ["log"]

    def theta_to_vector(self, theta):
        return np.asarray([*theta.beta, theta["alpha"]], dtype=np.float64)

    def vector_to_theta(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return FixedParams(beta=vec[:-1].copy(), dispersions={"alpha": float(vec[-1])})

    def _parts(self, theta, data):
        beta, alpha = theta.beta, theta["alpha"]
        if beta.shape[0] != data.p:
            raise DomainError(f"beta has {beta.shape[0]} entries, data has {data.p} covariates")
        eta = data.X @ beta
        mu0 = np.exp(eta)                      # exp(x'beta), cluster-scaled by u
        ysum = data.cluster_sums(data.y)       # y_{i+}
        musum = data.cluster_sums(mu0)         # mu'_{i+}
        return alpha, eta, mu0, ysum, musum

    def ell_e(self, theta, v, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        u = np.exp(v)
        cond = float(data.y @ (eta + v[data.index]) - musum @ u
                     - np.sum(sp.loggamma(data.y + 1.0)))
        prior = float(alpha * np.sum(v - u) + n * (alpha * np.log(alpha) - sp.loggamma(alpha)))
        return cond + prior

    def ell_e_grad(self, theta, v, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        u = np.exp(v)
        resid = data.y - mu0 * u[data.index]
        g_beta = data.X.T @ resid
        g_alpha = float(np.sum(v - u) + n * (np.log(alpha) + 1.0 - sp.digamma(alpha)))
        g_v = ysum + alpha - (musum + alpha) * u
        return np.concatenate([g_beta, [g_alpha]]), g_v

    def ell_e_hess(self, theta, v, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        p = self.n_coef
        u = np.exp(v)
        w = mu0 * u[data.index]
        h_tt = np.zeros((p + 1, p + 1))
        h_tt[:p, :p] = -(data.X.T * w) @ data.X
        h_tt[p, p] = n * (1.0 / alpha - sp.trigamma(alpha))
        h_tv = np.zeros((p + 1, n))
        for j in range(p):
            h_tv[j] = -data.cluster_sums(mu0 * data.X[:, j]) * u
        h_tv[p] = 1.0 - u
        h_vv = np.diag(-(musum + alpha) * u)
        return h_tt, h_tv, h_vv

    def vtilde(self, theta, data):
        alpha, _, _, ysum, musum = self._parts(theta, data)
        return np.log((ysum + alpha) / (musum + alpha))

    def mod_term(self, theta, data):
        alpha, _, _, ysum, _ = self._parts(theta, data)
        s = ysum + alpha
        return float(np.sum(s - s * np.log(s) + sp.loggamma(s)))

    def mod_term_grad(self, theta, data):
        alpha, _, _, ysum, _ = self._parts(theta, data)
        s = ysum + alpha
        g = np.zeros(self.n_coef + 1)
        g[-1] = float(np.sum(sp.digamma(s) - np.log(s)))
        return g

    def marginal_loglik(self, theta, data):
        """Closed-form marginal log-likelihood (gamma integral per cluster)."""
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        return float(data.y @ eta - np.sum(sp.loggamma(data.y + 1.0))
                     + n * (alpha * np.log(alpha) - sp.loggamma(alpha))
                     + np.sum(sp.loggamma(ysum + alpha)
                              - (ysum + alpha) * np.log(musum + alpha)))

    # --- simulation ---

    def simulate_latent(self, theta, n, stream):
        alpha = theta["alpha"]
        u = stream.gamma(np.full(n, alpha), rate=alpha)
        return np.log(u)

    def simulate(self, theta, n, m, stream, x_low=-0.5, x_high=0.5):
        beta = theta.beta
        p = beta.shape[0]
        N = n * m
        X = np.ones((N, p))
        if p > 1:
            X[:, 1:] = x_low + (x_high - x_low) * stream.uniform(size=N * (p - 1)).reshape(N, p - 1)
        v = self.simulate_latent(theta, n, stream)
        idx = np.repeat(np.arange(n), m)
        mu = np.exp(X @ beta + v[idx])
        y = stream.poisson(mu).astype(np.float64)
        data = ClusteredDataset.from_arrays(X, y, idx, response_kind="count")
        return LatentVector(v, scale="v"), data

    def simulate_given_design(self, theta, data, stream):
        v = self.simulate_latent(theta, data.n_clusters, stream)
        mu = np.exp(data.X @ theta.beta + v[data.index])
        y = stream.poisson(mu).astype(np.float64)
        ds = ClusteredDataset.from_arrays(data.X, y, data.index, response_kind="count")
        return LatentVector(v, scale="v"), ds

    # --- conjugate conditional law (u-scale) ---

    def conditional_latent(self, theta, data, index):
        alpha, _, _, ysum, musum = self._parts(theta, data)
        return Gamma(ysum[index] + alpha, musum[index] + alpha)

    def conditional_all(self, theta, data):
        alpha, _, _, ysum, musum = self._parts(theta, data)
        return [Gamma(ysum[i] + alpha, musum[i] + alpha) for i in range(data.n_clusters)]

    # --- batch evaluation over latent samples V (B, n), v-scale ---

    def ell_e_batch(self, theta, V, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        U = np.exp(V)
        const = float(data.y @ eta - np.sum(sp.loggamma(data.y + 1.0))
                      + n * (alpha * np.log(alpha) - sp.loggamma(alpha)))
        return (const + V @ ysum - U @ musum + alpha * np.sum(V - U, axis=1))

    def grad_theta_batch(self, theta, V, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        U = np.exp(V)
        # beta: X' (y - mu0 * u); alpha: sum(v - u) + n(log a + 1 - psi(a))
        xz = np.stack([data.cluster_sums(mu0 * data.X[:, j]) for j in range(self.n_coef)])
        g_beta = (data.X.T @ data.y)[None, :] - U @ xz.T
        g_alpha = np.sum(V - U, axis=1) + n * (np.log(alpha) + 1.0 - sp.digamma(alpha))
        return np.concatenate([g_beta, g_alpha[:, None]], axis=1)

    def hess_theta_batch(self, theta, V, data):
        alpha, eta, mu0, ysum, musum = self._parts(theta, data)
        n = data.n_clusters
        p = self.n_coef
        B = V.shape[0]
        U = np.exp(V)
        H = np.zeros((B, p + 1, p + 1))
        # per-cluster X' diag(mu0) X pieces, scaled by u_i per sample
        blocks = np.stack([
            (data.X[data.index == i].T * mu0[data.index == i]) @ data.X[data.index == i]
            for i in range(n)])                               # (n, p, p)
        H[:, :p, :p] = -np.einsum("bi,ijk->bjk", U, blocks)
        H[:, p, p] = n * (1.0 / alpha - sp.trigamma(alpha))
        return H


def pg_bup(model_or_spec, data, theta):
    """Conjugate posterior mean of u_i: (y_{i+} + alpha) / (mu'_{i+} + alpha)."""
    model = model_or_spec.model() if isinstance(model_or_spec, PoissonGammaSpec) else model_or_spec
    alpha, _, _, ysum, musum = model._parts(theta, data)
    return LatentVector((ysum + alpha) / (musum + alpha), scale="u")
