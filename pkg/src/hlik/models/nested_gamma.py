"""Poisson-gamma-gamma hierarchy and its negative-binomial collapse.

y_ij | u1_i, u2_ij ~ Poisson(exp(x_ij' beta) u1_i u2_ij) with independent
u1_i ~ Gamma(1/lam1, 1/lam1) and u2_ij ~ Gamma(1/lam2, 1/lam2). Integrating
u2 analytically gives y_ij | u1_i ~ NB(mean mu_ij, dispersion lam2), so the
marginal likelihood only needs the n cluster-level latents. Latents are
handled on the log scale (v1, v2).
"""

from dataclasses import dataclass

import numpy as np

from .. import special as sp
from ..data import ClusteredDataset, FixedParams, LatentVector
from ..dists import Gamma
from ..errors import DomainError


@dataclass
class NestedGammaSpec:
    beta: np.ndarray
    lam1: float
    lam2: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.lam1 <= 0 or self.lam2 <= 0:
            raise DomainError("lam1 and lam2 must be positive")

    def to_theta(self):
        return FixedParams(beta=self.beta, dispersions={"lam1": self.lam1, "lam2": self.lam2})

    def model(self):
        return NestedGammaModel(n_coef=self.beta.shape[0])


def _log_gamma_density_v(v, shape, rate):
    """Log density of v = log(u) when u ~ Gamma(shape, rate)."""
    return (shape * np.log(rate) - sp.loggamma(shape)
            + shape * v - rate * np.exp(v))


def nb_logpmf(y, mu, lam):
    """Negative binomial log pmf with mean mu and gamma dispersion lam.

    The collapse of Poisson(mu * u2) over u2 ~ Gamma(1/lam, 1/lam).
    """
    r = 1.0 / lam
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    return (sp.loggamma(y + r) - sp.loggamma(r) - sp.loggamma(y + 1.0)
            + r * (np.log(r) - np.log(r + mu))
            + y * (np.log(mu) - np.log(r + mu)))


class NestedGammaModel:
    """Three-level counts model; latent layout is [v1 (n), v2 (N)]."""

    response_kind = "count"
    latent_scale = "v"

    def __init__(self, n_coef=1):
        self.n_coef = int(n_coef)

    def theta_names(self):
        return [f"beta{j}" for j in range(self.n_coef)] + ["lam1", "lam2"]

    def theta_to_vector(self, theta):
        return np.asarray([*theta.beta, theta["lam1"], theta["lam2"]], dtype=np.float64)

    def vector_to_theta(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return FixedParams(beta=vec[:-2].copy(),
                           dispersions={"lam1": float(vec[-2]), "lam2": float(vec[-1])})

    def n_latent(self, data):
        return data.n_clusters + data.n_obs

    def _mu0(self, theta, data):
        if theta.beta.shape[0] != data.p:
            raise DomainError("beta dimension does not match covariates")
        return np.exp(data.X @ theta.beta)

    # --- joint pieces -------------------------------------------------------

    def loglik_parts(self, theta, data, v1, v2):
        mu0 = self._mu0(theta, data)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        mu = mu0 * np.exp(v1[data.index] + v2)
        cond = float(np.sum(data.y * np.log(mu) - mu - sp.loggamma(data.y + 1.0)))
        prior = float(np.sum(_log_gamma_density_v(v1, r1, r1))
                      + np.sum(_log_gamma_density_v(v2, r2, r2)))
        mu_nb = mu0 * np.exp(v1[data.index])
        collapsed = float(np.sum(nb_logpmf(data.y, mu_nb, theta["lam2"]))
                          + np.sum(_log_gamma_density_v(v1, r1, r1)))
        return {
            "loglik_given_latents": cond,
            "latent_log_densities": prior,
            "nb_collapsed_loglik": collapsed,
        }

    def ell_e(self, theta, v, data):
        n = data.n_clusters
        parts = self.loglik_parts(theta, data, v[:n], v[n:])
        return parts["loglik_given_latents"] + parts["latent_log_densities"]

    def ell_e_nb(self, theta, v1, data):
        """NB-collapsed extended loglik over the cluster latents only."""
        parts = self.loglik_parts(theta, data, v1, np.zeros(data.n_obs))
        return parts["nb_collapsed_loglik"]

    # --- joint inner mode by conjugate coordinate ascent ----------------------

    def vtilde_joint(self, theta, data, tol=1e-12, max_iter=500):
        mu0 = self._mu0(theta, data)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        u1 = np.ones(data.n_clusters)
        u2 = np.ones(data.n_obs)
        for _ in range(max_iter):
            m1 = data.cluster_sums(mu0 * u2)
            u1_new = (data.cluster_sums(data.y) + r1) / (m1 + r1)
            mu2 = mu0 * u1_new[data.index]
            u2_new = (data.y + r2) / (mu2 + r2)
            delta = max(np.max(np.abs(u1_new - u1)), np.max(np.abs(u2_new - u2)))
            u1, u2 = u1_new, u2_new
            if delta < tol:
                break
        return np.log(u1), np.log(u2)

    def hess_vv_joint(self, theta, v1, v2, data):
        """Dense Hessian of ell_e over the stacked (v1, v2) latents."""
        n, N = data.n_clusters, data.n_obs
        mu0 = self._mu0(theta, data)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        mu = mu0 * np.exp(v1[data.index] + v2)
        H = np.zeros((n + N, n + N))
        d1 = -data.cluster_sums(mu) - r1 * np.exp(v1)
        H[:n, :n] = np.diag(d1)
        for j in range(N):
            i = data.index[j]
            H[i, n + j] = H[n + j, i] = -mu[j]
        H[n:, n:] = np.diag(-mu - r2 * np.exp(v2))
        return H

    # --- conjugate proposals (appendix construction) --------------------------

    def conjugate_proposals(self, theta, data):
        """Gamma proposals q1, q2 built at the joint inner mode."""
        v1, v2 = self.vtilde_joint(theta, data)
        mu0 = self._mu0(theta, data)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        mu1 = data.cluster_sums(mu0 * np.exp(v2))            # mu_{i+}^(1)
        mu2 = mu0 * np.exp(v1[data.index])                   # mu_{ij}^(2)
        q1 = [Gamma(data.cluster_sums(data.y)[i] + r1, mu1[i] + r1)
              for i in range(data.n_clusters)]
        q2 = [Gamma(data.y[j] + r2, mu2[j] + r2) for j in range(data.n_obs)]
        return q1, q2, (v1, v2)

    # --- batch evaluation for importance sampling -----------------------------

    def ell_e_batch(self, theta, V, data):
        """V has shape (B, n + N) on the log scale."""
        n = data.n_clusters
        mu0 = self._mu0(theta, data)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        V1, V2 = V[:, :n], V[:, n:]
        lin = V1[:, data.index] + V2
        mu = mu0[None, :] * np.exp(lin)
        const = float(-np.sum(sp.loggamma(data.y + 1.0)))
        cond = (data.y * (np.log(mu0)[None, :] + lin) - mu).sum(axis=1) + const
        prior1 = (r1 * np.log(r1) - sp.loggamma(r1)) * n + r1 * np.sum(V1 - np.exp(V1), axis=1)
        prior2 = ((r2 * np.log(r2) - sp.loggamma(r2)) * data.n_obs
                  + r2 * np.sum(V2 - np.exp(V2), axis=1))
        return cond + prior1 + prior2

    def ell_e_nb_batch(self, theta, V1, data):
        n = data.n_clusters
        mu0 = self._mu0(theta, data)
        r1 = 1.0 / theta["lam1"]
        mu = mu0[None, :] * np.exp(V1[:, data.index])
        nb = nb_logpmf(data.y[None, :], mu, theta["lam2"]).sum(axis=1)
        prior1 = (r1 * np.log(r1) - sp.loggamma(r1)) * n + r1 * np.sum(V1 - np.exp(V1), axis=1)
        return nb + prior1

    # --- simulation -----------------------------------------------------------

    def simulate(self, theta, n, m, stream, x_low=-0.5, x_high=0.5):
        beta = theta.beta
        p = beta.shape[0]
        N = n * m
        X = np.ones((N, p))
        if p > 1:
            X[:, 1:] = x_low + (x_high - x_low) * stream.uniform(size=N * (p - 1)).reshape(N, p - 1)
        r1, r2 = 1.0 / theta["lam1"], 1.0 / theta["lam2"]
        u1 = stream.gamma(np.full(n, r1), rate=r1)
        u2 = stream.gamma(np.full(N, r2), rate=r2)
        idx = np.repeat(np.arange(n), m)
        mu = np.exp(X @ beta) * u1[idx] * u2
        y = stream.poisson(mu).astype(np.float64)
        data = ClusteredDataset.from_arrays(X, y, idx, response_kind="count")
        lat = LatentVector(np.concatenate([np.log(u1), np.log(u2)]), scale="v")
        return lat, data


def nested_gamma_loglik_parts(spec_or_model, data, v1, v2, theta=None):
    """Joint pieces of the three-level model plus the NB-collapsed loglik."""
    if isinstance(spec_or_model, NestedGammaSpec):
        model = spec_or_model.model()
        theta = spec_or_model.to_theta() if theta is None else theta
    else:
        model = spec_or_model
        if theta is None:
            raise DomainError("theta required when passing a model")
    v1 = np.atleast_1d(np.asarray(v1, dtype=np.float64))
    v2 = np.atleast_1d(np.asarray(v2, dtype=np.float64))
    if v1.shape[0] != data.n_clusters or v2.shape[0] != data.n_obs:
        raise DomainError("latent dimensions do not match the dataset")
    return model.loglik_parts(theta, data, v1, v2)
