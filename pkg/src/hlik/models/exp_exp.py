"""Exponential-exponential hierarchy with a single random rate.

U ~ Exponential(rate theta) and y_j | u ~ Exponential(rate u), j = 1..m, in
one cluster (n = 1). Bartlizable scale v = log u. The fixed parameter can be
carried either as theta or as xi = 1/theta = E(U); MHLEs are invariant to
this choice.
"""

from dataclasses import dataclass

import numpy as np

from .. import special as sp
from ..data import ClusteredDataset, FixedParams, LatentVector
from ..dists import Gamma
from ..errors import DomainError
from ..modelcore import HModel


@dataclass
class ExpExpSpec:
    theta: float
    m: int

    def __post_init__(self):
        if self.theta <= 0:
            raise DomainError("theta must be positive")
        if self.m < 1:
            raise DomainError("need at least one observation per cluster")

    def to_theta(self):
        return FixedParams(beta=np.zeros(0), dispersions={"theta": self.theta})

    def model(self, param="theta"):
        return ExpExpModel(param=param)


class ExpExpModel(HModel):
    latent_scale = "v"
    response_kind = "continuous"

    def __init__(self, param="theta"):
        if param not in ("theta", "xi"):
            raise DomainError("param must be 'theta' or 'xi'")
        self.param = param

    def theta_names(self):
        return [self.param]

    def transform_kinds(self):
        return ["log"]

    def theta_to_vector(self, theta):
        return np.asarray([theta[self.param]], dtype=np.float64)

    def vector_to_theta(self, vec):
        return FixedParams(beta=np.zeros(0), dispersions={self.param: float(vec[0])})

    def n_latent(self, data):
        return 1

    def _rate(self, theta):
        val = theta[self.param]
        return val if self.param == "theta" else 1.0 / val

    @staticmethod
    def _t(data):
        if data.n_clusters != 1:
            raise DomainError("exp-exp has a single cluster (n = 1)")
        return float(np.sum(data.y)), data.n_obs

    def ell_e(self, theta, v, data):
        th = self._rate(theta)
        t, m = self._t(data)
        return np.log(th) + (m + 1) * v[0] - np.exp(v[0]) * (th + t)

    def ell_e_grad(self, theta, v, data):
        th = self._rate(theta)
        t, m = self._t(data)
        ev = np.exp(v[0])
        g_th = 1.0 / th - ev
        if self.param == "xi":
            g_th *= -th * th  # chain rule through theta = 1/xi
        return np.array([g_th]), np.array([(m + 1) - ev * (th + t)])

    def ell_e_hess(self, theta, v, data):
        t, m = self._t(data)
        ev = np.exp(v[0])
        if self.param == "theta":
            th = theta["theta"]
            h_tt = np.array([[-1.0 / th ** 2]])
            h_tv = np.array([[-ev]])
        else:
            xi = theta["xi"]
            # ell_e(xi, v) = -log xi + (m+1) v - e^v (1/xi + t)
            h_tt = np.array([[1.0 / xi ** 2 - 2.0 * ev / xi ** 3]])
            h_tv = np.array([[ev / xi ** 2]])
        h_vv = np.array([[-ev * ((1.0 / theta["xi"] if self.param == "xi" else theta["theta"]) + t)]])
        return h_tt, h_tv, h_vv

    def vtilde(self, theta, data):
        th = self._rate(theta)
        t, m = self._t(data)
        return np.array([np.log((m + 1) / (th + t))])

    def mod_term(self, theta, data):
        _, m = self._t(data)
        return float((m + 1) * (1.0 - np.log(m + 1.0)) + sp.loggamma(m + 1.0))

    def mod_term_grad(self, theta, data):
        return np.zeros(1)

    def marginal_loglik(self, theta, data):
        th = self._rate(theta)
        t, m = self._t(data)
        return float(np.log(th) - (m + 1) * np.log(th + t) + sp.loggamma(m + 1.0))

    def expected_information(self, theta, data):
        _, m = self._t(data)
        if self.param == "xi":
            xi = theta["xi"]
            return np.array([[xi ** -2, -1.0 / xi], [-1.0 / xi, m + 1.0]])
        th = theta["theta"]
        return np.array([[th ** -2, 1.0 / th], [1.0 / th, m + 1.0]])

    def jeffreys_log_prior(self, theta, data):
        # marginal Fisher information is proportional to 1/theta^2
        return -np.log(theta[self.param])

    def simulate(self, theta, n, m, stream, **kw):
        if n != 1:
            raise DomainError("exp-exp is a single-cluster model (n = 1)")
        th = self._rate(theta)
        u = stream.exponential(scale=1.0 / th)
        y = stream.exponential(scale=1.0 / u, size=m)
        data = ClusteredDataset([(np.zeros((m, 0)), y)])
        return LatentVector(np.array([np.log(u)]), scale="v"), data

    def simulate_given_design(self, theta, data, stream):
        _, m = self._t(data)
        th = self._rate(theta)
        u = stream.exponential(scale=1.0 / th)
        y = stream.exponential(scale=1.0 / u, size=m)
        ds = ClusteredDataset([(np.zeros((m, 0)), y)])
        return LatentVector(np.array([np.log(u)]), scale="v"), ds

    def conditional_latent(self, theta, data, index):
        th = self._rate(theta)
        t, m = self._t(data)
        return Gamma(m + 1.0, th + t)   # u | y


def ex4_quantities(spec_or_model, data):
    """MHLEs and information matrices of the exp-exp worked example.

    Returns theta_hat = ybar, v_hat = -log ybar, u_hat = xi_hat = 1/ybar, the
    expected and observed information on the (xi, v) scale, and the u-scale
    predictors vtilde_prime (log m - log(1/xi + m ybar)) and the best
    predictor of the conditional mean, mutilde_prime = (1/xi + m ybar)/m,
    evaluated at xi = xi_hat.
    """
    t = float(np.sum(data.y))
    m = data.n_obs
    ybar = t / m
    if ybar <= 0:
        raise DomainError("degenerate data: all observations zero")
    xi_hat = 1.0 / ybar
    expected_info = np.array([[xi_hat ** -2, -1.0 / xi_hat], [-1.0 / xi_hat, m + 1.0]])
    observed_info = np.array([[ybar ** 2, -ybar], [-ybar, m + 1.0]])
    vtilde_prime = np.log(m) - np.log(1.0 / xi_hat + t)
    return {
        "theta_hat": ybar,
        "v_hat": -np.log(ybar),
        "u_hat": 1.0 / ybar,
        "xi_hat": xi_hat,
        "expected_info_xi": expected_info,
        "observed_info_xi": observed_info,
        "vtilde_prime": vtilde_prime,
        "mutilde_prime": (1.0 / xi_hat + t) / m,
        "mutilde": (1.0 / xi_hat + t) / (m + 1.0),
    }
