"""Exponential observations with an unobserved future draw.

y_1..y_n iid Exponential with mean theta; the random unknown is the future
outcome u = y_{n+1}, independent of the data given theta. Bartlizable scale
v = log u. The data sit in a single cluster and m = 0 for the target.
"""

from dataclasses import dataclass

import numpy as np

from ..data import ClusteredDataset, FixedParams, LatentVector
from ..dists import Gamma
from ..errors import DomainError
from ..modelcore import HModel


@dataclass
class ExpFutureSpec:
    theta: float
    n: int

    def __post_init__(self):
        if self.theta <= 0:
            raise DomainError("theta must be positive")
        if self.n < 1:
            raise DomainError("need at least one observed outcome")

    def to_theta(self):
        return FixedParams(beta=np.zeros(0), dispersions={"theta": self.theta})

    def model(self):
        return ExpFutureModel()


class ExpFutureModel(HModel):
    latent_scale = "v"
    response_kind = "continuous"

    def theta_names(self):
        return ["theta"]

    def transform_kinds(self):
        return ["log"]

    def theta_to_vector(self, theta):
        return np.asarray([theta["theta"]], dtype=np.float64)

    def vector_to_theta(self, vec):
        return FixedParams(beta=np.zeros(0), dispersions={"theta": float(vec[0])})

    def n_latent(self, data):
        return 1

    @staticmethod
    def _t(data):
        if data.n_clusters != 1:
            raise DomainError("exp-future uses a single cluster holding all observations")
        return float(np.sum(data.y)), data.n_obs

    def ell_e(self, theta, v, data):
        th = theta["theta"]
        t, n = self._t(data)
        return -(n + 1) * np.log(th) - (t + np.exp(v[0])) / th + v[0]

    def ell_e_grad(self, theta, v, data):
        th = theta["theta"]
        t, n = self._t(data)
        ev = np.exp(v[0])
        g_t = np.array([-(n + 1) / th + (t + ev) / th ** 2])
        g_v = np.array([1.0 - ev / th])
        return g_t, g_v

    def ell_e_hess(self, theta, v, data):
        th = theta["theta"]
        t, n = self._t(data)
        ev = np.exp(v[0])
        h_tt = np.array([[(n + 1) / th ** 2 - 2.0 * (t + ev) / th ** 3]])
        h_tv = np.array([[ev / th ** 2]])
        h_vv = np.array([[-ev / th]])
        return h_tt, h_tv, h_vv

    def vtilde(self, theta, data):
        return np.array([np.log(theta["theta"])])

    def mod_term(self, theta, data):
        return 1.0

    def mod_term_grad(self, theta, data):
        return np.zeros(1)

    def marginal_loglik(self, theta, data):
        th = theta["theta"]
        t, n = self._t(data)
        return -n * np.log(th) - t / th

    def expected_information(self, theta, data):
        th = theta["theta"]
        _, n = self._t(data)
        return np.array([[(n + 1) / th ** 2, -1.0 / th], [-1.0 / th, 1.0]])

    def jeffreys_log_prior(self, theta, data):
        # marginal Fisher information n / theta^2, so the prior is 1/theta
        return -np.log(theta["theta"])

    def simulate(self, theta, n, m, stream, **kw):
        th = theta["theta"]
        y = stream.exponential(scale=th, size=n)
        u = stream.exponential(scale=th)
        data = ClusteredDataset([(np.zeros((n, 0)), y)])
        return LatentVector(np.array([np.log(u)]), scale="v"), data

    def simulate_given_design(self, theta, data, stream):
        th = theta["theta"]
        y = stream.exponential(scale=th, size=data.n_obs)
        ds = ClusteredDataset([(np.zeros((data.n_obs, 0)), y)])
        u = stream.exponential(scale=th)
        return LatentVector(np.array([np.log(u)]), scale="v"), ds

    def conditional_latent(self, theta, data, index):
        # u independent of y: Exponential(mean theta) = Gamma(1, 1/theta)
        return Gamma(1.0, 1.0 / theta["theta"])


def ex3_quantities(spec_or_model, data):
    """Point estimates and the u-scale variance pieces of the worked example.

    theta_hat = ybar, u_hat = theta_hat, Var(u_hat - u) targets
    theta^2 (1/n + 1), and the observed-information estimator is
    I^{uu} = theta_hat^2 / n + theta_hat^2.
    """
    t = float(np.sum(data.y))
    n = data.n_obs
    if n < 1:
        raise DomainError("need at least one observation")
    theta_hat = t / n
    if theta_hat <= 0:
        raise DomainError("degenerate data: all observations zero")
    return {
        "theta_hat": theta_hat,
        "v_hat": np.log(theta_hat),
        "u_hat": theta_hat,
        "var_uhat_minus_u": theta_hat ** 2 * (1.0 / n + 1.0),
        "I_uu_hat": theta_hat ** 2 / n + theta_hat ** 2,
    }
