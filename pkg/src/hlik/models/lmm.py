"""Linear mixed model with a cluster random intercept.

y_ij | v_i ~ N(x_ij' beta + v_i, sigma2), with v ~ N(0, Sigma) where Sigma is
either lambda * I (independent effects) or lambda * AR1(rho) across the
cluster index. All h-likelihood ingredients are closed form; the AR(1)
precision matrix is tridiagonal so the inner solve is O(n).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from ..data import FixedParams, LatentVector
from ..dists import Normal
from ..errors import DomainError, UnsupportedOperationError
from ..modelcore import HModel

_LOG_2PI = 1.8378770664093453


@dataclass
class LmmSpec:
    """Generative parameter values for simulation studies."""

    beta: np.ndarray
    sigma2: float
    lam: float
    correlation: str = "none"   # "none" | "ar1"
    rho: Optional[float] = None

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        if self.sigma2 <= 0 or self.lam <= 0:
            raise DomainError("sigma2 and lambda must be positive")
        if self.correlation == "ar1":
            if self.rho is None or not -1.0 < self.rho < 1.0:
                raise DomainError("ar1 correlation needs rho in (-1, 1)")
        elif self.correlation != "none":
            raise DomainError(f"unknown correlation kind {self.correlation!r}")

    def to_theta(self):
        disp = {"sigma2": self.sigma2, "lambda": self.lam}
        if self.correlation == "ar1":
            disp["rho"] = self.rho
        return FixedParams(beta=self.beta, dispersions=disp)

    def model(self, **kwargs):
        return LmmModel(n_coef=self.beta.shape[0], correlation=self.correlation, **kwargs)


# --- AR(1) helpers ----------------------------------------------------------


def _ar1_T_mul(v, rho):
    """T(rho) v with T = (1 - rho^2) * C(rho)^{-1}, tridiagonal."""
    n = v.shape[0]
    out = v.copy()
    if n > 1:
        out[1:-1] += rho * rho * v[1:-1]
        out[:-1] -= rho * v[1:]
        out[1:] -= rho * v[:-1]
    return out


def _ar1_Tprime_mul(v, rho):
    """dT/drho applied to v."""
    n = v.shape[0]
    out = np.zeros_like(v)
    if n > 1:
        out[1:-1] = 2.0 * rho * v[1:-1]
        out[:-1] -= v[1:]
        out[1:] -= v[:-1]
    return out


def _ar1_solve_banded(diag, rho_scaled, rhs):
    """Solve (diag(diag) + tridiag with off-diagonal rho_scaled) x = rhs."""
    n = rhs.shape[0]
    ab = np.zeros((3, n))
    ab[1] = diag
    ab[0, 1:] = rho_scaled
    ab[2, :-1] = rho_scaled
    return solve_banded((1, 1), ab, rhs)


class LmmModel(HModel):
    latent_scale = "v"
    response_kind = "continuous"

    def __init__(self, n_coef=1, correlation="none", known_dispersions=None):
        if correlation not in ("none", "ar1"):
            raise DomainError(f"unknown correlation kind {correlation!r}")
        self.n_coef = int(n_coef)
        self.correlation = correlation
        # dispersions listed here are held fixed (not free parameters)
        self.known = dict(known_dispersions or {})

    # --- theta packing ---

    def _disp_names(self):
        names = ["sigma2", "lambda"]
        if self.correlation == "ar1":
            names.append("rho")
        return names

    def _free_disp(self):
        return [d for d in self._disp_names() if d not in self.known]

    def theta_names(self):
        return [f"beta{j}" for j in range(self.n_coef)] + self._free_disp()

    def transform_kinds(self):
        kinds = ["free"] * self.n_coef
        for d in self._free_disp():
            kinds.append("corr" if d == "rho" else "log")
        return kinds

    def theta_to_vector(self, theta):
        vec = [*theta.beta] + [theta[d] for d in self._free_disp()]
        return np.asarray(vec, dtype=np.float64)

    def vector_to_theta(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        p = self.n_coef
        disp = dict(self.known)
        for j, d in enumerate(self._free_disp()):
            disp[d] = float(vec[p + j])
        return FixedParams(beta=vec[:p].copy(), dispersions=disp)

    def _free_rows(self):
        """Indices of the free coordinates within the full [beta, s2, lam(, rho)] layout."""
        p = self.n_coef
        rows = list(range(p))
        for j, d in enumerate(self._disp_names()):
            if d not in self.known:
                rows.append(p + j)
        return np.asarray(rows, dtype=np.int64)

    def _unpack(self, theta):
        rho = theta["rho"] if self.correlation == "ar1" else 0.0
        return theta.beta, theta["sigma2"], theta["lambda"], rho

    # --- latent covariance pieces ---

    def _logdet_sigma(self, lam, rho, n):
        if self.correlation == "ar1":
            return n * np.log(lam) + (n - 1) * np.log(1.0 - rho * rho)
        return n * np.log(lam)

    def _sigma_inv_mul(self, v, lam, rho):
        if self.correlation == "ar1" and v.shape[0] > 1:
            return _ar1_T_mul(v, rho) / ((1.0 - rho * rho) * lam)
        return v / lam

    def _sigma_inv_dense(self, lam, rho, n):
        if self.correlation == "ar1" and n > 1:
            w = 1.0 / (1.0 - rho * rho)
            T = np.zeros((n, n))
            idx = np.arange(n)
            T[idx, idx] = 1.0
            if n > 1:
                T[idx[1:-1], idx[1:-1]] += rho * rho
                T[idx[:-1], idx[1:]] = -rho
                T[idx[1:], idx[:-1]] = -rho
            return T * (w / lam)
        return np.eye(n) / lam

    def _A_pieces(self, theta, data):
        """A = Z'Z/sigma2 + Sigma^{-1}: returns (solve(A, .), logdet A, dense A)."""
        _, sigma2, lam, rho = self._unpack(theta)
        m = data.sizes.astype(np.float64)
        n = data.n_clusters
        if self.correlation == "ar1" and n > 1:
            w = 1.0 / (1.0 - rho * rho)
            diag = m / sigma2 + w / lam
            diag[1:-1] += (rho * rho) * w / lam
            off = -rho * w / lam
            off_arr = np.full(n - 1, off)

            def solve(rhs):
                return _ar1_solve_banded(diag, off_arr, rhs)

            # tridiagonal logdet via the continuant recursion
            # det_k = diag_k * det_{k-1} - off^2 * det_{k-2}: all positive here
            prev2 = 0.0  # log det of the empty matrix
            prev1 = np.log(diag[0])
            for k in range(1, n):
                cur = prev1 + np.log(diag[k] - off * off * np.exp(prev2 - prev1))
                prev2, prev1 = prev1, cur
            logdet = prev1
            A = np.diag(diag)
            A[np.arange(n - 1), np.arange(1, n)] = off
            A[np.arange(1, n), np.arange(n - 1)] = off
            return solve, logdet, A
        diag = m / sigma2 + 1.0 / lam

        def solve(rhs):
            return rhs / diag if rhs.ndim == 1 else rhs / diag[:, None]

        return solve, float(np.sum(np.log(diag))), np.diag(diag)

    # --- likelihood pieces ---

    def ell_e(self, theta, v, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        if beta.shape[0] != data.p:
            raise DomainError(f"beta has {beta.shape[0]} entries, data has {data.p} covariates")
        n = data.n_clusters
        r = data.y - data.X @ beta - v[data.index]
        quad_v = float(v @ self._sigma_inv_mul(v, lam, rho))
        return (-0.5 * data.n_obs * (np.log(sigma2) + _LOG_2PI)
                - 0.5 * float(r @ r) / sigma2
                - 0.5 * n * _LOG_2PI - 0.5 * self._logdet_sigma(lam, rho, n)
                - 0.5 * quad_v)

    def ell_e_grad(self, theta, v, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        n = data.n_clusters
        r = data.y - data.X @ beta - v[data.index]
        rss = float(r @ r)
        zr = data.cluster_sums(r)
        sinv_v = self._sigma_inv_mul(v, lam, rho)
        g_beta = data.X.T @ r / sigma2
        g_s2 = -0.5 * data.n_obs / sigma2 + 0.5 * rss / sigma2 ** 2
        g_lam = -0.5 * n / lam + 0.5 * float(v @ sinv_v) / lam
        g_t = [*g_beta, g_s2, g_lam]
        if self.correlation == "ar1":
            if n > 1:
                w = 1.0 / (1.0 - rho * rho)
                q = float(v @ _ar1_T_mul(v, rho))
                qp = float(2.0 * rho * np.sum(v[1:-1] ** 2) - 2.0 * np.sum(v[:-1] * v[1:]))
                fprime = (qp + 2.0 * rho * q * w) * w
                g_rho = (n - 1) * rho * w - 0.5 * fprime / lam
            else:
                g_rho = 0.0
            g_t.append(g_rho)
        g_v = zr / sigma2 - sinv_v
        return np.asarray(g_t)[self._free_rows()], g_v

    def ell_e_hess(self, theta, v, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        n = data.n_clusters
        p = self.n_coef
        d = p + 2 + (1 if self.correlation == "ar1" else 0)
        r = data.y - data.X @ beta - v[data.index]
        rss = float(r @ r)
        zr = data.cluster_sums(r)
        m = data.sizes.astype(np.float64)
        sinv = self._sigma_inv_dense(lam, rho, n)
        sinv_v = sinv @ v

        h_tt = np.zeros((d, d))
        h_tt[:p, :p] = -(data.X.T @ data.X) / sigma2
        xtr = data.X.T @ r
        h_tt[:p, p] = h_tt[p, :p] = -xtr / sigma2 ** 2
        h_tt[p, p] = 0.5 * data.n_obs / sigma2 ** 2 - rss / sigma2 ** 3
        h_tt[p + 1, p + 1] = 0.5 * n / lam ** 2 - float(v @ sinv_v) / lam ** 2

        h_tv = np.zeros((d, n))
        # X'Z: column i is the covariate sum of cluster i
        xz = np.stack([data.cluster_sums(data.X[:, j]) for j in range(p)]) if p > 0 else np.zeros((0, n))
        h_tv[:p, :] = -xz / sigma2
        h_tv[p, :] = -zr / sigma2 ** 2
        h_tv[p + 1, :] = sinv_v / lam

        if self.correlation == "ar1" and n > 1:
            w = 1.0 / (1.0 - rho * rho)
            Tv = _ar1_T_mul(v, rho)
            Tpv = _ar1_Tprime_mul(v, rho)
            q = float(v @ Tv)
            s_mid = float(np.sum(v[1:-1] ** 2)) if n > 2 else 0.0
            s_adj = float(np.sum(v[:-1] * v[1:])) if n > 1 else 0.0
            qp = 2.0 * rho * s_mid - 2.0 * s_adj
            qpp = 2.0 * s_mid
            wp = 2.0 * rho * w * w
            wpp = 2.0 * w * w + 8.0 * rho * rho * w ** 3
            fprime = qp * w + q * wp
            fsecond = qpp * w + 2.0 * qp * wp + q * wpp
            h_tt[p + 1, d - 1] = h_tt[d - 1, p + 1] = 0.5 * fprime / lam ** 2
            h_tt[d - 1, d - 1] = (n - 1) * (1.0 + rho * rho) * w * w - 0.5 * fsecond / lam
            h_tv[d - 1, :] = -(Tpv * w + 2.0 * rho * w * w * Tv) / lam

        h_vv = -(np.diag(m / sigma2) + sinv)
        rows = self._free_rows()
        return h_tt[np.ix_(rows, rows)], h_tv[rows], h_vv

    def vtilde(self, theta, data):
        beta, sigma2, _, _ = self._unpack(theta)
        r0 = data.y - data.X @ beta
        solve, _, _ = self._A_pieces(theta, data)
        return solve(data.cluster_sums(r0) / sigma2)

    def mod_term(self, theta, data):
        _, logdet, _ = self._A_pieces(theta, data)
        return 0.5 * data.n_clusters * _LOG_2PI - 0.5 * logdet

    def mod_term_grad(self, theta, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        n = data.n_clusters
        m = data.sizes.astype(np.float64)
        solve, _, A = self._A_pieces(theta, data)
        a_inv = np.linalg.inv(A)
        g = np.zeros(self.n_coef + 2 + (1 if self.correlation == "ar1" else 0))
        p = self.n_coef
        g[p] = 0.5 * float(np.sum(m * np.diag(a_inv))) / sigma2 ** 2
        cinv = self._sigma_inv_dense(lam, rho, n) * lam  # C^{-1}
        g[p + 1] = 0.5 * float(np.sum(a_inv * cinv)) / lam ** 2
        if self.correlation == "ar1" and n > 1:
            w = 1.0 / (1.0 - rho * rho)
            idx = np.arange(n)
            Tp = np.zeros((n, n))
            Tp[idx[1:-1], idx[1:-1]] = 2.0 * rho
            Tp[idx[:-1], idx[1:]] = -1.0
            Tp[idx[1:], idx[:-1]] = -1.0
            T = cinv / w
            dcinv = (Tp * (1.0 - rho * rho) + 2.0 * rho * T) * w * w
            g[p + 2] = -0.5 * float(np.sum(a_inv * dcinv)) / lam
        return g[self._free_rows()]

    # --- simulation ---

    def simulate_latent(self, theta, n, stream):
        _, _, lam, rho = self._unpack(theta)
        z = stream.normal(size=n)
        if self.correlation == "ar1":
            v = np.empty(n)
            v[0] = np.sqrt(lam) * z[0]
            scale = np.sqrt(lam * (1.0 - rho * rho))
            for i in range(1, n):
                v[i] = rho * v[i - 1] + scale * z[i]
            return v
        return np.sqrt(lam) * z

    def simulate(self, theta, n, m, stream, x_low=-0.5, x_high=0.5):
        from ..data import ClusteredDataset
        beta, sigma2, _, _ = self._unpack(theta)
        p = beta.shape[0]
        N = n * m
        X = np.ones((N, p))
        if p > 1:
            X[:, 1:] = x_low + (x_high - x_low) * stream.uniform(size=N * (p - 1)).reshape(N, p - 1)
        v = self.simulate_latent(theta, n, stream)
        idx = np.repeat(np.arange(n), m)
        y = X @ beta + v[idx] + np.sqrt(sigma2) * stream.normal(size=N)
        data = ClusteredDataset.from_arrays(X, y, idx)
        return LatentVector(v, scale="v"), data

    def simulate_given_design(self, theta, data, stream):
        from ..data import ClusteredDataset
        beta, sigma2, _, _ = self._unpack(theta)
        v = self.simulate_latent(theta, data.n_clusters, stream)
        y = data.X @ beta + v[data.index] + np.sqrt(sigma2) * stream.normal(size=data.n_obs)
        ds = ClusteredDataset.from_arrays(data.X, y, data.index)
        return LatentVector(v, scale="v"), ds

    def expected_information(self, theta, data):
        """Expected h-information over (beta, v); dispersions must be frozen."""
        if self._free_disp():
            raise UnsupportedOperationError(
                "analytic expected information requires known dispersions")
        _, sigma2, lam, rho = self._unpack(theta)
        n = data.n_clusters
        p = self.n_coef
        xz = np.stack([data.cluster_sums(data.X[:, j]) for j in range(p)]) if p > 0 \
            else np.zeros((0, n))
        info = np.zeros((p + n, p + n))
        info[:p, :p] = data.X.T @ data.X / sigma2
        info[:p, p:] = xz / sigma2
        info[p:, :p] = xz.T / sigma2
        info[p:, p:] = np.diag(data.sizes / sigma2) + self._sigma_inv_dense(lam, rho, n)
        return info

    def jeffreys_log_prior(self, theta, data):
        """Jeffreys prior for the free parameters; flat for pure location fits."""
        if self._free_disp():
            raise UnsupportedOperationError(
                "Jeffreys prior implemented for known-dispersion (location) fits only")
        return 0.0

    def marginal_loglik(self, theta, data):
        vt = self.vtilde(theta, data)
        return self.ell_e(theta, vt, data) + self.mod_term(theta, data)

    # --- conditional law of v given y ---

    def conditional_latent(self, theta, data, index):
        vt = self.vtilde(theta, data)
        _, _, A = self._A_pieces(theta, data)
        var = np.linalg.inv(A)[index, index]
        return Normal(vt[index], np.sqrt(var))

    # --- batch evaluation over many latent samples (ELA machinery) ---

    def ell_e_batch(self, theta, V, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        n = data.n_clusters
        R = data.y - data.X @ beta - V[:, data.index]       # (B, N)
        rss = np.einsum("bi,bi->b", R, R)
        if self.correlation == "ar1" and n > 1:
            w = 1.0 / (1.0 - rho * rho)
            TV = V.copy()
            TV[:, 1:-1] += rho * rho * V[:, 1:-1]
            TV[:, :-1] -= rho * V[:, 1:]
            TV[:, 1:] -= rho * V[:, :-1]
            quad = np.einsum("bi,bi->b", V, TV) * w / lam
        else:
            quad = np.einsum("bi,bi->b", V, V) / lam
        return (-0.5 * data.n_obs * (np.log(sigma2) + _LOG_2PI)
                - 0.5 * rss / sigma2
                - 0.5 * n * _LOG_2PI - 0.5 * self._logdet_sigma(lam, rho, n)
                - 0.5 * quad)

    def grad_theta_batch(self, theta, V, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        if self.correlation == "ar1":
            raise UnsupportedOperationError("batch theta-gradients implemented for independent effects")
        n = data.n_clusters
        R = data.y - data.X @ beta - V[:, data.index]
        g_beta = R @ data.X / sigma2                          # (B, p)
        rss = np.einsum("bi,bi->b", R, R)
        g_s2 = -0.5 * data.n_obs / sigma2 + 0.5 * rss / sigma2 ** 2
        g_lam = -0.5 * n / lam + 0.5 * np.einsum("bi,bi->b", V, V) / lam ** 2
        full = np.concatenate([g_beta, g_s2[:, None], g_lam[:, None]], axis=1)
        return full[:, self._free_rows()]

    def hess_theta_batch(self, theta, V, data):
        beta, sigma2, lam, rho = self._unpack(theta)
        if self.correlation == "ar1":
            raise UnsupportedOperationError("batch theta-hessians implemented for independent effects")
        B = V.shape[0]
        p = self.n_coef
        d = p + 2
        R = data.y - data.X @ beta - V[:, data.index]
        rss = np.einsum("bi,bi->b", R, R)
        H = np.zeros((B, d, d))
        H[:, :p, :p] = -(data.X.T @ data.X)[None] / sigma2
        xtr = R @ data.X
        H[:, :p, p] = H[:, p, :p] = -xtr / sigma2 ** 2
        H[:, p, p] = 0.5 * data.n_obs / sigma2 ** 2 - rss / sigma2 ** 3
        H[:, p + 1, p + 1] = (0.5 * data.n_clusters / lam ** 2
                              - np.einsum("bi,bi->b", V, V) / lam ** 3)
        rows = self._free_rows()
        return H[:, rows[:, None], rows[None, :]]


# ---------------------------------------------------------------------------
# Named operations
# ---------------------------------------------------------------------------


def lmm_blup(model_or_spec, data, theta):
    """Best linear unbiased predictor of the random intercepts.

    Independent effects: vtilde_i = lambda * sum_j(resid_ij) / (sigma2 + m_i lambda).
    AR(1): solves the penalized normal equations with the tridiagonal precision.
    """
    model = model_or_spec.model() if isinstance(model_or_spec, LmmSpec) else model_or_spec
    return LatentVector(model.vtilde(theta, data), scale="v")


def lmm_u_scale_predictor(model_or_spec, data, theta):
    """u-scale MHLE of v and the implied best predictor of w = 1/u^2.

    Only for independent effects: vtilde'_i = BLUP_i - s_i^2 with
    s_i^2 = lambda sigma2 / (sigma2 + m_i lambda), and
    wtilde'_i = exp(-2 BLUP_i + 2 s_i^2) = E(exp(-2 v_i) | y).
    """
    model = model_or_spec.model() if isinstance(model_or_spec, LmmSpec) else model_or_spec
    if model.correlation != "none":
        raise UnsupportedOperationError("u-scale predictor requires independent effects")
    sigma2, lam = theta["sigma2"], theta["lambda"]
    blup = model.vtilde(theta, data)
    s2 = lam * sigma2 / (sigma2 + data.sizes * lam)
    vtilde_prime = blup - s2
    wtilde_prime = np.exp(-2.0 * blup + 2.0 * s2)
    return LatentVector(vtilde_prime, scale="v"), wtilde_prime
