"""Model abstraction and the generic h-likelihood operations.

A model exposes its extended log-likelihood (the log joint density of data
and latent values on the model's declared scale), a closed-form modification
term making the profile of the modified objective equal the marginal
log-likelihood, analytic derivatives, a simulator, and the conditional law of
the latent values given data. Everything else in the package is generic over
this interface.

The canonical modification term is the negative maximized predictive
log-likelihood, so ``h(theta, vtilde(theta)) = marginal loglik`` holds as an
identity, per scale.
"""

from dataclasses import dataclass

import numpy as np

from .data import BartlettDiagnostic, ClusteredDataset, FixedParams, HEval, LatentVector
from .errors import DomainError, NumericalError, UnsupportedOperationError
from .rng import rng_streams

_FD_EPS = 2.220446049250313e-16 ** (1.0 / 3.0)  # cube root of machine epsilon


class HModel:
    """Base class: hierarchical model with fixed params theta and latents v."""

    latent_scale = "v"
    response_kind = "continuous"

    # --- theta packing -----------------------------------------------------

    def theta_names(self):
        raise NotImplementedError

    def transform_kinds(self):
        """Per-coordinate optimizer transform: 'free', 'log' or 'corr'."""
        raise NotImplementedError

    def theta_to_vector(self, theta):
        raise NotImplementedError

    def vector_to_theta(self, vec):
        raise NotImplementedError

    # --- likelihood pieces --------------------------------------------------

    def ell_e(self, theta, v, data):
        """Extended log-likelihood log f(y|v) + log f(v) on the declared scale."""
        raise NotImplementedError

    def ell_e_grad(self, theta, v, data):
        """Returns (grad wrt theta vector, grad wrt v)."""
        raise NotImplementedError

    def ell_e_hess(self, theta, v, data):
        """Returns (H_tt, H_tv, H_vv) second-derivative blocks of ell_e."""
        raise NotImplementedError

    def mod_term(self, theta, data):
        raise UnsupportedOperationError(
            f"{type(self).__name__} has no closed-form modification term; "
            "use the importance-sampling approximation in hlik.approx")

    def mod_term_grad(self, theta, data):
        raise NotImplementedError

    def vtilde(self, theta, data):
        """argmax_v of the extended log-likelihood at fixed theta."""
        raise NotImplementedError

    def n_latent(self, data):
        return data.n_clusters

    # --- simulation ----------------------------------------------------------

    def simulate(self, theta, n, m, rng, x_low=-0.5, x_high=0.5):
        """Draw covariates, latents, and responses; returns (LatentVector, dataset)."""
        raise NotImplementedError

    def simulate_given_design(self, theta, data, rng):
        """Fresh (v, y) with the covariates of ``data`` reused."""
        raise NotImplementedError

    # --- conditional law of the latent given data ----------------------------

    def conditional_latent(self, theta, data, index):
        """Distribution of the reported latent coordinate given the data."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def _latent_values(model, v, data):
    if isinstance(v, LatentVector):
        if v.scale != model.latent_scale:
            raise DomainError(
                f"latent scale {v.scale!r} does not match model scale {model.latent_scale!r}")
        values = v.values
    else:
        values = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if values.shape[0] != model.n_latent(data):
        raise DomainError(
            f"latent dimension {values.shape[0]} != model dimension {model.n_latent(data)}")
    return values


def extended_loglik(model, theta, v, data):
    """log f_theta(y|v) + log f_theta(v) on the model's declared scale."""
    return model.ell_e(theta, _latent_values(model, v, data), data)


def modification_term(model, theta, data):
    """The additive term a(theta; y) that turns ell_e into the h-likelihood."""
    return model.mod_term(theta, data)


def h_loglik(model, theta, v, data):
    """h(theta, v) = extended loglik + modification term."""
    return extended_loglik(model, theta, v, data) + model.mod_term(theta, data)


def h_loglik_profile(model, theta, data):
    """h at the inner maximizer; equals the marginal log-likelihood."""
    vt = model.vtilde(theta, data)
    return model.ell_e(theta, vt, data) + model.mod_term(theta, data)


def h_score_info(model, theta, v, data):
    """Analytic h-score and h-information at (theta, v)."""
    values = _latent_values(model, v, data)
    tvec = model.theta_to_vector(theta)
    p = tvec.shape[0]
    n = values.shape[0]

    val = model.ell_e(theta, values, data) + model.mod_term(theta, data)
    g_t, g_v = model.ell_e_grad(theta, values, data)
    g_t = g_t + model.mod_term_grad(theta, data)
    score = np.concatenate([g_t, g_v])

    h_tt, h_tv, h_vv = model.ell_e_hess(theta, values, data)
    h_tt = h_tt + _mod_term_hess(model, theta, data)
    info = np.zeros((p + n, p + n))
    info[:p, :p] = -h_tt
    info[:p, p:] = -h_tv
    info[p:, :p] = -h_tv.T
    info[p:, p:] = -h_vv
    if not np.all(np.isfinite(score)):
        bad = int(np.where(~np.isfinite(score))[0][0])
        raise NumericalError(f"non-finite h-score at coordinate {bad}")
    if not np.all(np.isfinite(info)):
        bad = np.argwhere(~np.isfinite(info))[0]
        raise NumericalError(f"non-finite h-information at entry {tuple(bad)}")
    return HEval(value=val, score=score, information=info, n_theta=p)


def _mod_term_hess(model, theta, data):
    """Hessian of the modification term wrt theta, by central FD of its gradient."""
    tvec = model.theta_to_vector(theta)
    p = tvec.shape[0]
    H = np.zeros((p, p))
    for j in range(p):
        step = _FD_EPS * max(1.0, abs(tvec[j]))
        up = tvec.copy()
        dn = tvec.copy()
        up[j] += step
        dn[j] -= step
        gu = model.mod_term_grad(model.vector_to_theta(up), data)
        gd = model.mod_term_grad(model.vector_to_theta(dn), data)
        H[:, j] = (gu - gd) / (2.0 * step)
    return 0.5 * (H + H.T)


def h_score_info_fd(model, theta, v, data):
    """Finite-difference cross-check of the h-score and h-information.

    Central differences with step eps^(1/3) * max(1, |x|) per coordinate.
    """
    values = _latent_values(model, v, data)
    tvec = model.theta_to_vector(theta)
    p = tvec.shape[0]
    x0 = np.concatenate([tvec, values])

    def fun(x):
        return (model.ell_e(model.vector_to_theta(x[:p]), x[p:], data)
                + model.mod_term(model.vector_to_theta(x[:p]), data))

    d = x0.shape[0]
    steps = _FD_EPS * np.maximum(1.0, np.abs(x0))
    score = np.empty(d)
    for j in range(d):
        up, dn = x0.copy(), x0.copy()
        up[j] += steps[j]
        dn[j] -= steps[j]
        score[j] = (fun(up) - fun(dn)) / (2.0 * steps[j])
    f0 = fun(x0)
    info = np.empty((d, d))
    for j in range(d):
        for k in range(j, d):
            if j == k:
                up, dn = x0.copy(), x0.copy()
                up[j] += steps[j]
                dn[j] -= steps[j]
                info[j, j] = -(fun(up) - 2.0 * f0 + fun(dn)) / steps[j] ** 2
            else:
                pp, pm, mp_, mm = x0.copy(), x0.copy(), x0.copy(), x0.copy()
                pp[j] += steps[j]; pp[k] += steps[k]
                pm[j] += steps[j]; pm[k] -= steps[k]
                mp_[j] -= steps[j]; mp_[k] += steps[k]
                mm[j] -= steps[j]; mm[k] -= steps[k]
                info[j, k] = -(fun(pp) - fun(pm) - fun(mp_) + fun(mm)) / (4.0 * steps[j] * steps[k])
                info[k, j] = info[j, k]
    return HEval(value=f0, score=score, information=info, n_theta=p)


# ---------------------------------------------------------------------------
# Scale transformation: u = exp(v) elementwise, with explicit Jacobian
# ---------------------------------------------------------------------------


class ExpScaleView(HModel):
    """View of a v-scale model on the u = exp(v) scale.

    Latent arguments are u-values. The extended log-likelihood picks up the
    log-Jacobian -sum(log u); the modification term is recomputed canonically
    on this scale (and can fail to exist for models whose conditional density
    of u is unbounded, e.g. Poisson-gamma with small shape).
    """

    latent_scale = "u"

    def __init__(self, base):
        if base.latent_scale != "v":
            raise DomainError("ExpScaleView wraps v-scale models only")
        self.base = base
        self.response_kind = base.response_kind

    def theta_names(self):
        return self.base.theta_names()

    def transform_kinds(self):
        return self.base.transform_kinds()

    def theta_to_vector(self, theta):
        return self.base.theta_to_vector(theta)

    def vector_to_theta(self, vec):
        return self.base.vector_to_theta(vec)

    def n_latent(self, data):
        return self.base.n_latent(data)

    def ell_e(self, theta, u, data):
        u = np.asarray(u, dtype=np.float64)
        if np.any(u <= 0.0):
            raise DomainError("u-scale latent values must be positive")
        v = np.log(u)
        return self.base.ell_e(theta, v, data) - float(np.sum(v))

    def ell_e_grad(self, theta, u, data):
        u = np.asarray(u, dtype=np.float64)
        v = np.log(u)
        g_t, g_v = self.base.ell_e_grad(theta, v, data)
        return g_t, (g_v - 1.0) / u

    def ell_e_hess(self, theta, u, data):
        u = np.asarray(u, dtype=np.float64)
        v = np.log(u)
        h_tt, h_tv, h_vv = self.base.ell_e_hess(theta, v, data)
        _, g_v = self.base.ell_e_grad(theta, v, data)
        # with phi(v) = ell_e^v(v) - sum(v): d/du_i = phi_i/u_i,
        # d2/du_i du_j = phi_ij/(u_i u_j) off-diagonal, (phi_ii - phi_i)/u_i^2 on it
        h_tu = h_tv / u[None, :]
        h_uu = h_vv / np.outer(u, u)
        h_uu[np.diag_indices_from(h_uu)] = (np.diag(h_vv) - (g_v - 1.0)) / (u * u)
        return h_tt, h_tu, h_uu

    def vtilde(self, theta, data):
        """Mode of ell_e over u, returned as u-values (Newton in log space)."""
        v = self.base.vtilde(theta, data).copy()
        for _ in range(200):
            _, g_v = self.base.ell_e_grad(theta, v, data)
            g = g_v - 1.0  # gradient of ell_e^u wrt the v-parametrization
            _, _, h_vv = self.base.ell_e_hess(theta, v, data)
            if np.any(np.diag(h_vv) >= 0.0):
                raise UnsupportedOperationError("u-scale mode does not exist (flat direction)")
            step = np.linalg.solve(h_vv, g)
            v_new = v - step
            if not np.all(np.isfinite(v_new)) or np.max(np.abs(v_new - v)) > 50.0:
                raise UnsupportedOperationError("u-scale mode diverged; scale likely degenerate")
            v = v_new
            if np.max(np.abs(g)) < 1e-12:
                break
        else:
            raise UnsupportedOperationError("u-scale mode search did not converge")
        return np.exp(v)

    def mod_term(self, theta, data):
        # canonical: marginal loglik minus maximized ell_e on this scale;
        # falls back to the base-scale term when the u-mode does not exist
        # (then the profile identity no longer holds on this scale)
        base_prof = (self.base.ell_e(theta, self.base.vtilde(theta, data), data)
                     + self.base.mod_term(theta, data))
        try:
            u_mode = self.vtilde(theta, data)
        except UnsupportedOperationError:
            return self.base.mod_term(theta, data)
        return base_prof - self.ell_e(theta, u_mode, data)

    def mod_term_grad(self, theta, data):
        tvec = self.theta_to_vector(theta)
        g = np.empty_like(tvec)
        for j in range(tvec.shape[0]):
            step = _FD_EPS * max(1.0, abs(tvec[j]))
            up, dn = tvec.copy(), tvec.copy()
            up[j] += step
            dn[j] -= step
            g[j] = (self.mod_term(self.vector_to_theta(up), data)
                    - self.mod_term(self.vector_to_theta(dn), data)) / (2.0 * step)
        return g

    def simulate(self, theta, n, m, rng, **kw):
        lat, data = self.base.simulate(theta, n, m, rng, **kw)
        return LatentVector(np.exp(lat.values), scale="u"), data

    def simulate_given_design(self, theta, data, rng):
        lat, ds = self.base.simulate_given_design(theta, data, rng)
        return LatentVector(np.exp(lat.values), scale="u"), ds

    def conditional_latent(self, theta, data, index):
        return self.base.conditional_latent(theta, data, index)


# ---------------------------------------------------------------------------
# Bartlett identity diagnostics
# ---------------------------------------------------------------------------


@dataclass
class _BartlettAccumulator:
    score_sum: np.ndarray
    score_sq: np.ndarray
    info_sum: np.ndarray
    resid_sum: np.ndarray
    resid_sq: np.ndarray
    count: int

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d), np.zeros(d), np.zeros((d, d)),
                   np.zeros((d, d)), np.zeros((d, d)), 0)

    def add(self, score, info):
        self.score_sum += score
        self.score_sq += score * score
        self.info_sum += info
        resid = np.outer(score, score) - info
        self.resid_sum += resid
        self.resid_sq += resid * resid
        self.count += 1

    def merge(self, other):
        self.score_sum += other.score_sum
        self.score_sq += other.score_sq
        self.info_sum += other.info_sum
        self.resid_sum += other.resid_sum
        self.resid_sq += other.resid_sq
        self.count += other.count


def bartlett_check(model, theta, data, reps, seed, workers=1, chunk=256):
    """Monte-Carlo check of E[S] = 0 and E[S S' - I] = 0 at the true theta.

    Fresh (v, y) pairs are simulated from the generative joint density with
    the covariates of ``data`` fixed. The first identity is judged against
    the null standard error sqrt(E[I_jj]/R) implied by the second identity;
    a non-positive information-implied variance is itself a failure (the
    empirical t-statistic of an infinite-mean score is O_p(1) and cannot
    detect divergence). The second identity uses empirical standard errors.
    Threshold 4 SE for both.
    """
    reps = int(reps)
    if reps < 100:
        raise DomainError("bartlett_check needs reps >= 100 for usable standard errors")
    factory = rng_streams(seed)
    tvec = model.theta_to_vector(theta)
    d = tvec.shape[0] + model.n_latent(data)

    # fixed chunk boundaries make the reduction identical for any worker count
    chunks = [(s, min(s + chunk, reps)) for s in range(0, reps, chunk)]

    def run_chunk(bounds):
        lo, hi = bounds
        acc = _BartlettAccumulator.zeros(d)
        for rep in range(lo, hi):
            stream = factory.stream("bartlett", rep)
            lat, ds = model.simulate_given_design(theta, data, stream)
            he = h_score_info(model, theta, lat.values, ds)
            acc.add(he.score, he.information)
        return acc

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
    else:
        parts = [run_chunk(c) for c in chunks]
    total = _BartlettAccumulator.zeros(d)
    for part in parts:
        total.merge(part)

    r = float(total.count)
    mean_score = total.score_sum / r
    score_var = np.maximum(total.score_sq / r - mean_score ** 2, 0.0)
    score_se = np.sqrt(score_var / r)
    mean_info = total.info_sum / r
    info_diag = np.diag(mean_info)
    null_se = np.sqrt(np.maximum(info_diag, 0.0) / r)
    resid_mean = total.resid_sum / r
    resid_var = np.maximum(total.resid_sq / r - resid_mean ** 2, 0.0)
    resid_se = np.sqrt(resid_var / r)

    notes = []
    first_pass = True
    if np.any(info_diag <= 0.0):
        first_pass = False
        notes.append("information-implied score variance not positive")
    else:
        if np.any(np.abs(mean_score) > 4.0 * null_se):
            first_pass = False
            notes.append("mean score exceeds 4 SE")
    second_pass = bool(np.all(np.abs(resid_mean) <= 4.0 * np.maximum(resid_se, 1e-300)))

    return BartlettDiagnostic(
        mean_score=mean_score,
        score_se=score_se,
        null_se=null_se,
        mean_info=mean_info,
        second_identity_residual=resid_mean,
        second_identity_se=resid_se,
        replications=total.count,
        first_identity_pass=first_pass,
        second_identity_pass=second_pass,
        notes="; ".join(notes),
    )
