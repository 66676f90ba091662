"""Importance-sampled marginal likelihood and the approximate h-likelihood.

L_B(theta) = (1/B) sum_b L_e(theta, v_b) / q(v_b) with v_b drawn from a
proposal q: unbiased on the likelihood scale for any B. Proposals are
rebuilt at each theta and sampled by inversion from a fixed block of
counter-based uniforms, so L_B is a smooth deterministic function of theta
for a given seed (common random numbers) and quasi-Newton search works.

h_B(theta, v) = ell_e(theta, v) - ell_e(theta, vtilde) + log L_B(theta), and
I_B is its exact negative Hessian, with the theta-block correction
I11(theta) = -d2/dtheta2 log L_B computed from the normalized importance
weights.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import special as sp
from .data import FixedParams, LatentVector
from .errors import DomainError, NumericalError, UnsupportedOperationError
from .estimate import (FitResult, _chain_factor, _from_unconstrained,
                       _solve_descent, _to_unconstrained, default_init)
from .rng import rng_streams

__all__ = ["Proposal", "ElaEstimate", "importance_marginal", "h_B", "I_B",
           "ela_fit", "nbgamma_collapsed_ela", "nested_ela"]


@dataclass
class Proposal:
    """Proposal family for the latent vector.

    kind 'laplace-normal' uses N(vtilde, [-d2_v ell_e]^{-1} at vtilde);
    'conjugate-gamma' uses the model's conditional law of u given y (exact
    for conjugate models, in which case L_B is exact at B = 1); 'custom'
    carries user callables build(theta, data) -> (sample(U), logq(V)).
    """

    kind: str = "laplace-normal"
    build: Optional[callable] = None

    def __post_init__(self):
        if self.kind not in ("laplace-normal", "conjugate-gamma", "custom"):
            raise DomainError(f"unknown proposal kind {self.kind!r}")
        if self.kind == "custom" and self.build is None:
            raise DomainError("custom proposal needs a build callable")


def _build_proposal(proposal, model, theta, data):
    """Returns (sampler(U) -> V on the model scale, logq(V) -> (B,))."""
    if proposal.kind == "custom":
        return proposal.build(theta, data)
    if proposal.kind == "laplace-normal":
        vt = model.vtilde(theta, data)
        _, _, h_vv = model.ell_e_hess(theta, vt, data)
        cov = np.linalg.inv(-h_vv)
        cov = 0.5 * (cov + cov.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            chol = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]) * np.abs(cov).max())
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise NumericalError("proposal covariance not positive definite")
        n = vt.shape[0]

        def sample(U):
            Z = sp.norm_ppf(U)
            return vt[None, :] + Z @ chol.T

        def logq(V):
            D = V - vt[None, :]
            sol = np.linalg.solve(chol, D.T)
            return (-0.5 * np.sum(sol * sol, axis=0)
                    - 0.5 * n * math.log(2.0 * math.pi) - 0.5 * logdet)

        return sample, logq
    # conjugate-gamma: model's conditional law of u given y, on the v scale
    if not hasattr(model, "conditional_all"):
        raise UnsupportedOperationError("model has no conjugate conditional family")
    dists = model.conditional_all(theta, data)
    shapes = np.array([d.shape for d in dists])
    rates = np.array([d.rate for d in dists])

    def sample(U):
        # inversion keeps the draw smooth in theta
        X = sp.gammainc_p_inv(shapes[None, :], U)
        return np.log(X / rates[None, :])

    def logq(V):
        # log density of v = log u when u ~ Gamma(shape, rate)
        U_ = np.exp(V)
        return np.sum(shapes * np.log(rates) - sp.loggamma(shapes)
                      + shapes * V - rates * U_, axis=1)

    return sample, logq


@dataclass
class ElaEstimate:
    log_LB: float
    B: int
    samples_seed: int
    weights: np.ndarray           # normalized importance weights
    ess: float
    theta: FixedParams
    samples: np.ndarray = field(repr=False)          # (B, n) latent draws
    log_ratios: np.ndarray = field(repr=False)       # ell_e - log q per draw


def _ela_core(model, theta, data, proposal, B, U):
    sample, logq = _build_proposal(proposal, model, theta, data)
    V = sample(U)
    if hasattr(model, "ell_e_batch"):
        le = model.ell_e_batch(theta, V, data)
    else:
        le = np.array([model.ell_e(theta, V[b], data) for b in range(B)])
    lr = le - logq(V)
    finite = np.isfinite(lr)
    if not finite.any():
        raise NumericalError("all importance ratios vanished (proposal mismatch); ess = 0")
    lmax = np.max(lr[finite])
    w = np.where(finite, np.exp(lr - lmax), 0.0)
    total = float(np.sum(w))
    log_lb = lmax + math.log(total) - math.log(B)
    weights = w / total
    ess = 1.0 / float(np.sum(weights ** 2))
    return log_lb, weights, ess, V, lr


def importance_marginal(model, theta, data, proposal, B, seed):
    """Unbiased importance-sampling estimate of the marginal likelihood."""
    B = int(B)
    if B < 1:
        raise DomainError("B must be at least 1")
    stream = rng_streams(seed).stream("ela", "uniforms")
    n = model.n_latent(data)
    U = stream.uniform(size=B * n).reshape(B, n)
    log_lb, weights, ess, V, lr = _ela_core(model, theta, data, proposal, B, U)
    if ess < 0.01 * B and B >= 100:
        warnings.warn(f"effective sample size {ess:.1f} below 1% of B = {B}",
                      RuntimeWarning, stacklevel=2)
    return ElaEstimate(log_LB=log_lb, B=B, samples_seed=seed, weights=weights,
                       ess=ess, theta=theta, samples=V, log_ratios=lr)


def h_B(model, theta, v, data, ela):
    """Approximate h-likelihood ell_e(theta,v) - ell_e(theta,vtilde) + log L_B."""
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    vt = model.vtilde(theta, data)
    return (model.ell_e(theta, v, data) - model.ell_e(theta, vt, data) + ela.log_LB)


def I_B(model, theta, v, data, ela):
    """Negative Hessian of h_B at (theta, v).

    The latent blocks equal the exact -d2 ell_e; the theta block carries the
    profile curvature at vtilde plus I11(theta) = -d2 log L_B from the
    weighted importance samples.
    """
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    tvec = model.theta_to_vector(theta)
    p = tvec.shape[0]
    n = v.shape[0]
    h_tt, h_tv, h_vv = model.ell_e_hess(theta, v, data)

    vt = model.vtilde(theta, data)
    t_tt, t_tv, t_vv = model.ell_e_hess(theta, vt, data)
    schur = t_tt - t_tv @ np.linalg.solve(t_vv, t_tv.T)

    i11 = _I11(model, theta, data, ela)

    out = np.zeros((p + n, p + n))
    out[:p, :p] = -h_tt + schur + i11
    out[:p, p:] = -h_tv
    out[p:, :p] = -h_tv.T
    out[p:, p:] = -h_vv
    return out


def _I11(model, theta, data, ela):
    """[sum w g][sum w g]' - sum w (g g' + H) over the importance samples."""
    V = ela.samples
    w = ela.weights
    if hasattr(model, "grad_theta_batch"):
        G = model.grad_theta_batch(theta, V, data)
        H = model.hess_theta_batch(theta, V, data)
    else:
        G = np.stack([model.ell_e_grad(theta, V[b], data)[0] for b in range(V.shape[0])])
        H = np.stack([model.ell_e_hess(theta, V[b], data)[0] for b in range(V.shape[0])])
    gbar = w @ G
    outer = np.einsum("b,bi,bj->ij", w, G, G)
    hbar = np.einsum("b,bij->ij", w, H)
    return np.outer(gbar, gbar) - outer - hbar


def ela_fit(model, data, proposal, B, seed, init=None, max_iter=200):
    """Maximize the approximate h-likelihood.

    Since max_v h_B(theta, v) = log L_B(theta), the outer search maximizes
    log L_B directly with common random numbers; v_hat is the inner maximizer
    at the solution.
    """
    B = int(B)
    if B < 1:
        raise DomainError("B must be at least 1")
    if init is None:
        init = default_init(model, data)
    kinds = model.transform_kinds()
    stream = rng_streams(seed).stream("ela", "uniforms")
    n = model.n_latent(data)
    U = stream.uniform(size=B * n).reshape(B, n)

    def log_lb(eta):
        theta = model.vector_to_theta(_from_unconstrained(eta, kinds))
        try:
            val, _, _, _, _ = _ela_core(model, theta, data, proposal, B, U)
        except (NumericalError, np.linalg.LinAlgError):
            return -np.inf
        return val

    from scipy.optimize import minimize
    eta0 = _to_unconstrained(model.theta_to_vector(init), kinds)
    res = minimize(lambda e: -log_lb(e), eta0, method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12,
                            "maxiter": 4000, "maxfev": 4000})
    eta = res.x

    # Newton polish with central finite differences on the smooth CRN objective
    def fd_grad(e, h=1e-5):
        g = np.empty_like(e)
        for j in range(e.shape[0]):
            step = h * max(1.0, abs(e[j]))
            up, dn = e.copy(), e.copy()
            up[j] += step
            dn[j] -= step
            g[j] = (log_lb(up) - log_lb(dn)) / (2.0 * step)
        return g

    cur = log_lb(eta)
    iters = int(res.nit)
    converged = False
    for _ in range(20):
        g = fd_grad(eta)
        if np.max(np.abs(g)) < 1e-9:
            converged = True
            break
        d = eta.shape[0]
        H = np.empty((d, d))
        for j in range(d):
            step = 1e-5 * max(1.0, abs(eta[j]))
            up, dn = eta.copy(), eta.copy()
            up[j] += step
            dn[j] -= step
            H[:, j] = (fd_grad(up) - fd_grad(dn)) / (2.0 * step)
        H = 0.5 * (H + H.T)
        try:
            step_vec = _solve_descent(-H, g)
        except NumericalError:
            step_vec = g
        t = 1.0
        for _ in range(30):
            cand = eta + t * step_vec
            if log_lb(cand) >= cur - 1e-13 * (1.0 + abs(cur)):
                break
            t *= 0.5
        eta = eta + t * step_vec
        new = log_lb(eta)
        if abs(new - cur) < 1e-14 * (1.0 + abs(cur)) and np.max(np.abs(fd_grad(eta))) < 1e-7:
            cur = new
            converged = True
            break
        cur = new
        iters += 1

    theta_hat = model.vector_to_theta(_from_unconstrained(eta, kinds))
    vt = model.vtilde(theta_hat, data)
    gnorm = float(np.max(np.abs(fd_grad(eta))))
    return FitResult(theta_hat=theta_hat,
                     v_hat=LatentVector(vt, scale=model.latent_scale),
                     h_value=float(cur),
                     iterations=iters,
                     converged=bool(converged or gnorm < 1e-6),
                     grad_norm=gnorm)


# ---------------------------------------------------------------------------
# Nested gamma samplers (appendix comparison) and the collapsed estimator
# ---------------------------------------------------------------------------


def nested_ela(model, theta, data, sampler, B, seed):
    """Marginal-likelihood estimate for the three-level counts model.

    sampler: 'poisson-normal-normal' (Laplace normal over the stacked
    latents), 'poisson-gamma-gamma' (conjugate gammas for both levels), or
    'nb-gamma' (collapsed likelihood, cluster latents only).
    """
    B = int(B)
    if B < 1:
        raise DomainError("B must be at least 1")
    stream = rng_streams(seed).stream("nested-ela", sampler)
    n, N = data.n_clusters, data.n_obs

    if sampler == "nb-gamma":
        q1, _, (v1h, v2h) = model.conjugate_proposals(theta, data)
        shapes = np.array([d.shape for d in q1])
        rates = np.array([d.rate for d in q1])
        U = stream.uniform(size=B * n).reshape(B, n)
        X = sp.gammainc_p_inv(shapes[None, :], U)
        V1 = np.log(X / rates[None, :])
        logq = np.sum(shapes * np.log(rates) - sp.loggamma(shapes)
                      + shapes * V1 - rates * np.exp(V1), axis=1)
        le = model.ell_e_nb_batch(theta, V1, data)
        lr = le - logq
        V = V1
    elif sampler == "poisson-gamma-gamma":
        q1, q2, _ = model.conjugate_proposals(theta, data)
        sh = np.array([d.shape for d in q1] + [d.shape for d in q2])
        rt = np.array([d.rate for d in q1] + [d.rate for d in q2])
        U = stream.uniform(size=B * (n + N)).reshape(B, n + N)
        X = sp.gammainc_p_inv(sh[None, :], U)
        V = np.log(X / rt[None, :])
        logq = np.sum(sh * np.log(rt) - sp.loggamma(sh) + sh * V - rt * np.exp(V), axis=1)
        le = model.ell_e_batch(theta, V, data)
        lr = le - logq
    elif sampler == "poisson-normal-normal":
        v1h, v2h = model.vtilde_joint(theta, data)
        vh = np.concatenate([v1h, v2h])
        Hvv = model.hess_vv_joint(theta, v1h, v2h, data)
        cov = np.linalg.inv(-Hvv)
        cov = 0.5 * (cov + cov.T)
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
        sign, logdet = np.linalg.slogdet(cov)
        U = stream.uniform(size=B * (n + N)).reshape(B, n + N)
        Z = sp.norm_ppf(U)
        V = vh[None, :] + Z @ chol.T
        D = V - vh[None, :]
        sol = np.linalg.solve(chol, D.T)
        logq = (-0.5 * np.sum(sol * sol, axis=0)
                - 0.5 * (n + N) * math.log(2.0 * math.pi) - 0.5 * logdet)
        le = model.ell_e_batch(theta, V, data)
        lr = le - logq
    else:
        raise DomainError(f"unknown sampler {sampler!r}")

    finite = np.isfinite(lr)
    if not finite.any():
        raise NumericalError("all importance ratios vanished (proposal mismatch)")
    lmax = np.max(lr[finite])
    w = np.where(finite, np.exp(lr - lmax), 0.0)
    total = float(np.sum(w))
    log_lb = lmax + math.log(total) - math.log(B)
    weights = w / total
    ess = 1.0 / float(np.sum(weights ** 2))
    return ElaEstimate(log_LB=log_lb, B=B, samples_seed=seed, weights=weights,
                       ess=ess, theta=theta, samples=V, log_ratios=lr)


def nbgamma_collapsed_ela(spec_or_model, data, B, seed, theta=None):
    """NB-gamma collapsed estimator: samples only the n cluster latents."""
    from .models.nested_gamma import NestedGammaSpec
    if isinstance(spec_or_model, NestedGammaSpec):
        model = spec_or_model.model()
        theta = spec_or_model.to_theta() if theta is None else theta
    else:
        model = spec_or_model
        if theta is None:
            raise DomainError("theta required when passing a model")
    return nested_ela(model, theta, data, "nb-gamma", B, seed)
