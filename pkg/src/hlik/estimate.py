"""Maximum h-likelihood fitting, variance estimation, GCRLB, and SGD.

The exact fit is a nested scheme: the inner problem max_v ell_e(theta, v) is
solved in closed form where the model provides one, otherwise by a damped
Newton iteration; the outer problem maximizes the profile
h(theta, vtilde(theta)) -- exactly the marginal log-likelihood -- by BFGS on
an unconstrained reparameterization (log for dispersions, atanh for rho),
followed by a Newton polish so the stationarity tolerances hold tightly.
"""

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from .data import FixedParams, LatentVector
from .errors import DomainError, NotConvergedError, NumericalError, UnsupportedOperationError
from .modelcore import h_score_info
from .rng import rng_streams

GRAD_TOL = 1e-8
REL_H_TOL = 1e-12


# ---------------------------------------------------------------------------
# Parameter transforms
# ---------------------------------------------------------------------------


def _to_unconstrained(vec, kinds):
    out = np.empty_like(vec)
    for j, kind in enumerate(kinds):
        if kind == "log":
            out[j] = np.log(vec[j])
        elif kind == "corr":
            out[j] = np.arctanh(vec[j])
        else:
            out[j] = vec[j]
    return out


def _from_unconstrained(eta, kinds):
    out = np.empty_like(eta)
    for j, kind in enumerate(kinds):
        if kind == "log":
            out[j] = np.exp(eta[j])
        elif kind == "corr":
            out[j] = np.tanh(eta[j])
        else:
            out[j] = eta[j]
    return out


def _chain_factor(vec, kinds):
    """d(natural)/d(unconstrained) evaluated at the natural value."""
    fac = np.ones_like(vec)
    for j, kind in enumerate(kinds):
        if kind == "log":
            fac[j] = vec[j]
        elif kind == "corr":
            fac[j] = 1.0 - vec[j] ** 2
    return fac


# ---------------------------------------------------------------------------
# Inner Newton (generic cross-check path; closed forms are used when present)
# ---------------------------------------------------------------------------


def inner_newton(model, theta, data, v0=None, tol=1e-10, max_iter=100):
    """Solve grad_v ell_e(theta, v) = 0 by damped Newton with step halving."""
    v = np.zeros(model.n_latent(data)) if v0 is None else np.asarray(v0, dtype=np.float64).copy()
    val = model.ell_e(theta, v, data)
    for it in range(max_iter):
        _, g = model.ell_e_grad(theta, v, data)
        if np.max(np.abs(g)) < tol:
            return v
        _, _, h_vv = model.ell_e_hess(theta, v, data)
        step = _solve_descent(-h_vv, g)
        # step halving on the objective
        t = 1.0
        for _ in range(40):
            cand = v + t * step
            cand_val = model.ell_e(theta, cand, data)
            if np.isfinite(cand_val) and cand_val >= val - 1e-12 * (1.0 + abs(val)):
                break
            t *= 0.5
        else:
            raise NotConvergedError("inner Newton line search failed")
        v = v + t * step
        val = model.ell_e(theta, v, data)
    _, g = model.ell_e_grad(theta, v, data)
    if np.max(np.abs(g)) < 1e-6:
        return v
    raise NotConvergedError(f"inner Newton did not converge (|g| = {np.max(np.abs(g)):.2e})")


def _solve_descent(neg_hess, grad):
    """Solve (-H) step = g with Levenberg damping if -H is not PD."""
    tau = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(neg_hess)))))
    for _ in range(30):
        try:
            M = neg_hess + tau * np.eye(neg_hess.shape[0])
            L = np.linalg.cholesky(M)
            z = np.linalg.solve(L, grad)
            return np.linalg.solve(L.T, z)
        except np.linalg.LinAlgError:
            tau = max(2.0 * tau, 1e-10 * scale)
    raise NumericalError("Levenberg damping exhausted: indefinite inner Hessian")


# ---------------------------------------------------------------------------
# Fit result containers
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    theta_hat: FixedParams
    v_hat: LatentVector
    h_value: float
    iterations: int
    converged: bool
    grad_norm: float
    message: str = ""

    def to_csv(self, path, model=None):
        names = model.theta_names() if model is not None else \
            [f"theta{j}" for j in range(len(self.theta_hat.beta) + len(self.theta_hat.dispersions))]
        vec = model.theta_to_vector(self.theta_hat) if model is not None else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "value"])
            if vec is not None:
                for name, val in zip(names, vec):
                    w.writerow([name, repr(float(val))])
            for i, val in enumerate(self.v_hat.values):
                w.writerow([f"v{i}", repr(float(val))])
            w.writerow(["h_value", repr(float(self.h_value))])
            w.writerow(["iterations", self.iterations])
            w.writerow(["converged", int(self.converged)])
            w.writerow(["grad_norm", repr(float(self.grad_norm))])


@dataclass
class VarianceEstimate:
    cov: np.ndarray
    n_theta: int

    @property
    def cov_tt(self):
        return self.cov[: self.n_theta, : self.n_theta]

    @property
    def cov_tv(self):
        return self.cov[: self.n_theta, self.n_theta:]

    @property
    def cov_vv(self):
        return self.cov[self.n_theta:, self.n_theta:]


# ---------------------------------------------------------------------------
# Exact MHLE fit
# ---------------------------------------------------------------------------


def _profile_value_grad(model, data, theta):
    vt = model.vtilde(theta, data)
    val = model.ell_e(theta, vt, data) + model.mod_term(theta, data)
    g_t, _ = model.ell_e_grad(theta, vt, data)
    g_t = g_t + model.mod_term_grad(theta, data)
    return val, g_t, vt


def mhle_fit(model, data, init=None, gtol=GRAD_TOL, max_iter=200):
    """Joint maximizer of the h-likelihood via the profile.

    Equivalent to joint maximization of h over (theta, v) because the inner
    maximizer is plugged in exactly at each theta.
    """
    if init is None:
        init = default_init(model, data)
    kinds = model.transform_kinds()
    tvec0 = model.theta_to_vector(init)
    if np.any(~np.isfinite(tvec0)):
        raise DomainError("init contains non-finite values")
    eta0 = _to_unconstrained(tvec0, kinds)
    evals = {"count": 0}

    def objective(eta):
        evals["count"] += 1
        theta = model.vector_to_theta(_from_unconstrained(eta, kinds))
        val, g_nat, _ = _profile_value_grad(model, data, theta)
        g_eta = g_nat * _chain_factor(model.theta_to_vector(theta), kinds)
        return -val, -g_eta

    res = minimize(objective, eta0, jac=True, method="BFGS",
                   options={"gtol": 1e-10, "maxiter": max_iter})
    eta = res.x

    # Newton polish on the unconstrained profile for tight stationarity
    def grad_eta(e):
        theta = model.vector_to_theta(_from_unconstrained(e, kinds))
        _, g_nat, _ = _profile_value_grad(model, data, theta)
        return g_nat * _chain_factor(model.theta_to_vector(theta), kinds)

    def value(e):
        theta = model.vector_to_theta(_from_unconstrained(e, kinds))
        val, _, _ = _profile_value_grad(model, data, theta)
        return val

    cur_val = value(eta)
    converged = False
    polish_iters = 0
    for polish_iters in range(1, 31):
        g = grad_eta(eta)
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged = True
            break
        d = eta.shape[0]
        H = np.empty((d, d))
        for j in range(d):
            step = 1e-6 * max(1.0, abs(eta[j]))
            up, dn = eta.copy(), eta.copy()
            up[j] += step
            dn[j] -= step
            H[:, j] = (grad_eta(up) - grad_eta(dn)) / (2.0 * step)
        H = 0.5 * (H + H.T)
        try:
            step_vec = _solve_descent(-H, g)
        except NumericalError:
            step_vec = g  # gradient ascent fallback
        t = 1.0
        for _ in range(40):
            cand = eta + t * step_vec
            cand_val = value(cand)
            if np.isfinite(cand_val) and cand_val >= cur_val - 1e-14 * (1.0 + abs(cur_val)):
                break
            t *= 0.5
        new_val = value(eta + t * step_vec)
        rel_change = abs(new_val - cur_val) / (1.0 + abs(cur_val))
        eta = eta + t * step_vec
        cur_val = new_val
        if float(np.max(np.abs(grad_eta(eta)))) < gtol and rel_change < REL_H_TOL:
            converged = True
            break

    theta_hat = model.vector_to_theta(_from_unconstrained(eta, kinds))
    val, g_nat, vt = _profile_value_grad(model, data, theta_hat)
    gnorm = float(np.max(np.abs(g_nat * _chain_factor(model.theta_to_vector(theta_hat), kinds))))
    converged = converged or gnorm < gtol
    return FitResult(
        theta_hat=theta_hat,
        v_hat=LatentVector(vt, scale=model.latent_scale),
        h_value=float(val),
        iterations=int(res.nit) + polish_iters,
        converged=bool(converged),
        grad_norm=gnorm,
        message="" if converged else f"gradient norm {gnorm:.3e} above tolerance",
    )


def default_init(model, data):
    """Cheap moment-based starting values."""
    from .models.lmm import LmmModel
    from .models.poisson_gamma import PoissonGammaModel
    from .models.exp_future import ExpFutureModel
    from .models.exp_exp import ExpExpModel

    if isinstance(model, LmmModel):
        beta, *_ = np.linalg.lstsq(data.X, data.y, rcond=None)
        resid = data.y - data.X @ beta
        s2 = max(float(np.var(resid)), 1e-3)
        disp = {"sigma2": 0.5 * s2 + 1e-3, "lambda": 0.5 * s2 + 1e-3}
        if model.correlation == "ar1":
            disp["rho"] = 0.0
        return FixedParams(beta=beta, dispersions=disp)
    if isinstance(model, PoissonGammaModel):
        beta = np.zeros(data.p)
        beta[0] = np.log(max(np.mean(data.y), 0.1))
        return FixedParams(beta=beta, dispersions={"alpha": 1.0})
    if isinstance(model, ExpFutureModel):
        return FixedParams(beta=np.zeros(0), dispersions={"theta": max(float(np.mean(data.y)), 1e-8)})
    if isinstance(model, ExpExpModel):
        val = max(float(np.mean(data.y)), 1e-8)
        name = model.param
        return FixedParams(beta=np.zeros(0),
                           dispersions={name: val if name == "theta" else 1.0 / val})
    raise UnsupportedOperationError(f"no default init for {type(model).__name__}")


# ---------------------------------------------------------------------------
# Variance estimation from the observed h-information
# ---------------------------------------------------------------------------


def variance_estimates(model, fit, data):
    """Inverse observed h-information at the fitted (theta, v)."""
    if not fit.converged:
        raise NotConvergedError("variance estimates require a converged fit")
    he = h_score_info(model, fit.theta_hat, fit.v_hat.values, data)
    info = he.information
    eigval, eigvec = np.linalg.eigh(info)
    if eigval[0] <= 1e-12 * max(1.0, eigval[-1]):
        direction = np.array2string(eigvec[:, 0], precision=4)
        raise NumericalError(f"singular h-information; null direction {direction}")
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return VarianceEstimate(cov=cov, n_theta=he.n_theta)


def vv_block_crosscheck(model, fit, data):
    """The latent covariance via I_vv^{-1} I_vt I^{tt} I_tv I_vv^{-1} + I_vv^{-1}."""
    he = h_score_info(model, fit.theta_hat, fit.v_hat.values, data)
    p = he.n_theta
    i_tt, i_tv = he.info_tt, he.info_tv
    i_vv = he.info_vv
    i_vv_inv = np.linalg.inv(i_vv)
    schur = i_tt - i_tv @ i_vv_inv @ i_tv.T
    cov_tt = np.linalg.inv(schur)
    mid = i_vv_inv @ i_tv.T @ cov_tt @ i_tv @ i_vv_inv
    return mid + i_vv_inv


# ---------------------------------------------------------------------------
# Generalized Cramer-Rao lower bound
# ---------------------------------------------------------------------------


@dataclass
class GcrlbSpec:
    """Target function zeta(theta, v) and how to take E[grad zeta].

    ``egrad``: callable theta -> E[grad_{theta,v} zeta], rows per component
    (analytic mode). In monte-carlo mode the gradient of zeta is averaged
    over simulated latents (zeta_grad callable, or finite differences).
    """

    zeta: Callable
    expectation_mode: str = "analytic"          # "analytic" | "monte-carlo"
    egrad: Optional[Callable] = None
    zeta_grad: Optional[Callable] = None
    reps: int = 10000
    seed: int = 0
    v_known: bool = False


def gcrlb(model, theta, spec, data):
    """Z I^{-1} Z' with Z = E[grad zeta] and I the expected h-information."""
    if spec.expectation_mode == "analytic":
        if spec.egrad is None:
            raise DomainError("analytic mode requires the egrad descriptor")
        Z = np.atleast_2d(np.asarray(spec.egrad(theta), dtype=np.float64))
        info = model.expected_information(theta, data)
    elif spec.expectation_mode == "monte-carlo":
        if spec.reps < 1000:
            raise DomainError("monte-carlo mode needs reps >= 1000")
        factory = rng_streams(spec.seed)
        tvec = model.theta_to_vector(theta)
        p = tvec.shape[0]
        nlat = model.n_latent(data)
        z_sum = None
        info_sum = np.zeros((p + nlat, p + nlat))
        for rep in range(spec.reps):
            stream = factory.stream("gcrlb", rep)
            lat, ds = model.simulate_given_design(theta, data, stream)
            he = h_score_info(model, theta, lat.values, ds)
            info_sum += he.information
            g = _zeta_grad(spec, tvec, lat.values)
            z_sum = g if z_sum is None else z_sum + g
        Z = np.atleast_2d(z_sum / spec.reps)
        info = info_sum / spec.reps
    else:
        raise DomainError(f"unknown expectation mode {spec.expectation_mode!r}")
    if spec.v_known:
        p = model.theta_to_vector(theta).shape[0]
        info = info[:p, :p]
        Z = Z[:, :p]
    return Z @ np.linalg.solve(info, Z.T)


def _zeta_grad(spec, tvec, v):
    if spec.zeta_grad is not None:
        g_t, g_v = spec.zeta_grad(tvec, v)
        return np.concatenate([np.atleast_1d(g_t), np.atleast_1d(g_v)])
    x0 = np.concatenate([tvec, v])
    p = tvec.shape[0]
    eps = 2.220446049250313e-16 ** (1.0 / 3.0)
    g = np.empty(x0.shape[0])
    for j in range(x0.shape[0]):
        step = eps * max(1.0, abs(x0[j]))
        up, dn = x0.copy(), x0.copy()
        up[j] += step
        dn[j] -= step
        g[j] = (spec.zeta(up[:p], up[p:]) - spec.zeta(dn[:p], dn[p:])) / (2.0 * step)
    return g


# ---------------------------------------------------------------------------
# Minibatch stochastic fit for the linear AR(1) scenario
# ---------------------------------------------------------------------------


@dataclass
class SgdOptions:
    lr: float = 0.01
    batch: int = 256
    epochs: int = 200
    seed: int = 0
    holdout: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SgdFit:
    theta_hat: FixedParams
    v_hat: LatentVector
    rmse_curve: list = field(default_factory=list)   # (epoch, holdout RMSE), epoch 0 = init
    h_trace: list = field(default_factory=list)
    train_mask: Optional[np.ndarray] = None
    hold_mask: Optional[np.ndarray] = None


def _holdout_split(data, fraction, stream):
    """Per-cluster split; returns (train_mask, holdout_mask) over stacked rows."""
    hold = np.zeros(data.n_obs, dtype=bool)
    start = 0
    for sz in data.sizes:
        k = int(round(fraction * sz))
        k = min(max(k, 1 if fraction > 0 and sz > 1 else 0), sz - 1)
        if k > 0:
            order = np.argsort(stream.uniform(size=sz))
            hold[start + order[:k]] = True
        start += sz
    return ~hold, hold


def sgd_fit(model, data, opts=None):
    """Minibatch ascent (Adam) on h(theta, v) with v trained jointly.

    The per-observation part of ell_e is subsampled; the latent prior and the
    modification term are evaluated on the full batch every step (they cost
    O(n)) so each step uses an unbiased estimate of the full h-gradient.
    With batch = N one step is exactly a full-gradient step.
    """
    from .models.lmm import LmmModel

    if not isinstance(model, LmmModel):
        raise UnsupportedOperationError("sgd_fit implements the linear mixed scenario")
    opts = opts or SgdOptions()
    if opts.lr < 0:
        raise DomainError("learning rate must be nonnegative")
    if opts.batch <= 0:
        raise DomainError("batch size must be positive")
    factory = rng_streams(opts.seed)
    split_stream = factory.stream("sgd", "split")
    train_mask, hold_mask = _holdout_split(data, opts.holdout, split_stream)
    Xt, yt, idx_t = data.X[train_mask], data.y[train_mask], data.index[train_mask]
    Xh, yh, idx_h = data.X[hold_mask], data.y[hold_mask], data.index[hold_mask]
    n_train = yt.shape[0]
    n = data.n_clusters
    p = data.p

    from .data import ClusteredDataset
    train_data = ClusteredDataset.from_arrays(Xt, yt, idx_t)
    # cluster relabeling: from_arrays keeps first-occurrence order == original order
    ar1 = model.correlation == "ar1"

    # parameter vector: [beta, log sigma2, log lambda, (atanh rho), v]
    d_theta = p + 2 + (1 if ar1 else 0)
    params = np.zeros(d_theta + n)

    def unpack(w):
        beta = w[:p]
        sigma2 = np.exp(w[p])
        lam = np.exp(w[p + 1])
        rho = np.tanh(w[p + 2]) if ar1 else None
        v = w[d_theta:]
        return beta, sigma2, lam, rho, v

    def theta_of(w):
        beta, sigma2, lam, rho, _ = unpack(w)
        disp = {"sigma2": sigma2, "lambda": lam}
        if ar1:
            disp["rho"] = rho
        return FixedParams(beta=beta.copy(), dispersions=disp)

    def rmse_holdout(w):
        beta, _, _, _, v = unpack(w)
        pred = Xh @ beta + v[idx_h]
        return float(np.sqrt(np.mean((yh - pred) ** 2)))

    def grad_step(w, rows):
        beta, sigma2, lam, rho, v = unpack(w)
        theta = theta_of(w)
        xb = Xt[rows] @ beta
        r = yt[rows] - xb - v[idx_t[rows]]
        scale = n_train / rows.shape[0]
        g = np.zeros_like(w)
        g[:p] = scale * (Xt[rows].T @ r) / sigma2
        g_s2 = scale * (-0.5 * rows.shape[0] / sigma2 + 0.5 * float(r @ r) / sigma2 ** 2)
        g[p] = g_s2 * sigma2  # chain rule through log
        np.add.at(g, d_theta + idx_t[rows], scale * r / sigma2)
        # full-batch prior + modification term
        sinv_v = model._sigma_inv_mul(v, lam, rho if ar1 else 0.0)
        g[d_theta:] -= sinv_v
        g_lam = -0.5 * n / lam + 0.5 * float(v @ sinv_v) / lam
        mod_g = model.mod_term_grad(theta, train_data)
        g_lam += mod_g[p + 1]
        g[p + 1] = g_lam * lam
        g[p] += mod_g[p] * sigma2
        if ar1:
            nn = n
            w_ = 1.0 / (1.0 - rho * rho)
            from .models.lmm import _ar1_T_mul
            q = float(v @ _ar1_T_mul(v, rho))
            qp = float(2.0 * rho * np.sum(v[1:-1] ** 2) - 2.0 * np.sum(v[:-1] * v[1:])) if nn > 1 else 0.0
            fprime = (qp + 2.0 * rho * q * w_) * w_
            g_rho = (nn - 1) * rho * w_ - 0.5 * fprime / lam + mod_g[p + 2]
            g[p + 2] = g_rho * (1.0 - rho * rho)
        return g

    # init: beta by least squares is deliberately NOT used; start cold
    m_buf = np.zeros_like(params)
    v_buf = np.zeros_like(params)
    curve = [(0, rmse_holdout(params))]
    h_trace = []
    t = 0
    order_stream = factory.stream("sgd", "order")
    for epoch in range(1, opts.epochs + 1):
        perm = np.argsort(order_stream.uniform(size=n_train))
        for start in range(0, n_train, opts.batch):
            rows = perm[start:start + opts.batch]
            g = grad_step(params, rows)
            if opts.lr > 0:
                t += 1
                m_buf = opts.beta1 * m_buf + (1 - opts.beta1) * g
                v_buf = opts.beta2 * v_buf + (1 - opts.beta2) * g * g
                mhat = m_buf / (1 - opts.beta1 ** t)
                vhat = v_buf / (1 - opts.beta2 ** t)
                params = params + opts.lr * mhat / (np.sqrt(vhat) + opts.eps)
        curve.append((epoch, rmse_holdout(params)))
        theta = theta_of(params)
        h_trace.append(model.ell_e(theta, params[d_theta:], train_data)
                       + model.mod_term(theta, train_data))
    theta_hat = theta_of(params)
    return SgdFit(theta_hat=theta_hat,
                  v_hat=LatentVector(params[d_theta:].copy(), scale="v"),
                  rmse_curve=curve,
                  h_trace=h_trace,
                  train_mask=train_mask,
                  hold_mask=hold_mask)
