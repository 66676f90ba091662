"""Simulation harness: coverage studies, consistency studies, RMSE curves.

Every experiment is reproducible from (plan, seed): replications are split
into fixed-size chunks, each chunk draws from its own counter-based stream,
and aggregation is integer/ordered so the output bytes do not depend on the
worker count.
"""

import configparser
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import special as sp
from .data import FixedParams
from .errors import PlanError
from .rng import rng_streams
from .special import special_functions  # re-exported: part of this module's surface

__all__ = ["ExperimentPlan", "CoverageReport", "coverage_experiment",
           "consistency_experiment", "rmse_curves", "ela_benchmark",
           "load_plans", "plan_hash", "write_manifest",
           "special_functions", "rng_streams"]

_CHUNK = 512


# ---------------------------------------------------------------------------
# Plans
# ---------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    kind: str                 # coverage | consistency | rmse | ela-benchmark
    name: str
    seed: int
    params: dict = field(default_factory=dict)

    def canonical(self):
        """Whitespace-insensitive canonical form used for hashing."""
        def norm(v):
            if isinstance(v, float) and v == int(v):
                return int(v)
            return v
        payload = {"kind": self.kind, "name": self.name, "seed": self.seed,
                   "params": {k: norm(v) for k, v in sorted(self.params.items())}}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def plan_hash(plan):
    return hashlib.sha256(plan.canonical().encode()).hexdigest()[:16]


def _parse_list(text, cast=float):
    return [cast(tok) for tok in text.replace(",", " ").split()]


def _parse_grid(text):
    text = text.strip()
    if text.startswith("geom:"):
        lo, hi, k = _parse_list(text[5:])
        return np.geomspace(lo, hi, int(k))
    if text.startswith("lin:"):
        lo, hi, k = _parse_list(text[4:])
        return np.linspace(lo, hi, int(k))
    return np.asarray(_parse_list(text))


_VALID_PAIRS = {("fixed", "marginal"), ("future-latent", "marginal"),
                ("realized-latent", "conditional")}


def load_plans(path):
    """Parse a plan file: INI sections named coverage/consistency/rmse/ela-benchmark.

    All validation problems are collected and reported together.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise PlanError(f"cannot read plan file {path}")
    problems = []
    plans = []
    seed = cp.getint("run", "seed", fallback=None) if cp.has_section("run") else None
    name_default = os.path.splitext(os.path.basename(path))[0]
    for section in cp.sections():
        if section == "run":
            continue
        kind = section.split(":")[0].strip()
        raw = dict(cp[section])
        pname = raw.pop("name", section.replace(":", "_")) or name_default
        pseed = int(raw.pop("seed", seed if seed is not None else 0))
        params = {}
        try:
            if kind == "coverage":
                params["example"] = int(raw.pop("example"))
                params["target"] = raw.pop("target")
                params["methods"] = [s.strip() for s in raw.pop("methods").split(",")]
                params["level"] = float(raw.pop("level", "0.90"))
                params["replications"] = int(raw.pop("replications", "10000"))
                params["scheme"] = raw.pop("scheme")
                if "theta_grid" in raw:
                    params["theta_grid"] = _parse_grid(raw.pop("theta_grid"))
                if "u0_grid" in raw:
                    params["u0_grid"] = _parse_grid(raw.pop("u0_grid"))
                if "theta0" in raw:
                    params["theta0"] = float(raw.pop("theta0"))
                key = "n" if params["example"] == 3 else "m"
                params["sizes"] = [int(v) for v in _parse_list(raw.pop(key), cast=int)]
                if params["example"] not in (3, 4):
                    problems.append(f"[{section}] example must be 3 or 4")
                if params["target"] not in ("fixed", "future-latent", "realized-latent"):
                    problems.append(f"[{section}] unknown target {params['target']!r}")
                if (params["target"], params["scheme"]) not in _VALID_PAIRS:
                    problems.append(f"[{section}] invalid target/scheme pairing "
                                    f"({params['target']}, {params['scheme']})")
                if params["replications"] < 100:
                    problems.append(f"[{section}] replications must be >= 100")
                if not 0.0 < 1.0 - params["level"] < 1.0:
                    problems.append(f"[{section}] level must be in (0, 1)")
                if params["target"] == "realized-latent" and "u0_grid" not in params:
                    problems.append(f"[{section}] conditional coverage needs u0_grid")
                if params["target"] != "realized-latent" and "theta_grid" not in params:
                    problems.append(f"[{section}] needs theta_grid")
            elif kind == "consistency":
                params["model"] = raw.pop("model")
                params["m_values"] = [int(v) for v in _parse_list(raw.pop("m_values"), int)]
                params["n_values"] = [int(v) for v in _parse_list(raw.pop("n_values"), int)]
                params["m_fixed"] = int(raw.pop("m_fixed", "20"))
                params["n_fixed"] = int(raw.pop("n_fixed", "20"))
                params["replications"] = int(raw.pop("replications", "100"))
                if params["model"] not in ("lmm", "poisson_gamma"):
                    problems.append(f"[{section}] model must be lmm or poisson_gamma")
                if params["replications"] < 100:
                    problems.append(f"[{section}] replications must be >= 100")
            elif kind == "rmse":
                params["n"] = int(raw.pop("n", "200"))
                params["m"] = int(raw.pop("m", "10"))
                params["p"] = int(raw.pop("p", "50"))
                params["rho"] = float(raw.pop("rho", "0.7"))
                params["repetitions"] = int(raw.pop("repetitions", "10"))
                params["epochs"] = int(raw.pop("epochs", "200"))
                params["batch"] = int(raw.pop("batch", "256"))
                params["lr"] = float(raw.pop("lr", "0.02"))
            elif kind == "ela-benchmark":
                params["n"] = int(raw.pop("n", "6"))
                params["m"] = int(raw.pop("m", "3"))
                params["b_values"] = [int(v) for v in _parse_list(raw.pop("b_values", "1 10 100"), int)]
                params["reseeds"] = int(raw.pop("reseeds", "20"))
            else:
                problems.append(f"[{section}] unknown experiment kind {kind!r}")
                continue
        except KeyError as exc:
            problems.append(f"[{section}] missing required key {exc}")
            continue
        if raw:
            problems.append(f"[{section}] unknown keys: {sorted(raw)}")
        plans.append(ExperimentPlan(kind=kind, name=pname, seed=pseed, params=params))
    if problems:
        raise PlanError("invalid plan:\n  " + "\n  ".join(problems))
    if not plans:
        raise PlanError("plan file defines no experiments")
    return plans


# ---------------------------------------------------------------------------
# Coverage experiments (worked examples; closed-form intervals)
# ---------------------------------------------------------------------------


@dataclass
class CoverageReport:
    rows: list  # dicts with theta0, u0, method, level, reps, coverage, mc_se

    HEADER = ["theta0", "u0", "method", "level", "reps", "coverage", "mc_se"]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.HEADER) + "\n")
            for r in self.rows:
                fh.write(",".join([
                    _fmt(r["theta0"]), _fmt(r["u0"]), r["method"], _fmt(r["level"]),
                    str(r["reps"]), _fmt(r["coverage"]), _fmt(r["mc_se"]),
                ]) + "\n")


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _coverage_bounds(example, target, method, size, T, alpha):
    """Closed-form interval bounds per replication for the worked examples."""
    z = sp.norm_ppf(1.0 - alpha / 2.0)
    if example == 3 and target == "fixed":
        if method == "cd":
            return T / sp.gammainc_q_inv(size, alpha / 2.0), \
                   T / sp.gammainc_q_inv(size, 1.0 - alpha / 2.0)
        if method == "wald":
            est = T / size
            half = z * est / math.sqrt(size)
            return est - half, est + half
    if example == 4 and target == "fixed":
        if method == "cd":
            return T * ((1.0 - alpha / 2.0) ** (-1.0 / size) - 1.0), \
                   T * ((alpha / 2.0) ** (-1.0 / size) - 1.0)
        if method == "wald":
            est = T / size
            half = z * math.sqrt((size + 1.0) / size) * est
            return est - half, est + half
    if example == 3 and target == "future-latent":
        if method == "pd":
            return T * ((1.0 - alpha / 2.0) ** (-1.0 / size) - 1.0), \
                   T * ((alpha / 2.0) ** (-1.0 / size) - 1.0)
        if method == "wald":
            est = T / size
            half = z * est * math.sqrt(1.0 + 1.0 / size)
            return est - half, est + half
        if method == "plugin":
            ybar = T / size
            return -ybar * np.log1p(-alpha / 2.0), -ybar * np.log(alpha / 2.0)
    if example == 4 and target == "realized-latent":
        if method == "pd":
            return sp.gammainc_q_inv(size, 1.0 - alpha / 2.0) / T, \
                   sp.gammainc_q_inv(size, alpha / 2.0) / T
        if method == "wald":
            est = size / T
            half = z * est / math.sqrt(size)
            return est - half, est + half
        if method == "plugin":
            theta_hat = T / size
            lo = sp.gammainc_p_inv(size + 1.0, alpha / 2.0) / (theta_hat + T)
            hi = sp.gammainc_p_inv(size + 1.0, 1.0 - alpha / 2.0) / (theta_hat + T)
            return lo, hi
    raise PlanError(f"no interval rule for example {example}, target {target}, method {method}")


def coverage_experiment(plan, workers=1):
    """Empirical coverage of closed-form intervals over a parameter grid."""
    p = plan.params
    example = p["example"]
    target = p["target"]
    alpha = 1.0 - p["level"]
    reps = p["replications"]
    factory = rng_streams(plan.seed)
    rows = []
    for size in p["sizes"]:
        if target == "realized-latent":
            grid = [(p.get("theta0", 1.0), float(u0)) for u0 in p["u0_grid"]]
        else:
            grid = [(float(th), None) for th in p["theta_grid"]]
        for g_idx, (theta0, u0) in enumerate(grid):
            chunks = [(s, min(s + _CHUNK, reps)) for s in range(0, reps, _CHUNK)]

            def run_chunk(bounds, _size=size, _g=g_idx, _theta0=theta0, _u0=u0):
                lo_idx, hi_idx = bounds
                k = hi_idx - lo_idx
                stream = factory.stream(plan.name, "cov", example, target, _size, _g, lo_idx)
                if example == 3:
                    T = stream.gamma(np.full(k, float(_size)), rate=1.0 / _theta0)
                    truth = {"fixed": _theta0,
                             "future-latent": stream.exponential(scale=_theta0, size=k)}[target]
                else:
                    if target == "realized-latent":
                        T = stream.gamma(np.full(k, float(_size)), rate=_u0)
                        truth = _u0
                    else:
                        u = stream.exponential(scale=1.0 / _theta0, size=k)
                        T = stream.gamma(np.full(k, float(_size)), rate=u)
                        truth = _theta0
                counts = {}
                for method in p["methods"]:
                    lo, hi = _coverage_bounds(example, target, method, _size, T, alpha)
                    counts[method] = int(np.sum((lo < truth) & (truth < hi)))
                return counts

            if workers and workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    parts = list(pool.map(run_chunk, chunks))
            else:
                parts = [run_chunk(c) for c in chunks]
            for method in p["methods"]:
                hits = sum(part[method] for part in parts)
                cov = hits / reps
                rows.append({
                    "theta0": theta0, "u0": u0, "method": method, "level": p["level"],
                    "reps": reps, "coverage": cov,
                    "mc_se": math.sqrt(max(cov * (1.0 - cov), 1e-12) / reps),
                })
    return CoverageReport(rows=rows)


# ---------------------------------------------------------------------------
# Consistency study
# ---------------------------------------------------------------------------


def consistency_experiment(model_kind, m_values, n_values, m_fixed, n_fixed,
                           reps, seed, workers=1):
    """Estimation-error samples for the convergence study.

    Returns {(label, m, n): {param: error array}} where labels mark the
    varying dimension, plus v1 for the first latent.
    """
    from .estimate import mhle_fit
    from .models import LmmSpec, PoissonGammaSpec

    if model_kind == "lmm":
        spec = LmmSpec(beta=[0.5, 0.5], sigma2=0.5, lam=0.5)
        names = ["beta0", "beta1", "sigma2", "lambda"]
    elif model_kind == "poisson_gamma":
        spec = PoissonGammaSpec(beta=[0.5, 0.5], alpha=2.0)  # Var(u) = lambda = 0.5
        names = ["beta0", "beta1", "alpha"]
    else:
        raise PlanError(f"consistency study supports lmm/poisson_gamma, not {model_kind}")
    model = spec.model()
    theta0 = spec.to_theta()
    truth = model.theta_to_vector(theta0)
    factory = rng_streams(seed)

    cells = [("m", m, n_fixed) for m in m_values] + [("n", m_fixed, n) for n in n_values]
    out = {}
    for label, m, n in cells:
        errs = {name: np.empty(reps) for name in names}
        errs["v1" if model_kind == "lmm" else "u1"] = np.empty(reps)

        def run(rep_range, _m=m, _n=n):
            res = []
            for rep in rep_range:
                stream = factory.stream("consistency", model_kind, _m, _n, rep)
                lat, data = model.simulate(theta0, _n, _m, stream)
                fit = mhle_fit(model, data)
                tvec = model.theta_to_vector(fit.theta_hat)
                if model_kind == "lmm":
                    lat_err = fit.v_hat.values[0] - lat.values[0]
                else:
                    lat_err = np.exp(fit.v_hat.values[0]) - np.exp(lat.values[0])
                res.append((rep, tvec - truth, lat_err))
            return res

        chunks = [range(s, min(s + 16, reps)) for s in range(0, reps, 16)]
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        for part in parts:
            for rep, terr, lat_err in part:
                for j, name in enumerate(names):
                    errs[name][rep] = terr[j]
                errs["v1" if model_kind == "lmm" else "u1"][rep] = lat_err
        out[(label, m, n)] = errs
    return out


def consistency_summary_rows(results):
    """Quantile summary rows (box-plot feed) per cell and parameter."""
    rows = []
    for (label, m, n), errs in results.items():
        for name, arr in sorted(errs.items()):
            qs = np.quantile(arr, [0.05, 0.25, 0.5, 0.75, 0.95])
            rows.append({"vary": label, "m": m, "n": n, "param": name,
                         "q05": qs[0], "q25": qs[1], "q50": qs[2],
                         "q75": qs[3], "q95": qs[4],
                         "median_abs": float(np.median(np.abs(arr)))})
    return rows


def write_consistency_csv(rows, path):
    header = ["vary", "m", "n", "param", "q05", "q25", "q50", "q75", "q95", "median_abs"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join([r["vary"], str(r["m"]), str(r["n"]), r["param"]]
                              + [_fmt(r[k]) for k in header[4:]]) + "\n")


# ---------------------------------------------------------------------------
# RMSE curves for the scaled linear scenario
# ---------------------------------------------------------------------------


def rmse_curves(plan):
    """Holdout RMSE per epoch for minibatch h-likelihood ascent vs the
    full-batch marginal-likelihood fit, over independent repetitions."""
    from .estimate import SgdOptions, mhle_fit, sgd_fit
    from .models import LmmSpec

    p = plan.params
    rows = []
    for rep in range(p["repetitions"]):
        spec = LmmSpec(beta=np.concatenate([[1.0], np.full(p["p"], 0.2)]),
                       sigma2=1.0, lam=1.0, correlation="ar1", rho=p["rho"])
        model = spec.model()
        theta0 = spec.to_theta()
        stream = rng_streams(plan.seed).stream("rmse", rep)
        lat, data = model.simulate(theta0, p["n"], p["m"], stream,
                                   x_low=-np.pi / 2.0, x_high=np.pi / 2.0)
        opts = SgdOptions(lr=p["lr"], batch=p["batch"], epochs=p["epochs"],
                          seed=plan.seed * 1000 + rep, holdout=0.2)
        sfit = sgd_fit(model, data, opts)
        for epoch, rmse in sfit.rmse_curve:
            rows.append({"rep": rep, "epoch": epoch, "method": "h-lik-sgd", "rmse": rmse})
        # full-batch marginal fit on the same training rows
        from .data import ClusteredDataset
        tr = sfit.train_mask
        train = ClusteredDataset.from_arrays(data.X[tr], data.y[tr], data.index[tr])
        fit = mhle_fit(model, train)
        hb = ~tr
        pred = data.X[hb] @ fit.theta_hat.beta + fit.v_hat.values[data.index[hb]]
        rmse_full = float(np.sqrt(np.mean((data.y[hb] - pred) ** 2)))
        rows.append({"rep": rep, "epoch": p["epochs"], "method": "marginal-full", "rmse": rmse_full})
    return rows


def write_rmse_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("rep,epoch,method,rmse\n")
        for r in rows:
            fh.write(f"{r['rep']},{r['epoch']},{r['method']},{_fmt(r['rmse'])}\n")


# ---------------------------------------------------------------------------
# ELA sampler benchmark (three-level counts model)
# ---------------------------------------------------------------------------


def ela_benchmark(plan):
    """Spread of the log marginal estimate per sampler and B."""
    from .approx import nested_ela
    from .models import NestedGammaSpec

    p = plan.params
    spec = NestedGammaSpec(beta=[0.2], lam1=0.5, lam2=0.3)
    model, theta = spec.model(), spec.to_theta()
    stream = rng_streams(plan.seed).stream("ela-bench", "data")
    lat, data = model.simulate(theta, p["n"], p["m"], stream)
    ref = nested_ela(model, theta, data, "nb-gamma", 100000, seed=plan.seed + 999).log_LB
    rows = []
    for sampler in ("poisson-normal-normal", "poisson-gamma-gamma", "nb-gamma"):
        for B in p["b_values"]:
            for rs in range(p["reseeds"]):
                est = nested_ela(model, theta, data, sampler, B, seed=plan.seed * 131 + rs)
                rows.append({"sampler": sampler, "B": B, "seed": rs,
                             "param": "log_marginal",
                             "abs_error": abs(est.log_LB - ref)})
    return rows


def write_ela_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write("sampler,B,seed,param,abs_error\n")
        for r in rows:
            fh.write(f"{r['sampler']},{r['B']},{r['seed']},{r['param']},{_fmt(r['abs_error'])}\n")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


def write_manifest(path, command, plans, outputs, seed):
    payload = {
        "command": command,
        "seed": seed,
        "plan_hashes": {plan.name: plan_hash(plan) for plan in plans},
        "outputs": sorted(outputs),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "versions": _versions(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _versions():
    import numpy
    import scipy
    out = {"numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba
        out["numba"] = numba.__version__
    except ImportError:
        out["numba"] = None
    from . import __version__
    out["hlik"] = __version__
    return out
