"""Command-line front end: fit models, compute intervals, run experiment plans.

Exit codes: 0 success, 2 usage error, 3 data error, 4 non-convergence,
5 internal error.
"""

import argparse
import csv
import os
import sys

import numpy as np

from .data import ClusteredDataset, FixedParams
from .errors import DataError, DomainError, HlikError, NotConvergedError, PlanError
from .models import MODEL_REGISTRY, ExpExpModel, ExpFutureModel, LmmModel, PoissonGammaModel

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOCONV = 4
EXIT_INTERNAL = 5


# ---------------------------------------------------------------------------
# Model specification files: plain "key = value" lines with a model name
# ---------------------------------------------------------------------------


def parse_model_file(path):
    """Parse 'key = value' lines; 'model = <name>' selects the family.

    Values are numbers, space-separated number lists, or bare strings.
    Schemas: lmm (beta, sigma2, lambda [, rho] [, known = sigma2 lambda]),
    poisson_gamma (beta, alpha), exp_future (theta), exp_exp (theta | xi),
    nested_gamma (beta, lam1, lam2).
    """
    entries = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError("expected 'key = value'", line=lineno)
                key, _, value = line.partition("=")
                entries[key.strip()] = (value.strip(), lineno)
    except OSError as exc:
        raise DataError(f"cannot read model file: {exc}")
    if "model" not in entries:
        raise DataError("model file must define 'model = <name>'")
    name = entries.pop("model")[0]
    if name not in MODEL_REGISTRY:
        raise DataError(f"unknown model {name!r}; choices: {sorted(MODEL_REGISTRY)}")

    def number(key, default=None):
        if key not in entries:
            if default is None:
                raise DataError(f"model file missing {key!r}")
            return default
        value, lineno = entries.pop(key)
        try:
            return float(value)
        except ValueError:
            raise DataError(f"{key}: not a number: {value!r}", line=lineno)

    def vector(key):
        if key not in entries:
            raise DataError(f"model file missing {key!r}")
        value, lineno = entries.pop(key)
        try:
            return np.asarray([float(v) for v in value.replace(",", " ").split()])
        except ValueError:
            raise DataError(f"{key}: not a number list: {value!r}", line=lineno)

    if name == "lmm":
        beta = vector("beta")
        disp = {"sigma2": number("sigma2"), "lambda": number("lambda")}
        correlation = "none"
        if "rho" in entries:
            disp["rho"] = number("rho")
            correlation = "ar1"
        known = {}
        if "known" in entries:
            for key in entries.pop("known")[0].replace(",", " ").split():
                if key not in disp:
                    raise DataError(f"cannot freeze unknown dispersion {key!r}")
                known[key] = disp[key]
        model = LmmModel(n_coef=beta.shape[0], correlation=correlation,
                         known_dispersions=known)
        theta = FixedParams(beta=beta, dispersions=disp)
    elif name == "poisson_gamma":
        beta = vector("beta")
        theta = FixedParams(beta=beta, dispersions={"alpha": number("alpha")})
        model = PoissonGammaModel(n_coef=beta.shape[0])
    elif name == "exp_future":
        theta = FixedParams(beta=np.zeros(0), dispersions={"theta": number("theta")})
        model = ExpFutureModel()
    elif name == "exp_exp":
        if "xi" in entries:
            theta = FixedParams(beta=np.zeros(0), dispersions={"xi": number("xi")})
            model = ExpExpModel(param="xi")
        else:
            theta = FixedParams(beta=np.zeros(0), dispersions={"theta": number("theta")})
            model = ExpExpModel(param="theta")
    else:  # nested_gamma
        beta = vector("beta")
        theta = FixedParams(beta=beta, dispersions={"lam1": number("lam1"),
                                                    "lam2": number("lam2")})
        model = MODEL_REGISTRY["nested_gamma"](n_coef=beta.shape[0])
    if entries:
        raise DataError(f"unknown keys in model file: {sorted(entries)}")
    return name, model, theta


def load_epilepsy_csv(path):
    """Load the patient,visit,count,base,trt,age layout into a count dataset.

    Design columns: intercept, log(base/4), trt, log(base/4)*trt, log(age),
    visit-4 indicator; cluster key is the patient id.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"patient", "visit", "count", "base", "trt", "age"}
        if reader.fieldnames is None or not need.issubset(set(reader.fieldnames)):
            raise DataError(f"epilepsy CSV needs columns {sorted(need)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append((row["patient"], int(row["visit"]), float(row["count"]),
                             float(row["base"]), float(row["trt"]), float(row["age"])))
            except ValueError as exc:
                raise DataError(str(exc), line=lineno)
    if not rows:
        raise DataError("no data rows", line=2)
    ids = [r[0] for r in rows]
    y = np.array([r[2] for r in rows])
    lbase = np.log(np.array([r[3] for r in rows]) / 4.0)
    trt = np.array([r[4] for r in rows])
    lage = np.log(np.array([r[5] for r in rows]))
    v4 = np.array([1.0 if r[1] == 4 else 0.0 for r in rows])
    X = np.column_stack([np.ones(len(rows)), lbase, trt, lbase * trt, lage, v4])
    return ClusteredDataset.from_arrays(X, y, ids, response_kind="count")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args):
    from .approx import Proposal, ela_fit
    from .estimate import mhle_fit, variance_estimates

    name, model, theta0 = parse_model_file(args.model_file)
    data = ClusteredDataset.from_csv(args.data_file, response_kind=model.response_kind)
    init = theta0 if args.init == "file" else None
    if args.method == "exact":
        fit = mhle_fit(model, data, init=init)
    else:
        fit = ela_fit(model, data, Proposal(args.proposal), args.B, args.seed, init=init)
    out = args.out or "fit"
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    fit.to_csv(out + "_estimates.csv", model=model)
    if fit.converged:
        ve = variance_estimates(model, fit, data)
        se = np.sqrt(np.diag(ve.cov))
        names = model.theta_names() + [f"v{i}" for i in range(len(fit.v_hat.values))]
        with open(out + "_se.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["key", "se"])
            for nm, s in zip(names, se):
                w.writerow([nm, repr(float(s))])
    print(f"fit written to {out}_estimates.csv (converged={fit.converged}, "
          f"grad_norm={fit.grad_norm:.3e})")
    return EXIT_OK if fit.converged else EXIT_NOCONV


_TARGET_METHODS = {
    "fixed": {"cd", "wald"},
    "future-latent": {"pd", "wald", "plugin", "c1", "c2", "c3"},
    "realized-latent": {"pd", "wald", "plugin", "c1", "c2", "c3"},
}


def cmd_intervals(args):
    from . import confidence as conf
    from .estimate import mhle_fit, variance_estimates

    name, model, theta0 = parse_model_file(args.model_file)
    if args.epilepsy:
        data = load_epilepsy_csv(args.data_file)
    else:
        data = ClusteredDataset.from_csv(args.data_file, response_kind=model.response_kind)
    if not 0.0 < args.alpha < 1.0:
        raise DomainError("--alpha must be in (0, 1)")
    if args.method not in _TARGET_METHODS.get(args.target, set()):
        raise DomainError(f"method {args.method!r} not valid for target {args.target!r}")

    rows = []
    t = float(np.sum(data.y))
    if args.method in ("cd", "pd") and name in ("exp_future", "exp_exp"):
        example = 3 if name == "exp_future" else 4
        size = data.n_obs
        if args.target == "fixed":
            curve = conf.ex3_cd(t, size) if example == 3 else conf.ex4_cd(t, size)
        else:
            curve = conf.ex3_pd(t, size) if example == 3 else conf.ex4_pd(t, size)
        iv = curve.central_interval(args.alpha, args.target, args.method)
        rows.append(iv)
    elif args.method == "wald":
        fit = mhle_fit(model, data)
        ve = variance_estimates(model, fit, data)
        d = len(model.theta_names())
        if args.target == "fixed":
            for j in range(d):
                rows.append(conf.wald_interval(fit, ve, j, args.alpha,
                                               target="fixed", model=model))
        else:
            for i in range(data.n_clusters):
                iv = conf.wald_interval(fit, ve, d + i, args.alpha,
                                        target=args.target, model=model)
                iv.cluster = i
                rows.append(iv)
    elif args.method in ("plugin", "c1", "c2", "c3"):
        fit = mhle_fit(model, data)
        if args.simultaneous or args.cluster is None:
            if args.method == "c3":
                ivs, flags = conf.simultaneous_pis(model, data, args.alpha,
                                                   args.B, args.seed, fit=fit)
                rows.extend(ivs)
                large = [i for i, f in enumerate(flags) if f > 0]
                if large:
                    print("clusters with interval above 1:", large)
            else:
                for i in range(data.n_clusters):
                    curve = (conf.plugin_pd(model, fit, data, i) if args.method == "plugin"
                             else conf.approx_pd(model, data, args.method, i, fit=fit,
                                                 B=args.B, seed=args.seed))
                    iv = curve.central_interval(args.alpha, args.target, args.method)
                    iv.cluster = i
                    rows.append(iv)
        else:
            i = args.cluster
            curve = (conf.plugin_pd(model, fit, data, i) if args.method == "plugin"
                     else conf.approx_pd(model, data, args.method, i, fit=fit,
                                         B=args.B, seed=args.seed))
            iv = curve.central_interval(args.alpha, args.target, args.method)
            iv.cluster = i
            rows.append(iv)
    else:
        raise DomainError(f"method {args.method!r} needs an exp_future/exp_exp model")

    out = args.out or "intervals.csv"
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", newline="") as fh:
        fh.write("target,method,level,lower,upper,cluster\n")
        for iv in rows:
            cl = "" if iv.cluster is None else str(iv.cluster)
            fh.write(f"{iv.target},{iv.method},{iv.level!r},{iv.lower!r},{iv.upper!r},{cl}\n")
    print(f"{len(rows)} interval(s) written to {out}")
    return EXIT_OK


def cmd_experiment(args):
    from . import sim

    plans = sim.load_plans(args.plan_file)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    for plan in plans:
        if plan.kind == "coverage":
            report = sim.coverage_experiment(plan, workers=args.workers)
            # one file per size keeps the fixed CSV schema
            sizes = plan.params["sizes"]
            per = len(report.rows) // len(sizes)
            for k, size in enumerate(sizes):
                path = os.path.join(out_dir, f"{plan.name}_{size}.csv")
                sim.CoverageReport(rows=report.rows[k * per:(k + 1) * per]).to_csv(path)
                outputs.append(path)
        elif plan.kind == "consistency":
            p = plan.params
            res = sim.consistency_experiment(p["model"], p["m_values"], p["n_values"],
                                             p["m_fixed"], p["n_fixed"],
                                             p["replications"], plan.seed,
                                             workers=args.workers)
            path = os.path.join(out_dir, f"{plan.name}.csv")
            sim.write_consistency_csv(sim.consistency_summary_rows(res), path)
            outputs.append(path)
        elif plan.kind == "rmse":
            rows = sim.rmse_curves(plan)
            path = os.path.join(out_dir, f"{plan.name}.csv")
            sim.write_rmse_csv(rows, path)
            outputs.append(path)
        elif plan.kind == "ela-benchmark":
            rows = sim.ela_benchmark(plan)
            path = os.path.join(out_dir, f"{plan.name}.csv")
            sim.write_ela_csv(rows, path)
            outputs.append(path)
    manifest = os.path.join(out_dir, "manifest.json")
    sim.write_manifest(manifest, " ".join(sys.argv), plans, outputs,
                       seed=plans[0].seed)
    outputs.append(manifest)
    print("wrote: " + ", ".join(outputs))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="hlik",
                                     description="h-likelihood fits, intervals and experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a clustered CSV dataset")
    p_fit.add_argument("model_file")
    p_fit.add_argument("data_file")
    p_fit.add_argument("--init", choices=["auto", "file"], default="auto",
                       help="'file' starts from the model file's parameter values")
    p_fit.add_argument("--method", choices=["exact", "ela"], default="exact")
    p_fit.add_argument("--proposal", choices=["laplace-normal", "conjugate-gamma"],
                       default="laplace-normal")
    p_fit.add_argument("--B", type=int, default=1000)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_iv = sub.add_parser("intervals", help="confidence/predictive intervals")
    p_iv.add_argument("model_file")
    p_iv.add_argument("data_file")
    p_iv.add_argument("--target", required=True,
                      choices=["fixed", "future-latent", "realized-latent"])
    p_iv.add_argument("--method", required=True,
                      choices=["cd", "pd", "wald", "plugin", "c1", "c2", "c3"])
    p_iv.add_argument("--alpha", type=float, required=True)
    p_iv.add_argument("--cluster", type=int, default=None)
    p_iv.add_argument("--simultaneous", action="store_true")
    p_iv.add_argument("--epilepsy", action="store_true",
                      help="data file uses the patient,visit,count,base,trt,age layout")
    p_iv.add_argument("--B", type=int, default=10000)
    p_iv.add_argument("--seed", type=int, default=0)
    p_iv.add_argument("--out", default=None)
    p_iv.set_defaults(func=cmd_intervals)

    p_ex = sub.add_parser("experiment", help="run an experiment plan file")
    p_ex.add_argument("plan_file")
    p_ex.add_argument("--workers", type=int,
                      default=int(os.environ.get("HLIK_WORKERS", "1")))
    p_ex.add_argument("--out-dir", default=None)
    p_ex.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, PlanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotConvergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except HlikError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
