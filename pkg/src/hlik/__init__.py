"""h-likelihood estimation and h-confidence intervals for hierarchical models."""

__version__ = "0.1.0"

from .data import BartlettDiagnostic, ClusteredDataset, FixedParams, HEval, LatentVector
from .modelcore import (ExpScaleView, HModel, bartlett_check, extended_loglik,
                        h_loglik, h_loglik_profile, h_score_info, h_score_info_fd,
                        modification_term)
from .estimate import (FitResult, GcrlbSpec, SgdOptions, VarianceEstimate, gcrlb,
                       inner_newton, mhle_fit, sgd_fit, variance_estimates,
                       vv_block_crosscheck)
from .confidence import (DensityCurve, Interval, approx_pd, ex3_cd, ex3_pd, ex4_cd,
                         ex4_pd, h_confidence_density, plugin_pd, simultaneous_pis,
                         wald_interval)
from .approx import (ElaEstimate, I_B, Proposal, ela_fit, h_B, importance_marginal,
                     nbgamma_collapsed_ela, nested_ela)
from .rng import RngStream, rng_streams
from .special import special_functions
from . import models

__all__ = [
    "BartlettDiagnostic", "ClusteredDataset", "FixedParams", "HEval", "LatentVector",
    "ExpScaleView", "HModel", "bartlett_check", "extended_loglik", "h_loglik",
    "h_loglik_profile", "h_score_info", "h_score_info_fd", "modification_term",
    "FitResult", "GcrlbSpec", "SgdOptions", "VarianceEstimate", "gcrlb",
    "inner_newton", "mhle_fit", "sgd_fit", "variance_estimates", "vv_block_crosscheck",
    "DensityCurve", "Interval", "approx_pd", "ex3_cd", "ex3_pd", "ex4_cd", "ex4_pd",
    "h_confidence_density", "plugin_pd", "simultaneous_pis", "wald_interval",
    "ElaEstimate", "I_B", "Proposal", "ela_fit", "h_B", "importance_marginal",
    "nbgamma_collapsed_ela", "nested_ela",
    "RngStream", "rng_streams", "special_functions", "models",
]
