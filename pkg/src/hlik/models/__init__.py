"""Built-in model catalogue."""

from .lmm import LmmModel, LmmSpec, lmm_blup, lmm_u_scale_predictor
from .poisson_gamma import PoissonGammaModel, PoissonGammaSpec, pg_bup
from .exp_future import ExpFutureModel, ExpFutureSpec, ex3_quantities
from .exp_exp import ExpExpModel, ExpExpSpec, ex4_quantities
from .nested_gamma import NestedGammaModel, NestedGammaSpec, nested_gamma_loglik_parts
from .simulate import simulate

MODEL_REGISTRY = {
    "lmm": LmmModel,
    "poisson_gamma": PoissonGammaModel,
    "exp_future": ExpFutureModel,
    "exp_exp": ExpExpModel,
    "nested_gamma": NestedGammaModel,
}

__all__ = [
    "LmmModel", "LmmSpec", "lmm_blup", "lmm_u_scale_predictor",
    "PoissonGammaModel", "PoissonGammaSpec", "pg_bup",
    "ExpFutureModel", "ExpFutureSpec", "ex3_quantities",
    "ExpExpModel", "ExpExpSpec", "ex4_quantities",
    "NestedGammaModel", "NestedGammaSpec", "nested_gamma_loglik_parts",
    "simulate", "MODEL_REGISTRY",
]
