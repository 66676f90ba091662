"""Generic simulate entry point: draw (v, y) from a model's generative law."""

from ..errors import DomainError
from ..rng import RngStream, rng_streams


def simulate(model, theta, shape, seed, x_low=-0.5, x_high=0.5):
    """Draw latents and a dataset from the generative hierarchy.

    ``shape`` is (n clusters, m observations per cluster); deterministic per
    (seed, model, shape) via a dedicated counter-based stream.
    """
    n, m = shape
    if n < 1 or m < 0:
        raise DomainError("shape must have n >= 1 clusters and m >= 0 observations")
    if isinstance(seed, RngStream):
        stream = seed
    else:
        stream = rng_streams(seed).stream("simulate", type(model).__name__, n, m)
    return model.simulate(theta, n, m, stream, x_low=x_low, x_high=x_high)
