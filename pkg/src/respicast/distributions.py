import math

import numpy as np
from scipy.special import gammaln, xlogy

# Poisson means above this are clamped before sampling
MAX_POISSON_MEAN = 1e12


def negbin_logpmf(y, mean, k: float) -> np.ndarray:
    '''
    Negative binomial log-pmf parameterised by mean and dispersion k (variance mean + mean^2/k).
    k = inf gives the Poisson log-pmf. A zero mean has all its mass on y = 0.
    '''
    y = np.asarray(y, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if math.isinf(k):
        return xlogy(y, mean) - mean - gammaln(y + 1)
    with np.errstate(divide='ignore'):
        return (
            gammaln(y + k) - gammaln(k) - gammaln(y + 1)
            - k * np.log1p(mean / k)
            + xlogy(y, mean / (mean + k))
        )


def sample_negbin(rng: np.random.Generator, mean, k: float) -> np.ndarray:
    mean = np.minimum(np.asarray(mean, dtype=float), MAX_POISSON_MEAN)
    if math.isinf(k):
        return rng.poisson(mean)
    return rng.negative_binomial(k, k / (k + mean))


def sample_poisson(rng: np.random.Generator, mean) -> np.ndarray:
    return rng.poisson(np.minimum(np.asarray(mean, dtype=float), MAX_POISSON_MEAN))
