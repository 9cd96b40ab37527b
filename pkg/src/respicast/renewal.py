import logging
import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np
from scipy import linalg

from .delays import DiscretePMF
from .distributions import negbin_logpmf, sample_negbin, sample_poisson
from .errors import GPNumericalError

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5)
JITTER = 1e-8
JITTER_RETRIES = 2


@dataclass(frozen=True)
class GPKernel:
    '''Matern 5/2 covariance for ln R_t with observation noise sd sn.'''
    s0: float = 0.1
    l: float = 30.0
    sn: float = 0.001

    def __post_init__(self) -> None:
        if not (self.s0 > 0 and self.l > 0 and self.sn > 0):
            raise ValueError(f'Kernel parameters must be positive: {self}')

    def stationary_variance(self, mode: str = 'noise') -> float:
        '''Variance of the initial ln R draw: sn^2, or s0^2 + sn^2 with mode='signal_plus_noise'.'''
        if mode == 'noise':
            return self.sn ** 2
        if mode == 'signal_plus_noise':
            return self.s0 ** 2 + self.sn ** 2
        raise ValueError(f'Unknown initial variance mode {mode!r}')


def matern52(d, kernel: GPKernel):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError('Distance must be non-negative')
    scaled = SQRT5 * d / kernel.l
    value = kernel.s0 ** 2 * (1 + scaled + scaled ** 2 / 3) * np.exp(-scaled)
    return float(value) if value.ndim == 0 else value


class GPConditional:
    '''
    Conditional normal of the next ln R_t given the most recent `window` daily values.
    The regression weights depend only on the history length, so they are solved once per
    length and shared by all particles.
    '''

    def __init__(self, kernel: GPKernel, window: int) -> None:
        if window < 1:
            raise ValueError(f'window must be >= 1, got {window}')
        self.kernel = kernel
        self.window = window
        self._cache: Dict[int, Tuple[np.ndarray, float]] = {}

    def weights(self, n: int) -> Tuple[np.ndarray, float]:
        '''(w, var) such that the conditional mean is history[-n:] @ w and the variance is var.'''
        if n not in self._cache:
            self._cache[n] = self._solve(n)
        return self._cache[n]

    def _solve(self, n: int) -> Tuple[np.ndarray, float]:
        times = np.arange(n, dtype=float)
        cov = matern52(np.abs(times[:, None] - times[None, :]), self.kernel)
        cov[np.diag_indices(n)] += self.kernel.sn ** 2
        cross = matern52(n - times, self.kernel)
        prior_var = matern52(0.0, self.kernel) + self.kernel.sn ** 2

        jitter = 0.0
        for attempt in range(JITTER_RETRIES + 1):
            try:
                factor = linalg.cho_factor(cov + jitter * np.eye(n), lower=True)
                break
            except linalg.LinAlgError:
                if attempt == JITTER_RETRIES:
                    raise GPNumericalError(f'Cholesky of the {n}x{n} GP covariance failed after {JITTER_RETRIES} jitter retries')
                jitter = JITTER if jitter == 0 else jitter * 10
                logger.warning(f'GP covariance for {n} points not positive definite, retrying with jitter {jitter}')
        w = linalg.cho_solve(factor, cross)
        var = max(prior_var - float(cross @ w), 0.0)
        return w, var

    def moments(self, history: np.ndarray) -> Tuple[np.ndarray, float]:
        n = min(history.shape[-1], self.window)
        w, var = self.weights(n)
        return history[..., -n:] @ w, var


def gp_step(
    ln_r_history: np.ndarray,
    kernel: GPKernel,
    window: int,
    rng: np.random.Generator,
    initial_variance: str = 'noise',
    conditional: Optional[GPConditional] = None,
) -> np.ndarray:
    '''
    Draws ln R_t given the preceding values (last axis is time, most recent last). With no
    history the draw comes from N(0, initial variance).
    '''
    ln_r_history = np.asarray(ln_r_history, dtype=float)
    batch_shape = ln_r_history.shape[:-1]
    if ln_r_history.shape[-1] == 0:
        return math.sqrt(kernel.stationary_variance(initial_variance)) * rng.standard_normal(batch_shape)
    if conditional is None:
        conditional = GPConditional(kernel, window)
    mean, var = conditional.moments(ln_r_history)
    return mean + math.sqrt(var) * rng.standard_normal(batch_shape)


def _lagged(history: np.ndarray, dense: np.ndarray, first_lag: int) -> np.ndarray:
    '''sum_s dense[s] * history[-1 - s + first_lag], zero-padding history on the left.'''
    history = np.asarray(history)
    width = len(dense) - first_lag
    if width <= 0:
        return np.zeros(history.shape[:-1])
    # Only the last width columns are read
    history = history[..., -width:].astype(float)
    if history.shape[-1] < width:
        pad = [(0, 0)] * (history.ndim - 1) + [(width - history.shape[-1], 0)]
        history = np.pad(history, pad)
    return history[..., -width:][..., ::-1] @ dense[first_lag:]


def infection_pressure(infections_history: np.ndarray, gen_pmf: DiscretePMF) -> np.ndarray:
    '''sum_{s>=1} g_s I_{t-s} for a history ending on day t-1.'''
    if gen_pmf.min_lag < 1:
        raise ValueError('Generation interval must start at lag 1 or later')
    return _lagged(infections_history, gen_pmf.as_array(), first_lag=1)


def renewal_step(infections_history: np.ndarray, r_t, gen_pmf: DiscretePMF, rng: np.random.Generator) -> np.ndarray:
    '''I_t ~ Poisson(R_t * sum_s g_s I_{t-s}); history ends on day t-1 and is zero-padded if short.'''
    return sample_poisson(rng, np.asarray(r_t) * infection_pressure(infections_history, gen_pmf))


def convolve_observed(infections_history: np.ndarray, pmf: DiscretePMF) -> np.ndarray:
    '''Z_t (or H_t) = sum_s pmf_s I_{t-s} for a history ending on day t.'''
    return _lagged(infections_history, pmf.as_array(), first_lag=0)


def chr_step(ln_p: np.ndarray, sigma_p: float, rng: np.random.Generator) -> np.ndarray:
    if sigma_p < 0:
        raise ValueError(f'sigma_p must be non-negative, got {sigma_p}')
    ln_p = np.asarray(ln_p, dtype=float)
    if sigma_p == 0:
        return ln_p.copy()
    return ln_p + sigma_p * rng.standard_normal(ln_p.shape)


class ObservationModel(NamedTuple):
    p_c: float = 1.0
    k_c: float = 25.0
    k_h: float = 25.0

    def case_mean(self, z, omega_c):
        return self.p_c * np.asarray(omega_c) * np.asarray(z)

    def admission_mean(self, h, p, omega_h):
        return self.p_c * np.asarray(omega_h) * np.asarray(p) * np.asarray(h)


def observation_loglik(
    z, h, p, omega_c: float, omega_h: float,
    cases: Optional[float], admissions: Optional[float],
    model: ObservationModel,
) -> np.ndarray:
    '''
    Log-likelihood of the day's observations given each particle's Z_t, H_t and P_t. Missing
    observations (None or NaN) contribute nothing; single-stream pathogens pass p = 1.
    '''
    has_cases = cases is not None and not math.isnan(cases)
    has_admissions = admissions is not None and not math.isnan(admissions)
    if not (has_cases or has_admissions):
        raise ValueError('observation_loglik needs at least one observation')

    loglik = 0.0
    if has_cases:
        loglik = loglik + negbin_logpmf(cases, model.case_mean(z, omega_c), model.k_c)
    if has_admissions:
        loglik = loglik + negbin_logpmf(admissions, model.admission_mean(h, p, omega_h), model.k_h)
    return np.asarray(loglik, dtype=float)


def sample_observations(
    rng: np.random.Generator,
    z, h, p, omega_c, omega_h,
    model: ObservationModel,
    cases: bool = True,
    admissions: bool = True,
) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    '''Draws C_t and A_t from the observation model (None for a stream not requested).'''
    c = sample_negbin(rng, model.case_mean(z, omega_c), model.k_c) if cases else None
    a = sample_negbin(rng, model.admission_mean(h, p, omega_h), model.k_h) if admissions else None
    return c, a
