import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy import stats

from .errors import DelayError

PMF_TOLERANCE = 1e-12


class DelaySpec(NamedTuple):
    '''Gamma delay given by mean and standard deviation (days), truncated to [min_lag, max_lag].'''
    mean: float
    sd: float
    max_lag: int
    min_lag: int = 0

    def validate(self) -> None:
        if not (self.mean > 0 and self.sd > 0):
            raise DelayError(f'Delay mean and sd must be positive, got mean={self.mean}, sd={self.sd}')
        if self.min_lag not in (0, 1):
            raise DelayError(f'min_lag must be 0 or 1, got {self.min_lag}')
        if self.max_lag < max(1, self.min_lag):
            raise DelayError(f'max_lag must be a positive integer >= min_lag, got {self.max_lag}')


class DelayMoments(NamedTuple):
    mean: float
    sd: float


@dataclass(frozen=True, eq=False)
class DiscretePMF:
    '''Probability mass over the integer lags min_lag, min_lag + 1, ..., max_lag.'''
    min_lag: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 1 or len(probs) == 0:
            raise DelayError('PMF needs at least one lag')
        if self.min_lag < 0:
            raise DelayError(f'min_lag must be non-negative, got {self.min_lag}')
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise DelayError('PMF probabilities must be finite and non-negative')
        if abs(probs.sum() - 1.0) > PMF_TOLERANCE:
            raise DelayError(f'PMF sums to {probs.sum()!r}, not 1')
        probs.setflags(write=False)
        object.__setattr__(self, 'probs', probs)

    @classmethod
    def point_mass(cls, lag: int) -> 'DiscretePMF':
        return cls(lag, np.array([1.0]))

    @property
    def max_lag(self) -> int:
        return self.min_lag + len(self.probs) - 1

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.min_lag, self.max_lag + 1)

    @property
    def mean(self) -> float:
        return pmf_mean(self)

    @property
    def mean_lag(self) -> int:
        '''Mean rounded to the nearest whole day, for shifting daily series.'''
        return int(math.floor(self.mean + 0.5))

    def as_array(self) -> np.ndarray:
        '''Dense mass indexed by lag from 0 to max_lag (zero below min_lag).'''
        dense = np.zeros(self.max_lag + 1)
        dense[self.min_lag:] = self.probs
        return dense


class PathogenDelays(NamedTuple):
    generation: DiscretePMF
    admission: DiscretePMF
    report: Optional[DiscretePMF] = None

    @property
    def max_lag(self) -> int:
        lags = [self.generation.max_lag, self.admission.max_lag]
        if self.report is not None:
            lags.append(self.report.max_lag)
        return max(lags)


def gamma_parameters(mean: float, sd: float) -> Tuple[float, float]:
    '''(shape, rate) of the gamma distribution with the given mean and sd.'''
    shape = (mean / sd) ** 2
    rate = mean / sd ** 2
    if not (math.isfinite(shape) and math.isfinite(rate) and shape > 0 and rate > 0):
        raise DelayError(f'Gamma parameters not finite and positive for mean={mean}, sd={sd}')
    return shape, rate


def discretize_gamma(spec: DelaySpec) -> DiscretePMF:
    '''
    Lag s receives the probability that the continuous delay falls in [s - 0.5, s + 0.5).
    The lowest bin starts at 0, so mass below min_lag folds into lag min_lag. Mass beyond
    max_lag is discarded and the remainder renormalised.
    '''
    spec.validate()
    shape, rate = gamma_parameters(spec.mean, spec.sd)
    lags = np.arange(spec.min_lag, spec.max_lag + 1)
    edges = np.append(lags - 0.5, spec.max_lag + 0.5)
    edges[0] = 0.0

    dist = stats.gamma(a=shape, scale=1.0 / rate)
    # Differencing survival functions keeps precision in the upper tail
    mass = np.where(edges[:-1] >= spec.mean, -np.diff(dist.sf(edges)), np.diff(dist.cdf(edges)))
    mass = np.clip(mass, 0.0, None)
    total = mass.sum()
    if not total > 0:
        raise DelayError(f'No probability mass on lags {spec.min_lag}..{spec.max_lag} for {spec}')
    return DiscretePMF(spec.min_lag, mass / total)


def convolve_delays(a: Tuple[float, float], b: Tuple[float, float]) -> DelayMoments:
    '''Moments of the sum of two independent delays: means and variances add.'''
    for name, (mean, sd) in (('a', a), ('b', b)):
        if mean < 0 or sd < 0:
            raise DelayError(f'Delay {name} has negative moments: mean={mean}, sd={sd}')
    return DelayMoments(a[0] + b[0], math.sqrt(a[1] ** 2 + b[1] ** 2))


def pmf_mean(p: DiscretePMF) -> float:
    return float(np.dot(p.lags, p.probs))
