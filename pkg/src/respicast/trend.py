import logging
import math
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import arviz as az
import numpy as np
import pandas as pd
import pymc as pm
import pytensor.tensor as pt
from prometheus_client import Summary
from scipy import stats

from .config import SamplerConfig
from .distributions import negbin_logpmf
from .errors import BasisRangeError, DegeneratePosteriorError, TrendConvergenceError, TrendError
from .series import DAYS_PER_WEEK, CountSeries, DayOfWeekEffects, weekday_index
from .spline import SplineBasis

logger = logging.getLogger(__name__)

FIT_DURATION = Summary('respicast_trend_fit_duration', 'The time it takes to sample the P-spline posterior')

TREND_QUANTILES = (0.025, 0.25, 0.5, 0.75, 0.975)
MIN_SUMMARY_DRAWS = 400
LN2 = math.log(2)


class PriorKind(str, Enum):
    flat_positive = 'flat_positive'
    normal = 'normal'


class ParameterPrior(NamedTuple):
    kind: PriorKind = PriorKind.flat_positive
    mean: float = math.nan
    sd: float = math.nan

    @classmethod
    def flat(cls) -> 'ParameterPrior':
        return cls(PriorKind.flat_positive)

    @classmethod
    def normal(cls, mean: float, sd: float) -> 'ParameterPrior':
        if not sd > 0:
            raise ValueError(f'Normal prior needs sd > 0, got {sd}')
        return cls(PriorKind.normal, float(mean), float(sd))

    def logpdf(self, value: float, upper: float) -> float:
        '''Flat priors are uniform on (0, upper); normal priors are truncated to positive values.'''
        if value <= 0:
            return -math.inf
        if self.kind is PriorKind.flat_positive:
            return -math.log(upper) if value < upper else -math.inf
        a = (0 - self.mean) / self.sd
        return float(stats.truncnorm.logpdf(value, a, np.inf, loc=self.mean, scale=self.sd))


@dataclass(frozen=True)
class TrendPriors:
    tau: ParameterPrior = ParameterPrior.flat()
    k: ParameterPrior = ParameterPrior.flat()
    tau_upper: float = 1e3
    k_upper: float = 1e4


class TrendState(NamedTuple):
    b: np.ndarray
    tau: float
    k: float
    log_omega: Optional[np.ndarray] = None


class TrendDiagnostics(NamedTuple):
    max_rhat: float
    min_ess: float
    rhat: Dict[str, float]
    ess: Dict[str, float]
    acceptance_rate: float
    divergences: int
    n_draws: int

    def converged(self, max_rhat: float, min_ess: float) -> bool:
        return self.max_rhat < max_rhat and self.min_ess > min_ess

    def to_dict(self) -> dict:
        return self._asdict()


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    '''Posterior draws of the spline coefficients and hyperparameters, one row per draw.'''
    b: np.ndarray
    tau: np.ndarray
    k: np.ndarray
    chain: np.ndarray
    draw: np.ndarray
    log_omega: Optional[np.ndarray] = None
    basis: Optional[SplineBasis] = None
    diagnostics: Optional[TrendDiagnostics] = None

    def __post_init__(self) -> None:
        if np.any(self.tau <= 0) or np.any(self.k <= 0):
            raise TrendError('tau and k must be positive in every draw')
        if self.log_omega is not None and np.any(np.abs(self.log_omega.sum(axis=1)) > 1e-8):
            raise TrendError('Day-of-week log effects must sum to zero in every draw')
        if self.basis is not None and self.b.shape[1] != self.basis.n_basis:
            raise TrendError(f'{self.b.shape[1]} coefficients for a basis of {self.basis.n_basis} functions')

    def __len__(self) -> int:
        return len(self.tau)

    def _require_basis(self) -> SplineBasis:
        if self.basis is None:
            raise BasisRangeError('Posterior samples carry no spline basis')
        return self.basis


@dataclass(frozen=True, eq=False)
class TrendSummary:
    '''Per-day quantiles of the modelled trend and growth rate, plus derived growth summaries.'''
    dates: List[date]
    levels: Tuple[float, ...]
    quantiles: Dict[str, np.ndarray]
    p_growth: np.ndarray
    doubling_time: np.ndarray
    stable: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = []
        iso = [d.isoformat() for d in self.dates]
        for quantity, values in self.quantiles.items():
            for level, row in zip(self.levels, values):
                rows.extend(zip(iso, [quantity] * len(iso), [level] * len(iso), row))
        for quantity, values in (('p_growth', self.p_growth), ('doubling_time', self.doubling_time), ('stable', self.stable.astype(float))):
            rows.extend(zip(iso, [quantity] * len(iso), [math.nan] * len(iso), values))
        return pd.DataFrame(rows, columns=['date', 'quantity', 'quantile', 'value'])


def log_posterior(state: TrendState, series: CountSeries, basis: SplineBasis, priors: TrendPriors) -> float:
    '''
    Unnormalised log posterior: negative binomial data term, second-order random-walk prior on
    the coefficients, priors on tau and k, and a N(0, 1) prior on the free day-of-week effects.
    '''
    b = np.asarray(state.b, dtype=float)
    if len(b) != basis.n_basis:
        raise TrendError(f'State has {len(b)} coefficients, basis has {basis.n_basis}')
    if not (state.tau > 0 and state.k > 0):
        return -math.inf

    log_mean = basis.design_matrix() @ b
    dow_prior = 0.0
    if state.log_omega is not None:
        log_omega = np.asarray(state.log_omega, dtype=float)
        if len(log_omega) != DAYS_PER_WEEK or abs(log_omega.sum()) > 1e-8:
            raise TrendError('log_omega needs 7 values summing to zero')
        log_mean = log_mean + log_omega[series.weekdays()]
        dow_prior = float(stats.norm.logpdf(log_omega[:-1]).sum())

    data = float(negbin_logpmf(series.counts, np.exp(log_mean), state.k).sum())
    return (
        data
        + rw2_log_prior(b, state.tau)
        + priors.tau.logpdf(state.tau, priors.tau_upper)
        + priors.k.logpdf(state.k, priors.k_upper)
        + dow_prior
    )


def rw2_log_prior(b: np.ndarray, tau: float) -> float:
    '''sum over i >= 2 of log N(b_i - 2 b_{i-1} + b_{i-2} | 0, tau^2).'''
    return float(stats.norm.logpdf(np.diff(b, 2), scale=tau).sum())


def _parameter_rv(name: str, prior: ParameterPrior, upper: float, initval: float):
    if prior.kind is PriorKind.flat_positive:
        return pm.Uniform(name, lower=0, upper=upper, initval=min(initval, upper / 2))
    return pm.TruncatedNormal(name, mu=prior.mean, sigma=prior.sd, lower=0, initval=prior.mean if prior.mean > 0 else prior.sd)


def build_model(series: CountSeries, basis: SplineBasis, priors: TrendPriors, dow: bool) -> pm.Model:
    '''
    The coefficients are written non-centred: the first two are flat, and the random-walk
    innovations u_i = tau * z_i are integrated twice.
    '''
    design = basis.design_matrix()
    start_level = math.log(series.counts.mean() + 0.5)

    with pm.Model() as model:
        tau = _parameter_rv('tau', priors.tau, priors.tau_upper, initval=0.1)
        k = _parameter_rv('k', priors.k, priors.k_upper, initval=10.0)
        b_start = pm.Flat('b_start', shape=2, initval=np.full(2, start_level))
        z = pm.Normal('z', mu=0, sigma=1, shape=basis.n_basis - 2)

        slope0 = b_start[1] - b_start[0]
        slopes = pt.concatenate([slope0[None], slope0 + pt.cumsum(tau * z)])
        b = pm.Deterministic('b', pt.concatenate([b_start[:1], b_start[0] + pt.cumsum(slopes)]))

        log_mean = pt.dot(design, b)
        if dow:
            free = pm.Normal('log_omega_free', mu=0, sigma=1, shape=DAYS_PER_WEEK - 1)
            log_omega = pm.Deterministic('log_omega', pt.concatenate([free, -pt.sum(free, keepdims=True)]))
            log_mean = log_mean + log_omega[series.weekdays()]

        pm.NegativeBinomial('counts', mu=pt.exp(log_mean), alpha=k, observed=series.counts)
    return model


def _diagnostics(idata: az.InferenceData, dow: bool) -> TrendDiagnostics:
    var_names = ['tau', 'k', 'b'] + (['log_omega_free'] if dow else [])
    rhat = az.rhat(idata, var_names=var_names)
    ess = az.ess(idata, var_names=var_names)
    rhat_by_name: Dict[str, float] = {}
    ess_by_name: Dict[str, float] = {}
    for name in var_names:
        r = np.atleast_1d(rhat[name].values)
        e = np.atleast_1d(ess[name].values)
        for i, (ri, ei) in enumerate(zip(r, e)):
            label = name if r.size == 1 else f'{name}[{i}]'
            rhat_by_name[label] = float(ri)
            ess_by_name[label] = float(ei)
    rhat_values = np.array(list(rhat_by_name.values()))
    ess_values = np.array(list(ess_by_name.values()))
    # NaN diagnostics (e.g. a chain stuck at one value) count as failures
    sample_stats = idata.sample_stats
    return TrendDiagnostics(
        max_rhat=math.inf if np.any(np.isnan(rhat_values)) else float(rhat_values.max()),
        min_ess=0.0 if np.any(np.isnan(ess_values)) else float(ess_values.min()),
        rhat=rhat_by_name,
        ess=ess_by_name,
        acceptance_rate=float(sample_stats['acceptance_rate'].mean()) if 'acceptance_rate' in sample_stats else math.nan,
        divergences=int(sample_stats['diverging'].sum()) if 'diverging' in sample_stats else 0,
        n_draws=int(idata.posterior.sizes['chain'] * idata.posterior.sizes['draw']),
    )


@FIT_DURATION.time()
def fit_pspline(
    series: CountSeries,
    basis: SplineBasis,
    priors: TrendPriors,
    sampler: SamplerConfig,
    dow: bool = False,
) -> PosteriorSamples:
    '''
    Samples the P-spline posterior with NUTS. Raises TrendConvergenceError (with diagnostics)
    unless split-Rhat < max_rhat and ESS > min_ess for tau, k and every coefficient.
    '''
    if len(series) != basis.n_days or series.start_date != basis.start_date:
        raise BasisRangeError(f'{series!r} does not match basis range {basis.start_date}..{basis.end_date}')

    model = build_model(series, basis, priors, dow)
    logger.info(f'Sampling {series.key} trend: {basis.n_basis} coefficients, {sampler.chains} chains x {sampler.draws} draws, dow={dow}')
    try:
        with model:
            idata = pm.sample(
                draws=sampler.draws,
                tune=sampler.warmup,
                chains=sampler.chains,
                cores=sampler.cores,
                target_accept=sampler.target_accept,
                random_seed=sampler.seed,
                progressbar=False,
                compute_convergence_checks=False,
                return_inferencedata=True,
            )
    except (pm.exceptions.SamplingError, FloatingPointError, ValueError) as e:
        raise TrendConvergenceError(f'Sampler failed for {series.key}: {e}')

    diagnostics = _diagnostics(idata, dow)
    logger.info(f'{series.key} trend diagnostics: max Rhat {diagnostics.max_rhat:.4f}, min ESS {diagnostics.min_ess:.0f}, {diagnostics.divergences} divergences')
    if not diagnostics.converged(sampler.max_rhat, sampler.min_ess):
        raise TrendConvergenceError(
            f'{series.key} trend did not converge: max Rhat {diagnostics.max_rhat:.4f} (need < {sampler.max_rhat}), '
            f'min ESS {diagnostics.min_ess:.0f} (need > {sampler.min_ess})',
            diagnostics,
        )

    posterior = idata.posterior.stack(sample=('chain', 'draw'))
    log_omega = posterior['log_omega'].values.T.copy() if dow else None
    return PosteriorSamples(
        b=posterior['b'].values.T.copy(),
        tau=posterior['tau'].values.copy(),
        k=posterior['k'].values.copy(),
        chain=posterior['chain'].values.astype(int),
        draw=posterior['draw'].values.astype(int),
        log_omega=log_omega,
        basis=basis,
        diagnostics=diagnostics,
    )


def trend_draws(samples: PosteriorSamples, days: Optional[np.ndarray] = None) -> np.ndarray:
    '''s(t) per draw, shape (n_draws, n_days).'''
    return samples.b @ samples._require_basis().design_matrix(days).T


def growth_rate(samples: PosteriorSamples, days: Optional[np.ndarray] = None) -> np.ndarray:
    '''r(t) = ds/dt per draw (1/day), from the analytic basis derivatives.'''
    return samples.b @ samples._require_basis().derivative_matrix(days).T


def signed_doubling_time(r) -> np.ndarray:
    '''ln 2 / |r|, positive for doubling and negative for halving; infinite where r = 0.'''
    r = np.asarray(r, dtype=float)
    with np.errstate(divide='ignore'):
        return np.where(r == 0, np.inf, LN2 / r)


def summarise_trend(samples: PosteriorSamples, dow_effects: Optional[DayOfWeekEffects] = None) -> TrendSummary:
    if len(samples) < MIN_SUMMARY_DRAWS:
        raise TrendError(f'Need at least {MIN_SUMMARY_DRAWS} draws to summarise, got {len(samples)}')
    basis = samples._require_basis()
    levels = TREND_QUANTILES
    s = trend_draws(samples)
    r = growth_rate(samples)

    quantiles = {
        'expected': np.quantile(np.exp(s), levels, axis=0),
        'growth_rate': np.quantile(r, levels, axis=0),
    }
    weekdays = weekday_index(basis.start_date, basis.n_days)
    if samples.log_omega is not None:
        quantiles['expected_dow'] = np.quantile(np.exp(s + samples.log_omega[:, weekdays]), levels, axis=0)
    elif dow_effects is not None:
        quantiles['expected_dow'] = np.quantile(np.exp(s) * dow_effects.for_weekdays(weekdays), levels, axis=0)

    growth = quantiles['growth_rate']
    return TrendSummary(
        dates=basis.dates(),
        levels=levels,
        quantiles=quantiles,
        p_growth=(r > 0).mean(axis=0),
        doubling_time=signed_doubling_time(growth[levels.index(0.5)]),
        stable=(growth[0] <= 0) & (growth[-1] >= 0),
    )


def derive_informative_priors(samples: PosteriorSamples, tau_upper: float = 1e3, k_upper: float = 1e4) -> TrendPriors:
    '''Normal priors on tau and k with the posterior sample mean and sd.'''
    priors = {}
    for name in ('tau', 'k'):
        values = getattr(samples, name)
        if len(values) < 2:
            raise DegeneratePosteriorError(f'Need at least two draws of {name}')
        sd = float(np.std(values, ddof=1))
        if not sd > 0:
            raise DegeneratePosteriorError(f'Posterior of {name} has zero spread')
        priors[name] = ParameterPrior.normal(float(np.mean(values)), sd)
    return TrendPriors(tau=priors['tau'], k=priors['k'], tau_upper=tau_upper, k_upper=k_upper)


class TrendAgreement(NamedTuple):
    n_days: int
    expected_coverage: float
    growth_coverage: float


def compare_trends(realtime: TrendSummary, retrospective: TrendSummary) -> TrendAgreement:
    '''
    Fraction of shared days on which the real-time median lies inside the retrospective
    95% interval, for the expected count and for the growth rate.
    '''
    shared = sorted(set(realtime.dates) & set(retrospective.dates))
    if len(shared) == 0:
        raise TrendError('Trend summaries share no dates')
    rt_idx = [realtime.dates.index(d) for d in shared]
    retro_idx = [retrospective.dates.index(d) for d in shared]
    mid = realtime.levels.index(0.5)

    def coverage(quantity: str) -> float:
        median = realtime.quantiles[quantity][mid, rt_idx]
        lower = retrospective.quantiles[quantity][0, retro_idx]
        upper = retrospective.quantiles[quantity][-1, retro_idx]
        return float(np.mean((median >= lower) & (median <= upper)))

    return TrendAgreement(len(shared), coverage('expected'), coverage('growth_rate'))


def _parameter_names(samples: PosteriorSamples) -> List[Tuple[str, np.ndarray]]:
    columns = [('tau', samples.tau), ('k', samples.k)]
    columns += [(f'b[{i}]', samples.b[:, i]) for i in range(samples.b.shape[1])]
    if samples.log_omega is not None:
        columns += [(f'log_omega[{w}]', samples.log_omega[:, w]) for w in range(DAYS_PER_WEEK)]
    return columns


def write_posterior_csv(samples: PosteriorSamples, path: Union[str, Path]) -> None:
    frames = [
        pd.DataFrame({'draw': samples.draw, 'chain': samples.chain, 'parameter': name, 'value': values})
        for name, values in _parameter_names(samples)
    ]
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, lineterminator='\n')


def read_posterior_csv(path: Union[str, Path], basis: Optional[SplineBasis] = None) -> PosteriorSamples:
    frame = pd.read_csv(path)
    missing = {'draw', 'chain', 'parameter', 'value'} - set(frame.columns)
    if missing:
        raise TrendError(f'{path}: missing columns {sorted(missing)}')
    wide = frame.pivot_table(index=['chain', 'draw'], columns='parameter', values='value', sort=True)

    def indexed(prefix: str) -> Optional[np.ndarray]:
        names = sorted((c for c in wide.columns if c.startswith(prefix + '[')), key=lambda c: int(c[len(prefix) + 1:-1]))
        return wide[names].to_numpy() if names else None

    return PosteriorSamples(
        b=indexed('b'),
        tau=wide['tau'].to_numpy(),
        k=wide['k'].to_numpy(),
        chain=wide.index.get_level_values('chain').to_numpy(),
        draw=wide.index.get_level_values('draw').to_numpy(),
        log_omega=indexed('log_omega'),
        basis=basis,
    )


def write_trend_csv(summary: TrendSummary, path: Union[str, Path]) -> None:
    summary.to_frame().to_csv(path, index=False, lineterminator='\n')


def write_trend_json(summary: TrendSummary, path: Union[str, Path]) -> None:
    summary.to_frame().to_json(path, orient='records', indent=1)


def read_trend_csv(path: Union[str, Path]) -> TrendSummary:
    frame = pd.read_csv(path, dtype={'date': str, 'quantity': str})
    dates = sorted({date.fromisoformat(d) for d in frame['date']})
    position = {d.isoformat(): i for i, d in enumerate(dates)}
    quantiled = frame[frame['quantile'].notna()]
    levels = tuple(sorted(quantiled['quantile'].unique()))

    quantiles = {}
    for quantity, group in quantiled.groupby('quantity', sort=False):
        values = np.full((len(levels), len(dates)), np.nan)
        for row in group.itertuples(index=False):
            values[levels.index(row.quantile), position[row.date]] = row.value
        quantiles[quantity] = values

    def per_day(quantity: str) -> np.ndarray:
        values = np.full(len(dates), np.nan)
        for row in frame[frame['quantity'] == quantity].itertuples(index=False):
            values[position[row.date]] = row.value
        return values

    return TrendSummary(dates, levels, quantiles, per_day('p_growth'), per_day('doubling_time'), per_day('stable') > 0.5)
