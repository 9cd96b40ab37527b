import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from prometheus_client import Gauge, Histogram

from .config import RespicastConfig
from .delays import DiscretePMF
from .distributions import sample_poisson
from .errors import DataError, FilterDegeneracyError, InsufficientDataError
from .renewal import (GPConditional, GPKernel, ObservationModel, chr_step, convolve_observed, gp_step, observation_loglik,
                      renewal_step, sample_observations)
from .series import DAYS_PER_WEEK, CountSeries, DayOfWeekEffects, Pathogen, SeriesKey, Stream, estimate_dow_effects, moving_average

logger = logging.getLogger(__name__)

FILTER_STEP_DURATION = Histogram('respicast_filter_step_duration', 'The time it takes to propagate, weight and resample all particles for one day',
                                 buckets=(0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1, 2.5, 5))
FILTER_ESS = Gauge('respicast_filter_ess', 'Effective sample size after weighting on the most recent filtered day')

FORECAST_QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)
FITTED_QUANTILES = (0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975)


class RngPhase(IntEnum):
    INITIALISE = 0
    PROPAGATE = 1
    RESAMPLE = 2
    OBSERVE = 3
    FITTED_OBSERVE = 4


def day_rng(seed: int, pathogen: Pathogen, day: date, phase: RngPhase) -> np.random.Generator:
    '''
    Counter-based stream keyed by (seed, pathogen, calendar day, phase). Particle i uses position i of
    each vectorised draw, so results do not depend on how the work is scheduled.
    '''
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, list(Pathogen).index(pathogen), day.toordinal(), int(phase)])))


@dataclass(frozen=True)
class ForecastConfig:
    gen_pmf: DiscretePMF
    admit_pmf: DiscretePMF
    report_pmf: Optional[DiscretePMF] = None
    kernel: GPKernel = GPKernel()
    p_c: float = 1.0
    k_c: float = 25.0
    k_h: float = 25.0
    sigma_p: float = 0.01
    p_cv: float = 0.025
    n_particles: int = 100_000
    lag: int = 42
    horizon: int = 28
    gp_window: int = 120
    history_days: int = 250
    chr_days: int = 21
    chr_fallback: float = 0.1
    initial_variance: str = 'noise'
    log_r_clamp: float = 5.0
    day_of_week: bool = True
    seed: int = 1

    def __post_init__(self) -> None:
        if self.n_particles < 1000:
            raise ValueError(f'Need at least 1000 particles, got {self.n_particles}')
        if self.lag < 1 or self.horizon < 0:
            raise ValueError('lag must be >= 1 and horizon >= 0')
        for name in ('k_c', 'k_h'):
            if not getattr(self, name) > 0:
                raise ValueError(f'{name} must be positive or inf')

    @classmethod
    def from_settings(cls, config: RespicastConfig, pathogen: Pathogen, **overrides) -> 'ForecastConfig':
        delays = config.pathogen_delays(pathogen)
        f = config.filter
        values = dict(
            gen_pmf=delays.generation,
            admit_pmf=delays.admission,
            report_pmf=delays.report,
            kernel=GPKernel(config.gp.s0, config.gp.l, config.gp.sn),
            p_c=f.p_c, k_c=f.k_c, k_h=f.k_h, sigma_p=f.sigma_p, p_cv=f.p_cv,
            n_particles=f.particles, lag=f.lag, horizon=f.horizon,
            gp_window=config.gp.window_days, history_days=f.history_days,
            chr_days=f.chr_days, chr_fallback=f.chr_fallback,
            initial_variance=config.gp.initial_variance, log_r_clamp=f.log_r_clamp,
            day_of_week=f.day_of_week, seed=f.seed,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def observation_model(self) -> ObservationModel:
        return ObservationModel(self.p_c, self.k_c, self.k_h)

    @property
    def init_days(self) -> int:
        lags = [self.gen_pmf.max_lag, self.admit_pmf.max_lag]
        if self.report_pmf is not None:
            lags.append(self.report_pmf.max_lag)
        return max(lags)


class Observations(NamedTuple):
    '''Daily observations aligned to simulation days; NaN marks a missing value.'''
    cases: np.ndarray
    admissions: np.ndarray

    @classmethod
    def empty(cls, n_days: int) -> 'Observations':
        return cls(np.full(n_days, np.nan), np.full(n_days, np.nan))


class Particle(NamedTuple):
    ln_r: np.ndarray
    infections: np.ndarray
    ln_p: Optional[np.ndarray]
    z: np.ndarray
    h: np.ndarray


@dataclass(eq=False)
class ParticleEnsemble:
    '''
    N particle trajectories over the simulation days starting at start_date. Columns up to
    `day` are filled. ln R starts on the last initialisation day; earlier columns are NaN.
    '''
    config: ForecastConfig
    pathogen: Pathogen
    start_date: date
    ln_r: np.ndarray
    infections: np.ndarray
    ln_p: Optional[np.ndarray]
    observations: Observations
    omega_c: DayOfWeekEffects
    omega_h: DayOfWeekEffects
    streams: Tuple[Stream, ...]
    day: int
    first_ln_r_day: int
    ess: List[float] = field(default_factory=list)
    log_evidence: float = 0.0

    @property
    def n_particles(self) -> int:
        return self.ln_r.shape[0]

    @property
    def n_days(self) -> int:
        return self.ln_r.shape[1]

    @property
    def current_date(self) -> date:
        return self.date_of(self.day)

    @property
    def frozen_before(self) -> int:
        '''Columns before this index are never rewritten by resampling any more.'''
        return max(0, self.day - self.config.lag + 1)

    @property
    def two_stream(self) -> bool:
        return self.ln_p is not None

    def date_of(self, day: int) -> date:
        return self.start_date + timedelta(days=day)

    def observed_z(self, day: int) -> np.ndarray:
        if self.config.report_pmf is None:
            return np.zeros(self.n_particles)
        return convolve_observed(self.infections[:, :day + 1], self.config.report_pmf)

    def observed_h(self, day: int) -> np.ndarray:
        return convolve_observed(self.infections[:, :day + 1], self.config.admit_pmf)

    def chr(self, day: int) -> np.ndarray:
        if self.ln_p is None:
            return np.ones(self.n_particles)
        return np.exp(self.ln_p[:, day])

    def particle(self, i: int) -> Particle:
        row = self.infections[i, :self.day + 1]
        h = np.array([convolve_observed(row[:d + 1], self.config.admit_pmf) for d in range(self.day + 1)])
        if self.config.report_pmf is None:
            z = np.zeros(self.day + 1)
        else:
            z = np.array([convolve_observed(row[:d + 1], self.config.report_pmf) for d in range(self.day + 1)])
        return Particle(
            ln_r=self.ln_r[i, :self.day + 1].copy(),
            infections=self.infections[i, :self.day + 1].copy(),
            ln_p=None if self.ln_p is None else self.ln_p[i, :self.day + 1].copy(),
            z=z,
            h=h,
        )


def align_observations(start: date, n_days: int, cases: Optional[CountSeries], admissions: Optional[CountSeries]) -> Observations:
    def aligned(series: Optional[CountSeries]) -> np.ndarray:
        values = np.full(n_days, np.nan)
        if series is None:
            return values
        for offset in range(n_days):
            idx = series.index_of(start + timedelta(days=offset))
            if 0 <= idx < len(series):
                values[offset] = series.counts[idx]
        return values
    return Observations(aligned(cases), aligned(admissions))


def _ratio_estimate(cases: np.ndarray, admissions: np.ndarray, config: ForecastConfig) -> float:
    window = slice(0, config.chr_days)
    total_cases = np.nansum(cases[window])
    total_admissions = np.nansum(admissions[window])
    if total_cases == 0 or total_admissions == 0:
        logger.warning(f'First {config.chr_days} days have {total_cases:.0f} cases and {total_admissions:.0f} admissions, '
                       f'using case-hospitalisation ratio {config.chr_fallback}')
        return config.chr_fallback
    return float(total_admissions / total_cases)


def initialize(
    cases: Optional[CountSeries],
    admissions: Optional[CountSeries],
    config: ForecastConfig,
    origin_date: date,
    pathogen: Optional[Pathogen] = None,
) -> ParticleEnsemble:
    '''
    Sets up N particles over the initialisation period: infections from the smoothed anchoring
    series shifted by its mean delay, ln R from the stationary GP draw, and (with both streams)
    the case-hospitalisation ratio from the first days of data.
    '''
    present = [s for s in (cases, admissions) if s is not None]
    if len(present) == 0:
        raise DataError('Forecasting needs a case or an admission series')
    if cases is not None and config.report_pmf is None:
        raise DataError('Case data needs an infection-to-report delay')
    if pathogen is None:
        pathogen = present[0].pathogen
    for s in present:
        if s.origin_date < origin_date:
            raise DataError(f'{s.key} ends {s.origin_date}, before the origin date {origin_date}')

    first_data = max(s.start_date for s in present)
    start = max(origin_date - timedelta(days=config.history_days), first_data)
    n_days = (origin_date - start).days + 1
    t_init = config.init_days
    if n_days < t_init + DAYS_PER_WEEK:
        raise InsufficientDataError(f'{n_days} days between {start} and {origin_date}; need at least {t_init + DAYS_PER_WEEK}')

    observations = align_observations(start, n_days, cases, admissions)
    if cases is not None:
        anchor, anchor_pmf, scale = observations.cases, config.report_pmf, config.p_c
    else:
        # Admissions anchor infections on a crude admission fraction of 1
        anchor, anchor_pmf, scale = observations.admissions, config.admit_pmf, 1.0
    smoothed = moving_average(np.nan_to_num(anchor))
    shift = anchor_pmf.mean_lag
    init_means = smoothed[np.minimum(np.arange(t_init) + shift, n_days - 1)] / scale

    n = config.n_particles
    rng = day_rng(config.seed, pathogen, start, RngPhase.INITIALISE)
    infections = np.zeros((n, n_days), dtype=np.int64)
    infections[:, :t_init] = sample_poisson(rng, np.broadcast_to(init_means, (n, t_init)))

    ln_r = np.full((n, n_days), np.nan)
    ln_r[:, t_init - 1] = gp_step(np.empty((n, 0)), config.kernel, config.gp_window, rng, config.initial_variance)

    ln_p = None
    if cases is not None and admissions is not None:
        mean_ratio = _ratio_estimate(observations.cases, observations.admissions, config)
        shape = 1 / config.p_cv ** 2
        ln_p = np.full((n, n_days), np.nan)
        ln_p[:, t_init - 1] = np.log(rng.gamma(shape, mean_ratio / shape, size=n))

    if config.day_of_week:
        omega_c = estimate_dow_effects(cases.between(start, origin_date)) if cases is not None else DayOfWeekEffects.uniform()
        omega_h = estimate_dow_effects(admissions.between(start, origin_date)) if admissions is not None else DayOfWeekEffects.uniform()
    else:
        omega_c = omega_h = DayOfWeekEffects.uniform()

    streams = tuple(stream for stream, s in ((Stream.cases, cases), (Stream.admissions, admissions)) if s is not None)
    logger.info(f'Initialised {n} particles for {pathogen.value} from {start} to {origin_date} ({n_days} days, {t_init} initialisation days)')
    return ParticleEnsemble(
        config=config,
        pathogen=pathogen,
        start_date=start,
        ln_r=ln_r,
        infections=infections,
        ln_p=ln_p,
        observations=observations,
        omega_c=omega_c,
        omega_h=omega_h,
        streams=streams,
        day=t_init - 1,
        first_ln_r_day=t_init - 1,
    )


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    '''Systematic (low variance) resampling; weights must be normalised.'''
    n = len(weights)
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    positions = (rng.uniform(0, 1.0) + np.arange(n)) / n
    return np.clip(np.searchsorted(cumulative, positions, side='right'), 0, n - 1)


def _propagate(ens: ParticleEnsemble, day: int, conditional: GPConditional, rng: np.random.Generator) -> None:
    '''Fills column `day` of every trajectory from the columns before it.'''
    cfg = ens.config
    history = ens.ln_r[:, ens.first_ln_r_day:day]
    ln_r = gp_step(history, cfg.kernel, cfg.gp_window, rng, cfg.initial_variance, conditional)
    ens.ln_r[:, day] = np.clip(ln_r, -cfg.log_r_clamp, cfg.log_r_clamp)
    ens.infections[:, day] = renewal_step(ens.infections[:, :day], np.exp(ens.ln_r[:, day]), cfg.gen_pmf, rng)
    if ens.ln_p is not None:
        ens.ln_p[:, day] = chr_step(ens.ln_p[:, day - 1], cfg.sigma_p, rng)


def _day_loglik(ens: ParticleEnsemble, day: int, observations: Observations) -> Optional[np.ndarray]:
    cases = observations.cases[day] if Stream.cases in ens.streams else math.nan
    admissions = observations.admissions[day] if Stream.admissions in ens.streams else math.nan
    if math.isnan(cases) and math.isnan(admissions):
        return None
    weekday = ens.date_of(day).weekday()
    return observation_loglik(
        ens.observed_z(day), ens.observed_h(day), ens.chr(day),
        ens.omega_c.omega[weekday], ens.omega_h.omega[weekday],
        cases, admissions, ens.config.observation_model,
    )


def run_filter(ens: ParticleEnsemble, observations: Optional[Observations] = None) -> ParticleEnsemble:
    '''
    Advances the ensemble day by day up to the origin date: propagate, weight by the observation
    likelihood, and resample with replacement, rewriting only the most recent `lag` days.
    '''
    if observations is None:
        observations = ens.observations
    cfg = ens.config
    conditional = GPConditional(cfg.kernel, cfg.gp_window)
    arrays = [a for a in (ens.ln_r, ens.infections, ens.ln_p) if a is not None]

    for day in range(ens.day + 1, ens.n_days):
        with FILTER_STEP_DURATION.time():
            current = ens.date_of(day)
            _propagate(ens, day, conditional, day_rng(cfg.seed, ens.pathogen, current, RngPhase.PROPAGATE))
            ens.day = day

            loglik = _day_loglik(ens, day, observations)
            if loglik is None:
                ens.ess.append(float(ens.n_particles))
                continue
            top = np.max(loglik)
            if not np.isfinite(top):
                raise FilterDegeneracyError(day, current)
            weights = np.exp(loglik - top)
            total = weights.sum()
            ens.log_evidence += float(top + math.log(total / ens.n_particles))
            weights /= total
            ess = float(1.0 / np.sum(weights ** 2))
            ens.ess.append(ess)
            FILTER_ESS.set(ess)

            ancestors = systematic_resample(weights, day_rng(cfg.seed, ens.pathogen, current, RngPhase.RESAMPLE))
            lo = ens.frozen_before
            for a in arrays:
                a[:, lo:day + 1] = a[ancestors, lo:day + 1]

    logger.info(f'Filtered {ens.pathogen.value} to {ens.current_date}; mean ESS {np.mean(ens.ess) if ens.ess else float("nan"):.0f}, '
                f'log evidence {ens.log_evidence:.2f}')
    return ens


@dataclass(frozen=True, eq=False)
class RtSummary:
    date: date
    mean: float
    levels: Tuple[float, ...]
    quantiles: np.ndarray


@dataclass(frozen=True, eq=False)
class ForecastResult:
    '''Predictive samples (particles x horizon) and quantiles per target over the forecast horizon.'''
    pathogen: Pathogen
    origin_date: date
    dates: List[date]
    samples: Dict[Stream, np.ndarray]
    levels: Tuple[float, ...] = FORECAST_QUANTILES
    rt_origin: Optional[RtSummary] = None

    @property
    def horizon(self) -> int:
        return len(self.dates)

    @property
    def targets(self) -> List[SeriesKey]:
        return [SeriesKey(self.pathogen, stream) for stream in self.samples]

    def quantiles(self, stream: Stream) -> np.ndarray:
        '''Shape (n_levels, horizon); each column is non-decreasing in the level.'''
        samples = self.samples[stream]
        if samples.shape[1] == 0:
            return np.empty((len(self.levels), 0))
        return np.quantile(samples, self.levels, axis=0)

    def quantile_frame(self) -> pd.DataFrame:
        rows = []
        for stream in self.samples:
            target = str(SeriesKey(self.pathogen, stream))
            q = self.quantiles(stream)
            for h, day in enumerate(self.dates):
                for level, value in zip(self.levels, q[:, h]):
                    rows.append((target, day.isoformat(), h + 1, level, float(value)))
        return pd.DataFrame(rows, columns=['target', 'date', 'horizon', 'quantile', 'value'])

    def sample_frame(self, n_samples: int, seed: int) -> pd.DataFrame:
        '''Long-format export of n_samples particles per target, chosen once and shared by all days.'''
        frames = []
        for stream, samples in self.samples.items():
            n = samples.shape[0]
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, list(Pathogen).index(self.pathogen), self.origin_date.toordinal(), list(self.samples).index(stream)])))
            chosen = np.sort(rng.choice(n, size=n_samples, replace=n < n_samples)) if n_samples != n else np.arange(n)
            for h, day in enumerate(self.dates):
                frames.append(pd.DataFrame({
                    'target': str(SeriesKey(self.pathogen, stream)),
                    'origin_date': self.origin_date.isoformat(),
                    'date': day.isoformat(),
                    'horizon': h + 1,
                    'sample': np.arange(len(chosen)),
                    'value': samples[chosen, h],
                }))
        if not frames:
            return pd.DataFrame(columns=['target', 'origin_date', 'date', 'horizon', 'sample', 'value'])
        return pd.concat(frames, ignore_index=True)


def forecast(ens: ParticleEnsemble, horizon: Optional[int] = None) -> ForecastResult:
    '''
    Propagates every particle `horizon` days past the origin without resampling, applying the
    origin-date day-of-week effects at their calendar positions, and draws the observed streams.
    The fitted ensemble is left unchanged.
    '''
    cfg = ens.config
    horizon = cfg.horizon if horizon is None else horizon
    origin = ens.current_date
    rt = np.exp(ens.ln_r[:, ens.day])
    rt_origin = RtSummary(origin, float(rt.mean()), FORECAST_QUANTILES, np.quantile(rt, FORECAST_QUANTILES))
    dates = [origin + timedelta(days=h) for h in range(1, horizon + 1)]
    if horizon == 0:
        return ForecastResult(ens.pathogen, origin, [], {s: np.empty((ens.n_particles, 0), dtype=np.int64) for s in ens.streams}, rt_origin=rt_origin)

    pad = ((0, 0), (0, horizon))
    extended = replace(
        ens,
        ln_r=np.pad(ens.ln_r, pad, constant_values=np.nan),
        infections=np.pad(ens.infections, pad),
        ln_p=None if ens.ln_p is None else np.pad(ens.ln_p, pad, constant_values=np.nan),
        observations=Observations.empty(ens.n_days + horizon),
        ess=list(ens.ess),
    )
    conditional = GPConditional(cfg.kernel, cfg.gp_window)
    samples = {stream: np.zeros((ens.n_particles, horizon), dtype=np.int64) for stream in ens.streams}

    for h, day_date in enumerate(dates):
        day = ens.day + 1 + h
        _propagate(extended, day, conditional, day_rng(cfg.seed, ens.pathogen, day_date, RngPhase.PROPAGATE))
        weekday = day_date.weekday()
        c, a = sample_observations(
            day_rng(cfg.seed, ens.pathogen, day_date, RngPhase.OBSERVE),
            extended.observed_z(day), extended.observed_h(day), extended.chr(day),
            extended.omega_c.omega[weekday], extended.omega_h.omega[weekday],
            cfg.observation_model,
            cases=Stream.cases in ens.streams,
            admissions=Stream.admissions in ens.streams,
        )
        if c is not None:
            samples[Stream.cases][:, h] = c
        if a is not None:
            samples[Stream.admissions][:, h] = a
    return ForecastResult(ens.pathogen, origin, dates, samples, rt_origin=rt_origin)


@dataclass(frozen=True, eq=False)
class FittedSummary:
    '''Per-day quantiles of fitted latent and predicted observed quantities, with per-day ESS.'''
    dates: List[date]
    levels: Tuple[float, ...]
    quantiles: Dict[str, np.ndarray]
    ess: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        rows = []
        iso = [d.isoformat() for d in self.dates]
        for quantity, values in self.quantiles.items():
            for level, row in zip(self.levels, values):
                rows.extend(zip(iso, [quantity] * len(iso), [level] * len(iso), row))
        return pd.DataFrame(rows, columns=['date', 'quantity', 'quantile', 'value'])

    def ess_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'date': [d.isoformat() for d in self.dates], 'ess': self.ess})


def fitted_summary(ens: ParticleEnsemble) -> FittedSummary:
    '''Quantiles of R_t, P_t, Z_t, H_t and posterior-predictive C_t/A_t from the first ln R day to the current day.'''
    days = range(ens.first_ln_r_day, ens.day + 1)
    levels = FITTED_QUANTILES
    series: Dict[str, List[np.ndarray]] = {'R': []}
    if ens.two_stream:
        series['P'] = []
    if Stream.cases in ens.streams:
        series['Z'] = []
        series['cases_predicted'] = []
    series['H'] = []
    if Stream.admissions in ens.streams:
        series['admissions_predicted'] = []

    model = ens.config.observation_model
    for day in days:
        day_date = ens.date_of(day)
        weekday = day_date.weekday()
        z, h, p = ens.observed_z(day), ens.observed_h(day), ens.chr(day)
        c, a = sample_observations(
            day_rng(ens.config.seed, ens.pathogen, day_date, RngPhase.FITTED_OBSERVE), z, h, p,
            ens.omega_c.omega[weekday], ens.omega_h.omega[weekday], model,
            cases=Stream.cases in ens.streams, admissions=Stream.admissions in ens.streams,
        )
        values = {'R': np.exp(ens.ln_r[:, day]), 'P': p, 'Z': z, 'H': h, 'cases_predicted': c, 'admissions_predicted': a}
        for name in series:
            series[name].append(np.quantile(values[name], levels))

    # Days before the first filtered day carry no weighting
    n_unfiltered = ens.day + 1 - len(ens.ess) - ens.first_ln_r_day
    ess = np.concatenate([np.full(n_unfiltered, float(ens.n_particles)), ens.ess])
    return FittedSummary(
        dates=[ens.date_of(d) for d in days],
        levels=levels,
        quantiles={name: np.array(rows).T for name, rows in series.items()},
        ess=ess,
    )


def write_forecast_quantiles_csv(result: ForecastResult, path: Union[str, Path]) -> None:
    result.quantile_frame().to_csv(path, index=False, lineterminator='\n')


def read_forecast_quantiles_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={'target': str, 'date': str})
    missing = {'target', 'date', 'horizon', 'quantile', 'value'} - set(frame.columns)
    if missing:
        raise DataError(f'{path}: missing columns {sorted(missing)}')
    return frame


def write_forecast_samples_csv(result: ForecastResult, path: Union[str, Path], n_samples: int, seed: int) -> None:
    result.sample_frame(n_samples, seed).to_csv(path, index=False, lineterminator='\n')


def read_forecast_samples_csv(path: Union[str, Path]) -> ForecastResult:
    '''Rebuilds a ForecastResult (samples x horizon per target) from a sample export.'''
    frame = pd.read_csv(path, dtype={'target': str, 'origin_date': str, 'date': str})
    missing = {'target', 'origin_date', 'date', 'horizon', 'sample', 'value'} - set(frame.columns)
    if missing:
        raise DataError(f'{path}: missing columns {sorted(missing)}')
    if frame.empty:
        raise DataError(f'{path}: no forecast samples')
    origins = frame['origin_date'].unique()
    if len(origins) != 1:
        raise DataError(f'{path}: expected one origin date, found {len(origins)}')
    keys = [SeriesKey.parse(t) for t in frame['target'].unique()]
    pathogens = {k.pathogen for k in keys}
    if len(pathogens) != 1:
        raise DataError(f'{path}: expected one pathogen, found {sorted(p.value for p in pathogens)}')

    origin = date.fromisoformat(origins[0])
    horizon = int(frame['horizon'].max())
    dates = [origin + timedelta(days=h) for h in range(1, horizon + 1)]
    samples = {}
    for key in keys:
        wide = frame[frame['target'] == str(key)].pivot(index='sample', columns='horizon', values='value')
        wide = wide.reindex(columns=range(1, horizon + 1))
        if wide.isna().any().any():
            raise DataError(f'{path}: {key} samples are incomplete')
        samples[key.stream] = wide.to_numpy(dtype=np.int64)
    return ForecastResult(pathogens.pop(), origin, dates, samples)


def write_fitted_csv(summary: FittedSummary, path: Union[str, Path]) -> None:
    summary.to_frame().to_csv(path, index=False, lineterminator='\n')


def write_ess_csv(summary: FittedSummary, path: Union[str, Path]) -> None:
    summary.ess_frame().to_csv(path, index=False, lineterminator='\n')


def read_fitted_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, dtype={'date': str, 'quantity': str})
