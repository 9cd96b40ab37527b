import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator
from scipy.optimize import brentq
from typing_extensions import Annotated

from .config import RespicastConfig
from .delays import DiscretePMF
from .distributions import sample_negbin
from .errors import ScenarioError
from .renewal import GPConditional, GPKernel, chr_step, convolve_observed, gp_step, renewal_step
from .series import DAYS_PER_WEEK, CountSeries, DayOfWeekEffects, Pathogen, Stream

logger = logging.getLogger(__name__)

RAMP_DAYS = 21


class RtSegment(BaseModel):
    days: Annotated[int, Field(ge=1)]
    r: Annotated[float, Field(gt=0)]


class PiecewiseRt(BaseModel):
    kind: Literal['piecewise'] = 'piecewise'
    segments: Annotated[List[RtSegment], Field(min_length=1)]

    def trajectory(self, length: int, rng: np.random.Generator, settings: RespicastConfig) -> np.ndarray:
        values = np.concatenate([np.full(s.days, s.r) for s in self.segments])
        if len(values) < length:
            values = np.append(values, np.full(length - len(values), values[-1]))
        return values[:length]


class SinusoidalRt(BaseModel):
    kind: Literal['sinusoidal'] = 'sinusoidal'
    mean: Annotated[float, Field(gt=0)] = 1.0
    amplitude: Annotated[float, Field(ge=0)] = 0.2
    period: Annotated[float, Field(gt=0)] = 60
    phase: float = 0.0

    def trajectory(self, length: int, rng: np.random.Generator, settings: RespicastConfig) -> np.ndarray:
        if self.amplitude >= self.mean:
            raise ScenarioError(f'Sinusoidal R amplitude {self.amplitude} must be below its mean {self.mean}')
        t = np.arange(length)
        return self.mean + self.amplitude * np.sin(2 * math.pi * t / self.period + self.phase)


class GaussianProcessRt(BaseModel):
    kind: Literal['gp'] = 'gp'
    base_r: Annotated[float, Field(gt=0)] = 1.0

    def trajectory(self, length: int, rng: np.random.Generator, settings: RespicastConfig) -> np.ndarray:
        kernel = GPKernel(settings.gp.s0, settings.gp.l, settings.gp.sn)
        conditional = GPConditional(kernel, settings.gp.window_days)
        ln_r = np.empty(length)
        for t in range(length):
            ln_r[t] = gp_step(ln_r[:t], kernel, settings.gp.window_days, rng, 'signal_plus_noise', conditional)
        return self.base_r * np.exp(ln_r)


class ScenarioConfig(BaseModel):
    '''Synthetic epidemic scenario as read from a scenario YAML file.'''
    pathogen: Pathogen = Pathogen.SARSCoV2
    start_date: date = date(2023, 1, 2)
    length: Annotated[int, Field(ge=1)] = 120
    rt: Annotated[Union[PiecewiseRt, SinusoidalRt, GaussianProcessRt], Field(discriminator='kind')]
    seed_infections: Annotated[float, Field(gt=0)] = 100
    dow_cases: Optional[Annotated[List[Annotated[float, Field(ge=0)]], Field(min_length=7, max_length=7)]] = None
    dow_admissions: Optional[Annotated[List[Annotated[float, Field(ge=0)]], Field(min_length=7, max_length=7)]] = None
    p_c: Annotated[float, Field(gt=0, le=1)] = 1.0
    k_c: Annotated[float, Field(gt=0)] = 25
    k_h: Annotated[float, Field(gt=0)] = 25
    chr: Annotated[float, Field(gt=0)] = 0.1
    chr_sigma: Annotated[float, Field(ge=0)] = 0.0
    seed: int = 1

    @field_validator('dow_cases', 'dow_admissions')
    @classmethod
    def positive_week(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and not sum(value) > 0:
            raise ValueError('Weekday multipliers must not all be zero')
        return value

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> 'ScenarioConfig':
        try:
            with open(path) as f:
                data = yaml.safe_load(f)
        except (OSError, yaml.YAMLError) as e:
            raise ScenarioError(f'Cannot read scenario {path}: {e}')
        if not isinstance(data, dict):
            raise ScenarioError(f'Scenario {path} is not a mapping')
        return cls.model_validate(data)

    def to_spec(self, settings: Optional[RespicastConfig] = None) -> 'ScenarioSpec':
        if settings is None:
            settings = RespicastConfig()
        delays = settings.pathogen_delays(self.pathogen)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, 0])))
        r = self.rt.trajectory(self.length, rng, settings)
        return ScenarioSpec(
            pathogen=self.pathogen,
            start_date=self.start_date,
            r=r,
            seed_infections=self.seed_infections,
            gen_pmf=delays.generation,
            admit_pmf=delays.admission,
            report_pmf=delays.report,
            dow_c=_weekday_effects(self.dow_cases),
            dow_h=_weekday_effects(self.dow_admissions),
            p_c=self.p_c,
            k_c=self.k_c,
            k_h=self.k_h,
            chr=self.chr,
            chr_sigma=self.chr_sigma,
            seed=self.seed,
        )


def _weekday_effects(values: Optional[List[float]]) -> DayOfWeekEffects:
    if values is None:
        return DayOfWeekEffects.uniform()
    omega = np.asarray(values, dtype=float)
    omega = DAYS_PER_WEEK * omega / omega.sum()
    # Absorb rounding so the multipliers sum to exactly 7
    omega[-1] = DAYS_PER_WEEK - omega[:-1].sum()
    return DayOfWeekEffects(tuple(omega), window_weeks=1)


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    '''Fully resolved scenario: the known R_t trajectory and the delay PMFs it runs with.'''
    pathogen: Pathogen
    start_date: date
    r: np.ndarray
    seed_infections: float
    gen_pmf: DiscretePMF
    admit_pmf: DiscretePMF
    report_pmf: Optional[DiscretePMF] = None
    dow_c: DayOfWeekEffects = DayOfWeekEffects.uniform()
    dow_h: DayOfWeekEffects = DayOfWeekEffects.uniform()
    p_c: float = 1.0
    k_c: float = 25.0
    k_h: float = 25.0
    chr: float = 0.1
    chr_sigma: float = 0.0
    seed: int = 1

    def __post_init__(self) -> None:
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 1 or len(r) == 0:
            raise ValueError('R trajectory must be a non-empty 1-d array')
        if not np.all(r > 0) or not np.all(np.isfinite(r)):
            raise ValueError('R values must be finite and positive')
        object.__setattr__(self, 'r', r)

    @property
    def length(self) -> int:
        return len(self.r)

    @property
    def streams(self) -> List[Stream]:
        if self.report_pmf is None:
            return [Stream.admissions]
        return [Stream.cases, Stream.admissions]


@dataclass(frozen=True, eq=False)
class SimulationResult:
    start_date: date
    r: np.ndarray
    infections: np.ndarray
    z: np.ndarray
    h: np.ndarray
    p: np.ndarray
    cases: Optional[CountSeries]
    admissions: Optional[CountSeries]
    extinct: bool
    replicate: int = 0

    def dates(self) -> List[date]:
        return [self.start_date + timedelta(days=i) for i in range(len(self.r))]

    def observed(self) -> List[CountSeries]:
        return [s for s in (self.cases, self.admissions) if s is not None]

    def truth_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'date': [d.isoformat() for d in self.dates()],
            'R': self.r,
            'I': self.infections,
            'Z': self.z,
            'H': self.h,
            'P': self.p,
        })


def simulate(spec: ScenarioSpec, rng: Optional[np.random.Generator] = None, replicate: int = 0) -> SimulationResult:
    '''
    Runs the renewal process forward from a constant ramp of seed infections, then draws the
    observed streams from the negative binomial observation model.
    '''
    if rng is None:
        rng = replicate_rng(spec.seed, replicate)
    n = spec.length
    ramp = np.full(RAMP_DAYS, int(round(spec.seed_infections)), dtype=np.int64)
    history = np.concatenate([ramp, np.zeros(n, dtype=np.int64)])
    z = np.zeros(n)
    h = np.zeros(n)
    ln_p = np.empty(n)
    ln_p[0] = math.log(spec.chr)

    for t in range(n):
        col = RAMP_DAYS + t
        history[col] = renewal_step(history[:col], spec.r[t], spec.gen_pmf, rng)
        if spec.report_pmf is not None:
            z[t] = convolve_observed(history[:col + 1], spec.report_pmf)
        h[t] = convolve_observed(history[:col + 1], spec.admit_pmf)
        if t > 0:
            ln_p[t] = chr_step(ln_p[t - 1], spec.chr_sigma, rng)

    two_stream = spec.report_pmf is not None
    p = np.exp(ln_p) if two_stream else np.ones(n)
    dates = [spec.start_date + timedelta(days=i) for i in range(n)]
    cases = None
    if two_stream:
        omega_c = spec.dow_c.for_dates(dates)
        cases = CountSeries(spec.pathogen, Stream.cases, spec.start_date, sample_negbin(rng, spec.p_c * omega_c * z, spec.k_c))
    omega_h = spec.dow_h.for_dates(dates)
    admissions = CountSeries(spec.pathogen, Stream.admissions, spec.start_date, sample_negbin(rng, spec.p_c * omega_h * p * h, spec.k_h))

    infections = history[RAMP_DAYS:]
    tail = min(spec.gen_pmf.max_lag, n)
    extinct = bool(np.all(infections[-tail:] == 0))
    if extinct:
        logger.warning(f'Replicate {replicate}: epidemic went extinct before {dates[-1]}')
    return SimulationResult(spec.start_date, spec.r.copy(), infections, z, h, p, cases, admissions, extinct, replicate)


def replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replicate + 1])))


def simulate_replicates(spec: ScenarioSpec, n: int, seed: Optional[int] = None) -> List[SimulationResult]:
    if n < 1:
        raise ValueError(f'Need at least one replicate, got {n}')
    seed = spec.seed if seed is None else seed
    return [simulate(spec, replicate_rng(seed, i), replicate=i) for i in range(n)]


def euler_lotka_growth_rate(r: float, gen_pmf: DiscretePMF) -> float:
    '''Growth rate g solving 1 = R * sum_s g_s exp(-g s) for a discrete generation interval.'''
    if not r > 0:
        raise ValueError(f'R must be positive, got {r}')
    lags = gen_pmf.lags.astype(float)
    probs = gen_pmf.probs

    def balance(g: float) -> float:
        return r * np.dot(probs, np.exp(-g * lags)) - 1.0

    if r == 1.0:
        return 0.0
    lo, hi = (0.0, 0.1) if r > 1 else (-0.1, 0.0)
    while balance(hi) > 0:
        hi *= 2
    while balance(lo) < 0:
        lo *= 2
    return float(brentq(balance, lo, hi, xtol=1e-12))


def write_truth_csv(result: SimulationResult, path: Union[str, Path]) -> None:
    result.truth_frame().to_csv(path, index=False, lineterminator='\n')


def load_scenario(path: Union[str, Path], settings: Optional[RespicastConfig] = None) -> ScenarioSpec:
    '''Reads and resolves a scenario file; validation failures surface as ScenarioError.'''
    try:
        scenario = ScenarioConfig.from_yaml(path)
    except ValidationError as e:
        raise ScenarioError(f'Invalid scenario {path}: {e}')
    return scenario.to_spec(settings)
