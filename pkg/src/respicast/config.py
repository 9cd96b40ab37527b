import hashlib
import os
from contextvars import ContextVar
from enum import Enum
from functools import reduce
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, YamlConfigSettingsSource
from typing_extensions import Annotated

from .delays import DelaySpec, PathogenDelays, convolve_delays, discretize_gamma
from .series import Pathogen

CONFIG_ENV_VAR = 'RESPICAST_CONFIG'
DEFAULT_CONFIG_FILE = 'settings.yaml'

_config_file: ContextVar[Optional[Path]] = ContextVar('respicast_config_file', default=None)


class LogLevel(str, Enum):
    DEBUG = 'DEBUG'
    INFO = 'INFO'
    WARNING = 'WARNING'
    ERROR = 'ERROR'


class DelayComponent(BaseModel):
    mean: Annotated[float, Field(ge=0)]
    sd: Annotated[float, Field(ge=0)]


class DelayConfig(BaseModel):
    '''A gamma delay, either given directly or as the sum of independent components.'''
    mean: Optional[Annotated[float, Field(gt=0)]] = None
    sd: Optional[Annotated[float, Field(gt=0)]] = None
    components: Optional[Annotated[List[DelayComponent], Field(min_length=1)]] = None

    @model_validator(mode='after')
    def compose_components(self) -> 'DelayConfig':
        if self.components is not None:
            if self.mean is not None or self.sd is not None:
                raise ValueError('Give either mean/sd or components, not both')
            moments = reduce(convolve_delays, [(c.mean, c.sd) for c in self.components])
            if not (moments.mean > 0 and moments.sd > 0):
                raise ValueError(f'Composed delay must have positive mean and sd, got {moments}')
            self.mean, self.sd = moments.mean, moments.sd
        if self.mean is None or self.sd is None:
            raise ValueError('Delay needs mean and sd')
        return self

    def to_spec(self, max_lag: int, min_lag: int) -> DelaySpec:
        return DelaySpec(self.mean, self.sd, max_lag, min_lag)


class PathogenConfig(BaseModel):
    generation_interval: DelayConfig
    infection_to_admission: DelayConfig
    infection_to_report: Optional[DelayConfig] = None


class PathogensConfig(BaseModel):
    SARSCoV2: PathogenConfig = PathogenConfig(
        generation_interval=DelayConfig(mean=3.3, sd=3.5),
        infection_to_report=DelayConfig(mean=6.3, sd=3.1),
        infection_to_admission=DelayConfig(mean=6.3, sd=3.7),
    )
    Influenza: PathogenConfig = PathogenConfig(
        generation_interval=DelayConfig(mean=2.6, sd=1.3),
        infection_to_admission=DelayConfig(mean=3.6, sd=2.1),
    )
    RSV: PathogenConfig = PathogenConfig(
        generation_interval=DelayConfig(mean=7.5, sd=2.1),
        infection_to_admission=DelayConfig(mean=6.9, sd=2.7),
    )

    def get(self, pathogen: Pathogen) -> PathogenConfig:
        return getattr(self, pathogen.value)


class DelayLimitsConfig(BaseModel):
    max_generation_interval: Annotated[int, Field(ge=1)] = 15
    max_report_delay: Annotated[int, Field(ge=1)] = 25
    max_admission_delay: Annotated[int, Field(ge=1)] = 25
    min_generation_interval: Annotated[int, Field(ge=1, le=1)] = 1
    min_observation_delay: Annotated[int, Field(ge=0, le=1)] = 0


class GPConfig(BaseModel):
    s0: Annotated[float, Field(gt=0)] = 0.1
    l: Annotated[float, Field(gt=0)] = 30
    sn: Annotated[float, Field(gt=0)] = 0.001
    window_days: Annotated[int, Field(ge=1)] = 120
    initial_variance: Literal['noise', 'signal_plus_noise'] = 'noise'


class SamplerConfig(BaseModel):
    chains: Annotated[int, Field(ge=4)] = 4
    warmup: Annotated[int, Field(ge=100)] = 1000
    draws: Annotated[int, Field(ge=100)] = 500
    target_accept: Annotated[float, Field(gt=0, lt=1)] = 0.9
    cores: Annotated[int, Field(ge=1)] = 1
    seed: int = 1
    max_rhat: Annotated[float, Field(gt=1)] = 1.05
    min_ess: Annotated[float, Field(gt=0)] = 200

    @model_validator(mode='after')
    def enough_draws(self) -> 'SamplerConfig':
        if self.chains * self.draws < 1000:
            raise ValueError(f'chains * draws must be at least 1000, got {self.chains * self.draws}')
        return self


class TrendConfig(BaseModel):
    knot_spacing: Annotated[int, Field(ge=1)] = 5
    extension: Annotated[int, Field(ge=3)] = 3
    window_days: Annotated[int, Field(ge=1)] = 1095
    tau_upper: Annotated[float, Field(gt=0)] = 1e3
    k_upper: Annotated[float, Field(gt=0)] = 1e4
    sampler: SamplerConfig = SamplerConfig()


class FilterConfig(BaseModel):
    particles: Annotated[int, Field(ge=1000)] = 100_000
    lag: Annotated[int, Field(ge=1)] = 42
    horizon: Annotated[int, Field(ge=1)] = 28
    p_c: Annotated[float, Field(gt=0, le=1)] = 1.0
    k_c: Annotated[float, Field(gt=0)] = 25
    k_h: Annotated[float, Field(gt=0)] = 25
    sigma_p: Annotated[float, Field(ge=0)] = 0.01
    p_cv: Annotated[float, Field(gt=0)] = 0.025
    history_days: Annotated[int, Field(ge=1)] = 250
    chr_days: Annotated[int, Field(ge=1)] = 21
    chr_fallback: Annotated[float, Field(gt=0)] = 0.1
    log_r_clamp: Annotated[float, Field(gt=0)] = 5.0
    day_of_week: bool = True
    export_samples: Annotated[int, Field(ge=1)] = 2000
    seed: int = 1


class ScoringConfig(BaseModel):
    transform: Literal['log1p', 'log'] = 'log1p'
    epsilon: Annotated[float, Field(gt=0)] = 1.0
    n_samples: Annotated[int, Field(ge=2)] = 2000
    seed: int = 1


class RespicastConfig(BaseSettings):
    log_level: LogLevel = LogLevel.INFO
    pathogens: PathogensConfig = PathogensConfig()
    delays: DelayLimitsConfig = DelayLimitsConfig()
    gp: GPConfig = GPConfig()
    trend: TrendConfig = TrendConfig()
    filter: FilterConfig = FilterConfig()
    scoring: ScoringConfig = ScoringConfig()
    metrics_file: Optional[Path] = None

    model_config = SettingsConfigDict(env_prefix='RESPICAST_', env_nested_delimiter='__')

    @classmethod
    def settings_customise_sources(cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings):
        return (init_settings, env_settings, YamlConfigSettingsSource(settings_cls, yaml_file=config_path()), file_secret_settings)

    def pathogen_delays(self, pathogen: Pathogen) -> PathogenDelays:
        '''Discretised generation-interval and observation-delay PMFs for a pathogen.'''
        pathogen_config = self.pathogens.get(pathogen)
        limits = self.delays
        report = None
        if pathogen_config.infection_to_report is not None:
            report = discretize_gamma(pathogen_config.infection_to_report.to_spec(limits.max_report_delay, limits.min_observation_delay))
        return PathogenDelays(
            generation=discretize_gamma(pathogen_config.generation_interval.to_spec(limits.max_generation_interval, limits.min_generation_interval)),
            admission=discretize_gamma(pathogen_config.infection_to_admission.to_spec(limits.max_admission_delay, limits.min_observation_delay)),
            report=report,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()


def config_path() -> Path:
    explicit = _config_file.get()
    if explicit is not None:
        return explicit
    return Path(os.environ.get(CONFIG_ENV_VAR, DEFAULT_CONFIG_FILE))


def load_config(path: Optional[Path] = None, **overrides) -> RespicastConfig:
    '''Config from `path` if given, else from $RESPICAST_CONFIG or ./settings.yaml; a missing default file means compiled-in defaults.'''
    if path is not None and not Path(path).is_file():
        raise FileNotFoundError(f'Config file {path} not found')
    token = _config_file.set(Path(path)) if path is not None else None
    try:
        return RespicastConfig(**overrides)
    finally:
        if token is not None:
            _config_file.reset(token)


def default_delays(pathogen: Pathogen, config: Optional[RespicastConfig] = None) -> PathogenDelays:
    '''Discretised delays for a pathogen under `config`, or under the compiled-in defaults.'''
    if config is None:
        config = RespicastConfig.model_construct()
    return config.pathogen_delays(pathogen)
