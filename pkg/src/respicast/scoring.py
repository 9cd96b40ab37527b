import logging
from datetime import date
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataError, ScoringError
from .series import CountSeries, Pathogen, SeriesKey, Stream
from .smc import ForecastResult

logger = logging.getLogger(__name__)

TRANSFORMS = ('log1p', 'log')


class ScoreRecord(NamedTuple):
    target: SeriesKey
    origin_date: date
    horizon: int
    crps: float
    n_samples: int


class HorizonScore(NamedTuple):
    mean_crps: float
    n_origins: int


def _checked_samples(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=float).ravel()
    if len(samples) < 2:
        raise ScoringError(f'CRPS needs at least 2 samples, got {len(samples)}')
    if not np.all(np.isfinite(samples)):
        raise ScoringError('CRPS samples must be finite')
    return samples


def crps_samples(samples, obs: float) -> float:
    '''
    Energy form mean|X - obs| - 0.5 * mean|X - X'| over all ordered sample pairs. The pair term
    uses the sorted-sample identity sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - n - 1) x_(i).
    '''
    x = np.sort(_checked_samples(samples))
    n = len(x)
    spread = 2.0 * np.dot(2 * np.arange(1, n + 1) - n - 1, x) / n ** 2
    crps = float(np.mean(np.abs(x - obs)) - 0.5 * spread)
    return max(crps, 0.0)


def crps_integral(samples, obs: float) -> float:
    '''Integral of (F(y) - 1{y >= obs})^2 for the empirical CDF F, evaluated exactly between breakpoints.'''
    x = np.sort(_checked_samples(samples))
    n = len(x)
    points = np.sort(np.append(x, obs))
    widths = np.diff(points)
    left = points[:-1]
    cdf = np.searchsorted(x, left, side='right') / n
    indicator = (left >= obs).astype(float)
    return float(np.sum(widths * (cdf - indicator) ** 2))


def transform_counts(values, transform: str = 'log1p', epsilon: float = 1.0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if transform == 'log1p':
        return np.log1p(values)
    if transform == 'log':
        return np.log(values + epsilon)
    raise ScoringError(f'Unknown transform {transform!r}, expected one of {TRANSFORMS}')


def _subsample(samples: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    return samples[rng.choice(len(samples), size=n_samples, replace=len(samples) < n_samples)]


def score_forecast(
    result: ForecastResult,
    truth: Union[CountSeries, Mapping[Stream, CountSeries]],
    transform: str = 'log1p',
    epsilon: float = 1.0,
    n_samples: int = 2000,
    seed: int = 1,
    strict: bool = False,
) -> List[ScoreRecord]:
    '''
    One CRPS record per (target, horizon) on transformed counts. Each day scores n_samples
    forecast samples drawn with a generator keyed by (seed, origin date, stream, horizon).
    Dates without truth are skipped with a warning, or raise with strict=True.
    '''
    if isinstance(truth, CountSeries):
        truth = {truth.stream: truth}
    records = []
    missing: List[str] = []
    for stream, samples in result.samples.items():
        key = SeriesKey(result.pathogen, stream)
        observed = truth.get(stream)
        if observed is None:
            logger.warning(f'No truth for {key}, not scoring it')
            continue
        if observed.pathogen != result.pathogen:
            raise DataError(f'Truth is for {observed.pathogen.value}, forecast is for {result.pathogen.value}')

        key_prefix = [seed, list(Pathogen).index(result.pathogen), result.origin_date.toordinal(), list(Stream).index(stream)]
        for h, day in enumerate(result.dates, start=1):
            idx = observed.index_of(day)
            if not 0 <= idx < len(observed):
                missing.append(f'{key} {day.isoformat()}')
                continue
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(key_prefix + [h])))
            chosen = _subsample(samples[:, h - 1], n_samples, rng)
            crps = crps_samples(transform_counts(chosen, transform, epsilon), float(transform_counts(observed.counts[idx], transform, epsilon)))
            records.append(ScoreRecord(key, result.origin_date, h, crps, n_samples))

    if missing:
        if strict:
            raise ScoringError(f'Truth is missing for {len(missing)} forecast dates: {", ".join(missing)}')
        logger.warning(f'Skipped {len(missing)} forecast dates without truth: {", ".join(missing)}')
    return records


def mean_crps_by_horizon(records: Sequence[ScoreRecord]) -> Dict[Tuple[SeriesKey, int], HorizonScore]:
    '''Mean CRPS over origin dates for each (target, horizon).'''
    if len(records) == 0:
        raise ScoringError('No score records to aggregate')
    frame = pd.DataFrame([(str(r.target), r.horizon, r.crps) for r in records], columns=['target', 'horizon', 'crps'])
    grouped = frame.groupby(['target', 'horizon'], sort=True)['crps'].agg(['mean', 'count'])
    return {
        (SeriesKey.parse(target), int(horizon)): HorizonScore(float(row['mean']), int(row['count']))
        for (target, horizon), row in grouped.iterrows()
    }


def write_score_csv(records: Sequence[ScoreRecord], path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(str(r.target), r.origin_date.isoformat(), r.horizon, r.crps) for r in records],
        columns=['target', 'origin_date', 'horizon', 'crps'],
    )
    frame.to_csv(path, index=False, lineterminator='\n')


def read_score_csv(path: Union[str, Path], n_samples: int = 0) -> List[ScoreRecord]:
    frame = pd.read_csv(path, dtype={'target': str, 'origin_date': str})
    return [
        ScoreRecord(SeriesKey.parse(row.target), date.fromisoformat(row.origin_date), int(row.horizon), float(row.crps), n_samples)
        for row in frame.itertuples(index=False)
    ]


def write_horizon_summary_csv(summary: Mapping[Tuple[SeriesKey, int], HorizonScore], path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(str(target), horizon, score.mean_crps, score.n_origins) for (target, horizon), score in sorted(summary.items(), key=lambda kv: (str(kv[0][0]), kv[0][1]))],
        columns=['target', 'horizon', 'mean_crps', 'n_origins'],
    )
    frame.to_csv(path, index=False, lineterminator='\n')
