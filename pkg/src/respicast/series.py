import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Literal, Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from prometheus_client import Counter

from .errors import DataError, IngestError, InsufficientDataError

logger = logging.getLogger(__name__)

ROWS_INGESTED = Counter('respicast_rows_ingested', 'How many unit records have been tallied into daily counts')
ROWS_DROPPED = Counter('respicast_rows_dropped', 'How many unit records fell outside the requested date range')

DAYS_PER_WEEK = 7
MAX_DOW_WEEKS = 16


class Pathogen(str, Enum):
    SARSCoV2 = 'SARSCoV2'
    Influenza = 'Influenza'
    RSV = 'RSV'


class Stream(str, Enum):
    cases = 'cases'
    admissions = 'admissions'


class SeriesKey(NamedTuple):
    pathogen: Pathogen
    stream: Stream

    def __str__(self) -> str:
        return f'{self.pathogen.value}/{self.stream.value}'

    @classmethod
    def parse(cls, text: str) -> 'SeriesKey':
        pathogen, _, stream = text.partition('/')
        return cls(Pathogen(pathogen), Stream(stream))


class DateRange(NamedTuple):
    '''Inclusive calendar date interval.'''
    start: date
    end: date

    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def contains(self, day: date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True, eq=False)
class CountSeries:
    '''Daily non-negative counts of one pathogen/stream, one value per consecutive calendar day.'''
    pathogen: Pathogen
    stream: Stream
    start_date: date
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or len(counts) == 0:
            raise IngestError(f'{self.key}: counts must be a non-empty 1-d sequence')
        if counts.dtype.kind == 'f':
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise IngestError(f'{self.key}: counts must be integers')
        elif counts.dtype.kind not in 'iub':
            raise IngestError(f'{self.key}: counts must be integers, got dtype {counts.dtype}')
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise IngestError(f'{self.key}: counts must be non-negative')
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @property
    def key(self) -> SeriesKey:
        return SeriesKey(self.pathogen, self.stream)

    @property
    def origin_date(self) -> date:
        return self.start_date + timedelta(days=len(self.counts) - 1)

    @property
    def date_range(self) -> DateRange:
        return DateRange(self.start_date, self.origin_date)

    def dates(self) -> List[date]:
        return [self.start_date + timedelta(days=i) for i in range(len(self.counts))]

    def weekdays(self) -> np.ndarray:
        return weekday_index(self.start_date, len(self.counts))

    def index_of(self, day: date) -> int:
        return (day - self.start_date).days

    def between(self, start: date, end: date) -> 'CountSeries':
        '''Sub-series clipped to [start, end] (both inclusive, clipped to the available data).'''
        lo = max(0, self.index_of(start))
        hi = min(len(self.counts), self.index_of(end) + 1)
        if hi <= lo:
            raise DataError(f'{self.key}: no data between {start} and {end}')
        return CountSeries(self.pathogen, self.stream, self.start_date + timedelta(days=lo), self.counts[lo:hi])

    def __len__(self) -> int:
        return len(self.counts)

    def __repr__(self) -> str:
        return f'CountSeries({self.key}, {self.start_date}..{self.origin_date}, total={int(self.counts.sum())})'


@dataclass(frozen=True)
class DayOfWeekEffects:
    '''Multiplicative weekday reporting pattern, indexed by calendar weekday (Monday = 0).'''
    omega: tuple
    window_weeks: int
    degenerate: bool = False

    def __post_init__(self) -> None:
        omega = tuple(float(w) for w in self.omega)
        if len(omega) != DAYS_PER_WEEK:
            raise ValueError(f'Expected 7 weekday multipliers, got {len(omega)}')
        if any(w < 0 for w in omega):
            raise ValueError('Weekday multipliers must be non-negative')
        if not 1 <= self.window_weeks <= MAX_DOW_WEEKS:
            raise ValueError(f'window_weeks must be in [1, {MAX_DOW_WEEKS}], got {self.window_weeks}')
        if abs(sum(omega) - DAYS_PER_WEEK) > 1e-12 and not (self.degenerate and all(w == 1.0 for w in omega)):
            raise ValueError(f'Weekday multipliers must sum to 7, got {sum(omega)}')
        object.__setattr__(self, 'omega', omega)

    @classmethod
    def uniform(cls, window_weeks: int = 1, degenerate: bool = False) -> 'DayOfWeekEffects':
        return cls((1.0,) * DAYS_PER_WEEK, window_weeks, degenerate)

    def for_weekdays(self, weekdays: np.ndarray) -> np.ndarray:
        return np.asarray(self.omega)[np.asarray(weekdays)]

    def for_dates(self, dates: Iterable[date]) -> np.ndarray:
        return self.for_weekdays(np.array([d.weekday() for d in dates], dtype=int))


@dataclass(frozen=True)
class DataRound:
    round_index: int
    origin_date: date
    series: Mapping[SeriesKey, CountSeries] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.round_index < 1:
            raise ValueError('round_index must be positive')
        for key, s in self.series.items():
            if s.key != key:
                raise IngestError(f'Series {s!r} filed under key {key}')
            if s.origin_date > self.origin_date:
                raise IngestError(f'Series {key} ends {s.origin_date}, after the round origin {self.origin_date}')
        object.__setattr__(self, 'series', MappingProxyType(dict(self.series)))

    @classmethod
    def from_series(cls, round_index: int, series: Sequence[CountSeries], origin_date: Optional[date] = None) -> 'DataRound':
        by_key: Dict[SeriesKey, CountSeries] = {}
        for s in series:
            if s.key in by_key:
                raise IngestError(f'Series {s.key} appears twice in round {round_index}')
            by_key[s.key] = s
        if origin_date is None:
            if len(by_key) == 0:
                raise IngestError(f'Round {round_index} has no series and no origin date')
            origin_date = max(s.origin_date for s in by_key.values())
        return cls(round_index, origin_date, by_key)


class Revision(NamedTuple):
    date: date
    key: SeriesKey
    old_count: int
    new_count: int


def weekday_index(start: date, n_days: int) -> np.ndarray:
    return (start.weekday() + np.arange(n_days)) % DAYS_PER_WEEK


def _parse_event_dates(values: Sequence[Union[str, date]]) -> List[date]:
    parsed = []
    for idx, value in enumerate(values):
        if isinstance(value, date):
            parsed.append(value)
            continue
        try:
            parsed.append(date.fromisoformat(str(value).strip()))
        except ValueError:
            raise IngestError(f'Row {idx}: cannot parse event_date {value!r} as an ISO date')
    return parsed


def ingest_unit_records(
    rows: Sequence[Union[str, date]],
    date_range: DateRange,
    pathogen: Pathogen,
    stream: Stream,
    out_of_range: Literal['drop', 'error'] = 'drop',
) -> CountSeries:
    '''
    Tallies one row per event into daily counts over date_range. Days without events count 0.
    Events outside the range are dropped with a warning, or rejected if out_of_range='error'.
    '''
    if date_range.end < date_range.start:
        raise IngestError(f'Empty date range {date_range.start}..{date_range.end}')

    event_dates = _parse_event_dates(rows)
    n_days = date_range.n_days()
    offsets = np.array([(d - date_range.start).days for d in event_dates], dtype=np.int64)
    in_range = (offsets >= 0) & (offsets < n_days)

    n_dropped = int(np.count_nonzero(~in_range))
    if n_dropped > 0:
        if out_of_range == 'error':
            first_bad = int(np.flatnonzero(~in_range)[0])
            raise IngestError(f'Row {first_bad}: event_date {event_dates[first_bad]} outside {date_range.start}..{date_range.end}')
        logger.warning(f'Dropped {n_dropped} {pathogen.value}/{stream.value} records outside {date_range.start}..{date_range.end}')
        ROWS_DROPPED.inc(n_dropped)

    counts = np.bincount(offsets[in_range], minlength=n_days)
    ROWS_INGESTED.inc(int(in_range.sum()))
    return CountSeries(pathogen, stream, date_range.start, counts)


def window_series(s: CountSeries, days: int) -> CountSeries:
    '''The trailing min(days, len(s)) days of s, ending at its origin date.'''
    if days < 1:
        raise ValueError(f'days must be >= 1, got {days}')
    n = min(days, len(s))
    return CountSeries(s.pathogen, s.stream, s.origin_date - timedelta(days=n - 1), s.counts[-n:])


def estimate_dow_effects(s: CountSeries, max_weeks: int = MAX_DOW_WEEKS) -> DayOfWeekEffects:
    '''
    Weekday multipliers from the largest whole number of weeks (at most max_weeks) ending at the
    origin date: omega_w = 7 * (counts on weekday w) / (all counts in the window).
    '''
    if not 1 <= max_weeks <= MAX_DOW_WEEKS:
        raise ValueError(f'max_weeks must be in [1, {MAX_DOW_WEEKS}], got {max_weeks}')
    if len(s) < DAYS_PER_WEEK:
        raise InsufficientDataError(f'{s.key}: need at least 7 days to estimate day-of-week effects, got {len(s)}')

    n_weeks = min(len(s) // DAYS_PER_WEEK, max_weeks)
    window = window_series(s, n_weeks * DAYS_PER_WEEK)
    total = int(window.counts.sum())
    if total == 0:
        logger.warning(f'{s.key}: no counts in the {n_weeks}-week window ending {s.origin_date}, using uniform day-of-week effects')
        return DayOfWeekEffects.uniform(n_weeks, degenerate=True)

    class_sums = np.bincount(window.weekdays(), weights=window.counts, minlength=DAYS_PER_WEEK)
    omega = DAYS_PER_WEEK * class_sums / total
    return DayOfWeekEffects(tuple(omega), n_weeks)


def diff_rounds(earlier: DataRound, later: DataRound) -> List[Revision]:
    '''Every (key, date) present in both rounds whose count changed, ordered by key then date.'''
    shared = sorted(set(earlier.series) & set(later.series), key=str)
    if len(shared) == 0:
        logger.warning(f'Rounds {earlier.round_index} and {later.round_index} share no series')
        return []

    revisions = []
    for key in shared:
        old, new = earlier.series[key], later.series[key]
        start = max(old.start_date, new.start_date)
        end = min(old.origin_date, new.origin_date)
        if end < start:
            continue
        n = (end - start).days + 1
        old_counts = old.counts[old.index_of(start):old.index_of(start) + n]
        new_counts = new.counts[new.index_of(start):new.index_of(start) + n]
        for offset in np.flatnonzero(old_counts != new_counts):
            revisions.append(Revision(start + timedelta(days=int(offset)), key, int(old_counts[offset]), int(new_counts[offset])))
    return revisions


def moving_average(counts: np.ndarray, width: int = 7) -> np.ndarray:
    '''Centred moving average; near the edges the mean is taken over the available values only.'''
    return pd.Series(np.asarray(counts, dtype=float)).rolling(width, center=True, min_periods=1).mean().to_numpy()


def read_series_csv(
    path: Union[str, Path],
    pathogen: Pathogen,
    stream: Stream,
    date_range: Optional[DateRange] = None,
    out_of_range: Literal['drop', 'error'] = 'drop',
) -> CountSeries:
    '''
    Reads either unit records (header `event_date`) or daily counts (header `date,count`).
    Without date_range the series spans the first to the last date in the file.
    '''
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise IngestError(f'Cannot read {path}: {e}')
    columns = [c.strip() for c in frame.columns]

    if 'event_date' in columns:
        event_dates = _parse_event_dates(frame[frame.columns[columns.index('event_date')]].tolist())
        if date_range is None:
            if len(event_dates) == 0:
                raise IngestError(f'{path}: no records and no date range given')
            date_range = DateRange(min(event_dates), max(event_dates))
        return ingest_unit_records(event_dates, date_range, pathogen, stream, out_of_range)

    if columns[:2] == ['date', 'count']:
        days = _parse_event_dates(frame[frame.columns[0]].tolist())
        try:
            counts = [int(c) for c in frame[frame.columns[1]]]
        except ValueError as e:
            raise IngestError(f'{path}: non-integer count ({e})')
        return _series_from_daily(days, counts, pathogen, stream, date_range, out_of_range, source=str(path))

    raise IngestError(f'{path}: unrecognised header {columns}, expected `event_date` or `date,count`')


def _series_from_daily(days, counts, pathogen, stream, date_range, out_of_range, source) -> CountSeries:
    if len(days) == 0:
        raise IngestError(f'{source}: no rows')
    if len(set(days)) != len(days):
        raise IngestError(f'{source}: duplicate dates')
    if any(c < 0 for c in counts):
        raise IngestError(f'{source}: negative counts')
    if date_range is None:
        date_range = DateRange(min(days), max(days))

    n_days = date_range.n_days()
    tally = np.zeros(n_days, dtype=np.int64)
    n_dropped = 0
    for idx, (day, count) in enumerate(zip(days, counts)):
        offset = (day - date_range.start).days
        if 0 <= offset < n_days:
            tally[offset] = count
        elif out_of_range == 'error':
            raise IngestError(f'Row {idx}: date {day} outside {date_range.start}..{date_range.end}')
        else:
            n_dropped += 1
    if n_dropped > 0:
        logger.warning(f'{source}: dropped {n_dropped} days outside {date_range.start}..{date_range.end}')
    return CountSeries(pathogen, stream, date_range.start, tally)


def write_series_csv(s: CountSeries, path: Union[str, Path]) -> None:
    frame = pd.DataFrame({'date': [d.isoformat() for d in s.dates()], 'count': s.counts})
    frame.to_csv(path, index=False, lineterminator='\n')


_ROUND_FILE = re.compile(r'^(?P<pathogen>[A-Za-z0-9]+)_(?P<stream>cases|admissions)$')


def read_round(directory: Union[str, Path], round_index: int = 1) -> DataRound:
    '''Loads every `<pathogen>_<stream>.csv` file of a round directory.'''
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestError(f'Round directory {directory} does not exist')
    series = []
    for path in sorted(directory.glob('*.csv')):
        match = _ROUND_FILE.match(path.stem)
        if match is None or match['pathogen'] not in Pathogen.__members__:
            logger.warning(f'Skipping {path}: name is not <pathogen>_<stream>.csv')
            continue
        series.append(read_series_csv(path, Pathogen(match['pathogen']), Stream(match['stream'])))
    return DataRound.from_series(round_index, series)


def write_revisions_csv(revisions: Sequence[Revision], path: Union[str, Path]) -> None:
    frame = pd.DataFrame(
        [(str(r.key), r.date.isoformat(), r.old_count, r.new_count) for r in revisions],
        columns=['key', 'date', 'old', 'new'],
    )
    frame.to_csv(path, index=False, lineterminator='\n')


def read_revisions_csv(path: Union[str, Path]) -> List[Revision]:
    frame = pd.read_csv(path, dtype={'key': str, 'date': str})
    return [
        Revision(date.fromisoformat(row.date), SeriesKey.parse(row.key), int(row.old), int(row.new))
        for row in frame.itertuples(index=False)
    ]
