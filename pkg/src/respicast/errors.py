from datetime import date
from typing import Optional


class RespicastError(Exception):
    pass


class DataError(RespicastError):
    '''Input data is malformed, incomplete or inconsistent with the request.'''
    pass


class IngestError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DelayError(RespicastError):
    pass


class BasisError(RespicastError):
    pass


class BasisRangeError(BasisError):
    pass


class TrendError(RespicastError):
    pass


class DegeneratePosteriorError(TrendError):
    pass


class TrendConvergenceError(TrendError):
    '''Raised instead of returning draws that fail the convergence contract.'''

    def __init__(self, message: str, diagnostics=None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics


class GPNumericalError(RespicastError):
    pass


class FilterDegeneracyError(RespicastError):

    def __init__(self, day: int, day_date: Optional[date] = None) -> None:
        where = f'day {day}' if day_date is None else f'day {day} ({day_date.isoformat()})'
        super().__init__(f'All particle weights are zero on {where}')
        self.day = day
        self.day_date = day_date


class ScoringError(RespicastError):
    pass


class ScenarioError(RespicastError):
    '''A synthetic scenario file that cannot be read or resolved.'''
    pass
