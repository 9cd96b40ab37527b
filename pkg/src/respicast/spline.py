import math
from dataclasses import dataclass
from datetime import date, timedelta
from typing import List, Optional

import numpy as np
from scipy.interpolate import BSpline

from .errors import BasisError, BasisRangeError
from .series import DateRange


@dataclass(frozen=True, eq=False)
class SplineBasis:
    '''
    B-spline basis on uniformly spaced knots over a daily date range. Time t is measured in days
    from start_date; the first interior knot sits on day 0 and the interior knots cover the whole
    range, with `extension` further knots appended beyond each end.
    '''
    start_date: date
    n_days: int
    knot_spacing: int = 5
    degree: int = 3
    extension: int = 3

    def __post_init__(self) -> None:
        if self.knot_spacing < 1:
            raise BasisError(f'knot_spacing must be positive, got {self.knot_spacing}')
        if self.n_days < 2 * self.knot_spacing:
            raise BasisError(f'Range of {self.n_days} days is shorter than two knot spacings ({2 * self.knot_spacing} days)')
        if self.extension < self.degree:
            raise BasisError(f'extension ({self.extension}) must be at least the degree ({self.degree})')

        n_intervals = math.ceil((self.n_days - 1) / self.knot_spacing)
        knots = self.knot_spacing * np.arange(-self.extension, n_intervals + self.extension + 1, dtype=float)
        knots.setflags(write=False)
        n_basis = len(knots) - self.degree - 1
        spline = BSpline(knots, np.eye(n_basis), self.degree, extrapolate=True)
        object.__setattr__(self, 'knots', knots)
        object.__setattr__(self, 'n_basis', n_basis)
        object.__setattr__(self, '_spline', spline)
        object.__setattr__(self, '_spline_derivative', spline.derivative(1))

    @classmethod
    def for_range(cls, date_range: DateRange, knot_spacing: int = 5, degree: int = 3, extension: int = 3) -> 'SplineBasis':
        return cls(date_range.start, date_range.n_days(), knot_spacing, degree, extension)

    @property
    def end_date(self) -> date:
        return self.start_date + timedelta(days=self.n_days - 1)

    def dates(self) -> List[date]:
        return [self.start_date + timedelta(days=i) for i in range(self.n_days)]

    def _checked(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0) or np.any(t > self.n_days - 1) or not np.all(np.isfinite(t)):
            raise BasisRangeError(f'Time outside the basis range [0, {self.n_days - 1}]')
        return t

    def evaluate(self, t) -> np.ndarray:
        '''B_i(t) for every basis function, shape (len(t), n_basis).'''
        return self._spline(self._checked(t))

    def derivative(self, t) -> np.ndarray:
        '''dB_i/dt in 1/day, shape (len(t), n_basis).'''
        return self._spline_derivative(self._checked(t))

    def design_matrix(self, days: Optional[np.ndarray] = None) -> np.ndarray:
        return self.evaluate(np.arange(self.n_days) if days is None else days)

    def derivative_matrix(self, days: Optional[np.ndarray] = None) -> np.ndarray:
        return self.derivative(np.arange(self.n_days) if days is None else days)


def build_basis(date_range: DateRange, knot_spacing: int = 5, degree: int = 3, extension: int = 3) -> SplineBasis:
    return SplineBasis.for_range(date_range, knot_spacing, degree, extension)
