import math
from datetime import date, timedelta

import numpy as np
import pytest
from scipy import stats

from respicast.config import SamplerConfig
from respicast.errors import BasisRangeError, DegeneratePosteriorError, TrendConvergenceError
from respicast.series import CountSeries, Pathogen, Stream, weekday_index
from respicast.spline import SplineBasis
from respicast.trend import (TREND_QUANTILES, ParameterPrior, PosteriorSamples, TrendPriors, TrendState, compare_trends, derive_informative_priors, fit_pspline,
                             growth_rate, log_posterior, read_posterior_csv, read_trend_csv, rw2_log_prior, signed_doubling_time,
                             summarise_trend, trend_draws, write_posterior_csv, write_trend_csv)

START = date(2024, 9, 2)


def make_samples(b, basis, tau=None, k=None, log_omega=None) -> PosteriorSamples:
    n = len(b)
    rng = np.random.default_rng(0)
    return PosteriorSamples(
        b=np.asarray(b, dtype=float),
        tau=rng.uniform(0.05, 0.15, size=n) if tau is None else np.asarray(tau, dtype=float),
        k=rng.uniform(10, 40, size=n) if k is None else np.asarray(k, dtype=float),
        chain=np.arange(n) // (n // 4 if n >= 4 else 1),
        draw=np.arange(n) % (n // 4 if n >= 4 else 1),
        log_omega=log_omega,
        basis=basis,
    )


def linear_draws(slopes, basis):
    return np.outer(slopes, np.arange(basis.n_basis, dtype=float)) + 2.0


def test_rw2_linear_coefficients():
    b = 0.3 + 0.05 * np.arange(12)

    testee = rw2_log_prior(b, 0.2)

    assert testee == pytest.approx(10 * stats.norm.logpdf(0, scale=0.2), abs=1e-12)


def test_rw2_ignores_level_shift():
    b = np.random.default_rng(1).normal(size=15)

    assert rw2_log_prior(b + 4.0, 0.3) == pytest.approx(rw2_log_prior(b, 0.3), abs=1e-12)


def test_log_posterior_poisson_limit():
    basis = SplineBasis(START, 10)
    series = CountSeries(Pathogen.SARSCoV2, Stream.cases, START, np.full(10, 3))
    b = np.full(basis.n_basis, math.log(3))
    priors = TrendPriors(tau_upper=1e3, k_upper=1e9)

    testee = log_posterior(TrendState(b, 0.1, 1e8), series, basis, priors)

    data = testee - rw2_log_prior(b, 0.1) + math.log(1e3) + math.log(1e9)
    assert data == pytest.approx(10 * stats.poisson.logpmf(3, 3), abs=1e-5)


def test_log_posterior_rejects_non_positive_parameters():
    basis = SplineBasis(START, 10)
    series = CountSeries(Pathogen.SARSCoV2, Stream.cases, START, np.full(10, 3))
    b = np.zeros(basis.n_basis)

    assert log_posterior(TrendState(b, 0.0, 10.0), series, basis, TrendPriors()) == -math.inf
    assert log_posterior(TrendState(b, 0.1, -1.0), series, basis, TrendPriors()) == -math.inf


def test_log_posterior_term_by_term():
    rng = np.random.default_rng(2)
    basis = SplineBasis(START, 21)
    counts = rng.integers(0, 30, size=21)
    series = CountSeries(Pathogen.Influenza, Stream.admissions, START, counts)
    b = rng.normal(2.0, 0.3, size=basis.n_basis)
    free = rng.normal(0, 0.2, size=6)
    log_omega = np.append(free, -free.sum())
    priors = TrendPriors(tau=ParameterPrior.normal(0.1, 0.05), k=ParameterPrior.normal(20, 5))
    tau, k = 0.12, 18.0

    testee = log_posterior(TrendState(b, tau, k, log_omega), series, basis, priors)

    design = np.array([[_b_spline(basis, i, t) for i in range(basis.n_basis)] for t in range(21)])
    mean = np.exp(design @ b + log_omega[weekday_index(START, 21)])
    oracle = sum(stats.nbinom.logpmf(c, k, k / (k + m)) for c, m in zip(counts, mean))
    oracle += sum(stats.norm.logpdf(b[i] - 2 * b[i - 1] + b[i - 2], scale=tau) for i in range(2, len(b)))
    oracle += stats.truncnorm.logpdf(tau, -0.1 / 0.05, np.inf, loc=0.1, scale=0.05)
    oracle += stats.truncnorm.logpdf(k, -20 / 5, np.inf, loc=20, scale=5)
    oracle += stats.norm.logpdf(free).sum()
    assert testee == pytest.approx(oracle, abs=1e-8)


def _b_spline(basis, i, t):
    return float(basis.evaluate([t])[0, i])


def test_growth_rate_constant_coefficients():
    basis = SplineBasis(START, 40)
    samples = make_samples(np.full((4, basis.n_basis), 1.5), basis)

    assert np.abs(growth_rate(samples)).max() < 1e-12


def test_growth_rate_linear_coefficients():
    basis = SplineBasis(START, 40)
    samples = make_samples(linear_draws([0.1, 0.2, -0.05, 0.0], basis), basis)

    r = growth_rate(samples)

    assert r[:, 5:35] == pytest.approx(np.repeat([[0.02], [0.04], [-0.01], [0.0]], 30, axis=1), abs=1e-10)


def test_growth_rate_matches_finite_differences():
    basis = SplineBasis(START, 60)
    b = np.random.default_rng(3).normal(3, 0.5, size=(5, basis.n_basis))
    samples = make_samples(b, basis)
    days = np.linspace(1, 58, 200)
    h = 0.01

    fd = (trend_draws(samples, days + h) - trend_draws(samples, days - h)) / (2 * h)

    assert np.abs(growth_rate(samples, days) - fd).max() < 1e-4


def test_growth_rate_outside_range():
    basis = SplineBasis(START, 40)
    samples = make_samples(np.ones((4, basis.n_basis)), basis)

    with pytest.raises(BasisRangeError):
        growth_rate(samples, np.array([45.0]))


def test_signed_doubling_time():
    testee = signed_doubling_time([math.log(2) / 10, -math.log(2) / 5, 0.0])

    assert testee[0] == pytest.approx(10.0)
    assert testee[1] == pytest.approx(-5.0)
    assert testee[2] == math.inf


def test_summary_all_growing():
    basis = SplineBasis(START, 30)
    slopes = 5 * (math.log(2) / 10 + np.linspace(-0.01, 0.01, 401))
    samples = make_samples(linear_draws(slopes, basis), basis)

    testee = summarise_trend(samples)

    assert np.all(testee.p_growth == 1.0)
    assert testee.doubling_time == pytest.approx(np.full(30, 10.0), rel=1e-6)
    assert np.all(testee.stable == False)
    assert set(testee.quantiles) == {'expected', 'growth_rate'}


def test_summary_quantiles_match_sort_oracle():
    basis = SplineBasis(START, 30)
    b = np.random.default_rng(4).normal(2, 0.4, size=(400, basis.n_basis))
    samples = make_samples(b, basis)

    testee = summarise_trend(samples)

    values = np.sort(np.exp(trend_draws(samples)), axis=0)
    for row, level in zip(testee.quantiles['expected'], testee.levels):
        position = level * (len(values) - 1)
        lo, frac = int(math.floor(position)), position - math.floor(position)
        hi = min(lo + 1, len(values) - 1)
        oracle = values[lo] + frac * (values[hi] - values[lo])
        assert row == pytest.approx(oracle, abs=1e-12)

    lower, median, upper = testee.quantiles['expected'][0], testee.quantiles['expected'][2], testee.quantiles['expected'][-1]
    assert np.all(lower <= median) and np.all(median <= upper)
    assert np.all((testee.p_growth >= 0) & (testee.p_growth <= 1))


def test_summary_with_day_of_week_draws():
    basis = SplineBasis(START, 28)
    free = np.tile(np.array([0.3, 0.0, 0.0, 0.0, 0.0, 0.0]), (400, 1))
    log_omega = np.hstack([free, -free.sum(axis=1, keepdims=True)])
    samples = make_samples(np.full((400, basis.n_basis), math.log(10)), basis, log_omega=log_omega)

    testee = summarise_trend(samples)

    monday = testee.quantiles['expected_dow'][2][0]
    assert START.weekday() == 0
    assert monday == pytest.approx(10 * math.exp(0.3), rel=1e-9)


def test_derive_informative_priors():
    basis = SplineBasis(START, 20)
    b = np.ones((3, basis.n_basis))

    testee = derive_informative_priors(make_samples(b, basis, tau=[0.1, 0.2, 0.3], k=[10, 20, 60]))

    assert testee.tau.mean == pytest.approx(0.2, abs=1e-12)
    assert testee.tau.sd == pytest.approx(0.1, abs=1e-12)
    assert testee.k.mean == pytest.approx(30.0, abs=1e-12)
    assert testee.k.sd == pytest.approx(np.std([10, 20, 60], ddof=1), abs=1e-12)


def test_derive_priors_degenerate():
    basis = SplineBasis(START, 20)

    with pytest.raises(DegeneratePosteriorError):
        derive_informative_priors(make_samples(np.ones((4, basis.n_basis)), basis, tau=[0.1] * 4))


def test_compare_trends_with_itself():
    basis = SplineBasis(START, 30)
    samples = make_samples(np.random.default_rng(5).normal(2, 0.2, size=(400, basis.n_basis)), basis)
    summary = summarise_trend(samples)

    testee = compare_trends(summary, summary)

    assert testee.n_days == 30
    assert testee.expected_coverage == 1.0
    assert testee.growth_coverage == 1.0


def test_posterior_csv_round_trip(tmp_path):
    basis = SplineBasis(START, 20)
    b = np.random.default_rng(6).normal(size=(8, basis.n_basis))
    samples = make_samples(b, basis)
    path = tmp_path / 'posterior.csv'

    write_posterior_csv(samples, path)
    testee = read_posterior_csv(path, basis)

    assert path.read_text().splitlines()[0] == 'draw,chain,parameter,value'
    assert testee.b == pytest.approx(samples.b, abs=1e-12)
    assert testee.tau == pytest.approx(samples.tau, abs=1e-12)
    assert testee.k == pytest.approx(samples.k, abs=1e-12)
    assert testee.log_omega is None


def test_trend_csv_round_trip(tmp_path):
    basis = SplineBasis(START, 30)
    samples = make_samples(np.random.default_rng(7).normal(2, 0.3, size=(400, basis.n_basis)), basis)
    summary = summarise_trend(samples)
    path = tmp_path / 'trend.csv'

    write_trend_csv(summary, path)
    testee = read_trend_csv(path)

    assert testee.dates == summary.dates
    assert testee.quantiles['growth_rate'] == pytest.approx(summary.quantiles['growth_rate'], abs=1e-12)
    assert testee.p_growth == pytest.approx(summary.p_growth, abs=1e-12)
    assert testee.stable.tolist() == summary.stable.tolist()


@pytest.fixture(scope='module')
def sampler():
    return SamplerConfig(chains=4, warmup=1000, draws=500, seed=3)


@pytest.fixture(scope='module')
def smooth_fit(sampler):
    t = np.arange(120)
    true_s = math.log(30) + 0.69 * np.sin(2 * math.pi * t / 120)
    rng = np.random.default_rng(8)
    mean = np.exp(true_s)
    counts = rng.negative_binomial(25, 25 / (25 + mean))
    series = CountSeries(Pathogen.SARSCoV2, Stream.admissions, START, counts)
    basis = SplineBasis.for_range(series.date_range)
    return true_s, fit_pspline(series, basis, TrendPriors(), sampler)


@pytest.mark.slow
def test_fit_recovers_smooth_trend(smooth_fit):
    true_s, samples = smooth_fit
    t = np.arange(120)
    true_r = 0.69 * 2 * math.pi / 120 * np.cos(2 * math.pi * t / 120)

    summary = summarise_trend(samples)

    expected = summary.quantiles['expected']
    covered = (expected[0] <= np.exp(true_s)) & (np.exp(true_s) <= expected[-1])
    assert covered.mean() >= 0.9

    steep = np.abs(true_r) > 0.02
    median_r = summary.quantiles['growth_rate'][2]
    assert (np.sign(median_r[steep]) == np.sign(true_r[steep])).mean() >= 0.85

    assert samples.diagnostics.max_rhat < 1.05
    assert samples.diagnostics.min_ess > 200
    assert len(samples) == 2000


@pytest.mark.slow
def test_fit_flat_series(sampler):
    counts = np.random.default_rng(9).poisson(20, size=120)
    series = CountSeries(Pathogen.Influenza, Stream.admissions, START, counts)
    basis = SplineBasis.for_range(series.date_range)

    summary = summarise_trend(fit_pspline(series, basis, TrendPriors(), sampler))

    growth = summary.quantiles['growth_rate']
    assert ((growth[0] <= 0) & (growth[-1] >= 0)).mean() >= 0.9


@pytest.mark.slow
def test_fit_all_zero_series(sampler):
    series = CountSeries(Pathogen.RSV, Stream.admissions, START, np.zeros(60, dtype=int))
    basis = SplineBasis.for_range(series.date_range)

    try:
        samples = fit_pspline(series, basis, TrendPriors(), sampler)
    except TrendConvergenceError:
        return
    assert np.all(summarise_trend(samples).quantiles['expected'][2] < 1)


@pytest.mark.slow
def test_fit_is_deterministic(sampler):
    counts = np.random.default_rng(10).poisson(15, size=40)
    series = CountSeries(Pathogen.SARSCoV2, Stream.cases, START, counts)
    basis = SplineBasis.for_range(series.date_range)

    first = fit_pspline(series, basis, TrendPriors(), sampler)
    second = fit_pspline(series, basis, TrendPriors(), sampler)

    assert np.array_equal(first.b, second.b)
    assert np.array_equal(first.tau, second.tau)


@pytest.mark.slow
def test_fit_shifts_with_the_data(sampler):
    counts = np.random.default_rng(12).poisson(20 * np.exp(0.02 * np.arange(60)))
    original = CountSeries(Pathogen.Influenza, Stream.admissions, START, counts)
    shifted = CountSeries(Pathogen.Influenza, Stream.admissions, START + timedelta(days=7), counts)

    first = summarise_trend(fit_pspline(original, SplineBasis.for_range(original.date_range), TrendPriors(), sampler))
    second = summarise_trend(fit_pspline(shifted, SplineBasis.for_range(shifted.date_range), TrendPriors(), sampler))

    median = TREND_QUANTILES.index(0.5)
    assert second.dates == [d + timedelta(days=7) for d in first.dates]
    assert second.quantiles['expected'][median] == pytest.approx(first.quantiles['expected'][median], rel=0.05)
    assert second.quantiles['growth_rate'][median] == pytest.approx(first.quantiles['growth_rate'][median], abs=0.01)


@pytest.mark.slow
def test_fit_day_of_week_effect(sampler):
    rng = np.random.default_rng(11)
    weekdays = weekday_index(START, 112)
    omega = np.where(weekdays == 0, 1.75, 0.875)
    counts = rng.negative_binomial(25, 25 / (25 + 40 * omega))
    series = CountSeries(Pathogen.SARSCoV2, Stream.cases, START, counts)
    basis = SplineBasis.for_range(series.date_range)

    samples = fit_pspline(series, basis, TrendPriors(), sampler, dow=True)

    monday = np.exp(samples.log_omega[:, 0]).mean()
    assert 1.5 <= monday <= 2.0


@pytest.mark.slow
def test_informative_priors_from_fit(smooth_fit):
    _, samples = smooth_fit

    testee = derive_informative_priors(samples)

    assert testee.tau.mean == pytest.approx(float(np.mean(samples.tau)), abs=1e-12)
    assert testee.k.sd == pytest.approx(float(np.std(samples.k, ddof=1)), abs=1e-12)
