import logging
import math
from datetime import date, timedelta

import numpy as np
import pytest
from scipy import stats

from respicast.config import RespicastConfig, default_delays
from respicast.delays import DiscretePMF
from respicast.errors import DataError, InsufficientDataError
from respicast.renewal import GPConditional, gp_step
from respicast.scoring import score_forecast
from respicast.series import CountSeries, Pathogen, Stream, moving_average
from respicast.smc import (FITTED_QUANTILES, FORECAST_QUANTILES, ForecastConfig, Observations, RngPhase, day_rng, fitted_summary, forecast,
                           initialize, read_forecast_samples_csv, run_filter, systematic_resample, write_forecast_samples_csv)
from respicast.synth import GaussianProcessRt, ScenarioSpec, simulate, simulate_replicates

START = date(2024, 1, 1)


def make_config(pathogen=Pathogen.SARSCoV2, **overrides) -> ForecastConfig:
    delays = default_delays(pathogen)
    values = dict(gen_pmf=delays.generation, admit_pmf=delays.admission, report_pmf=delays.report, n_particles=1000, horizon=14, seed=5)
    values.update(overrides)
    return ForecastConfig(**values)


def constant_series(stream, value, n_days, pathogen=Pathogen.SARSCoV2):
    return CountSeries(pathogen, stream, START, np.full(n_days, value))


def simulated(length=90, r=1.0, seed=3):
    delays = default_delays(Pathogen.SARSCoV2)
    spec = ScenarioSpec(Pathogen.SARSCoV2, START, np.full(length, r) if np.isscalar(r) else r, 200,
                        delays.generation, delays.admission, delays.report, seed=seed)
    return simulate(spec)


@pytest.fixture(scope='module')
def filtered():
    sim = simulated()
    return run_filter(initialize(sim.cases, sim.admissions, make_config(), START + timedelta(days=79)))


def test_day_rng_is_keyed_by_pathogen_day_and_phase():
    sars = Pathogen.SARSCoV2
    first = day_rng(1, sars, START, RngPhase.PROPAGATE).uniform(size=5)

    assert np.array_equal(first, day_rng(1, sars, START, RngPhase.PROPAGATE).uniform(size=5))
    assert not np.array_equal(first, day_rng(1, sars, START, RngPhase.RESAMPLE).uniform(size=5))
    assert not np.array_equal(first, day_rng(1, sars, START + timedelta(days=1), RngPhase.PROPAGATE).uniform(size=5))
    assert not np.array_equal(first, day_rng(2, sars, START, RngPhase.PROPAGATE).uniform(size=5))
    assert not np.array_equal(first, day_rng(1, Pathogen.Influenza, START, RngPhase.PROPAGATE).uniform(size=5))


def test_systematic_resample_exact_counts():
    testee = systematic_resample(np.array([0.25, 0.75, 0.0, 0.0]), np.random.default_rng(0))

    assert np.bincount(testee, minlength=4).tolist() == [1, 3, 0, 0]


def test_systematic_resample_counts_are_floor_or_ceil():
    rng = np.random.default_rng(1)
    weights = rng.uniform(size=1000)
    weights /= weights.sum()

    counts = np.bincount(systematic_resample(weights, rng), minlength=1000)

    expected = 1000 * weights
    assert counts.sum() == 1000
    assert np.all(counts >= np.floor(expected) - 1e-9)
    assert np.all(counts <= np.ceil(expected) + 1e-9)


def test_forecast_config_validation():
    with pytest.raises(ValueError):
        make_config(n_particles=999)
    with pytest.raises(ValueError):
        make_config(lag=0)
    with pytest.raises(ValueError):
        make_config(horizon=-1)


def test_init_days_is_longest_delay():
    assert make_config().init_days == 25
    assert make_config(Pathogen.RSV).init_days == 25


def test_initialize_needs_data():
    with pytest.raises(DataError):
        initialize(None, None, make_config(), START)


def test_initialize_rejects_cases_without_report_delay():
    cases = constant_series(Stream.cases, 10, 60, Pathogen.Influenza)

    with pytest.raises(DataError):
        initialize(cases, None, make_config(Pathogen.Influenza), START + timedelta(days=59))


def test_initialize_rejects_series_ending_before_origin():
    admissions = constant_series(Stream.admissions, 10, 60)

    with pytest.raises(DataError):
        initialize(None, admissions, make_config(), START + timedelta(days=70))


def test_initialize_insufficient_data():
    admissions = constant_series(Stream.admissions, 10, 20)

    with pytest.raises(InsufficientDataError):
        initialize(None, admissions, make_config(), START + timedelta(days=19))


def test_initialize_ratio_from_first_weeks():
    cases = constant_series(Stream.cases, 100, 60)
    admissions = constant_series(Stream.admissions, 10, 60)

    testee = initialize(cases, admissions, make_config(), START + timedelta(days=59))

    ratio = np.exp(testee.ln_p[:, testee.first_ln_r_day])
    assert testee.two_stream == True
    assert ratio.mean() == pytest.approx(0.1, rel=0.01)
    assert ratio.std() / ratio.mean() == pytest.approx(0.025, rel=0.15)


def test_initialize_ratio_fallback(caplog):
    cases = constant_series(Stream.cases, 100, 60)
    admissions = constant_series(Stream.admissions, 0, 60)

    with caplog.at_level(logging.WARNING):
        testee = initialize(cases, admissions, make_config(chr_fallback=0.2), START + timedelta(days=59))

    assert np.exp(testee.ln_p[:, testee.first_ln_r_day]).mean() == pytest.approx(0.2, rel=0.01)
    assert 'case-hospitalisation ratio 0.2' in caplog.text


def test_initialize_infections_from_admissions():
    admissions = constant_series(Stream.admissions, 10, 60, Pathogen.Influenza)

    testee = initialize(None, admissions, make_config(Pathogen.Influenza), START + timedelta(days=59))

    t_init = testee.config.init_days
    assert testee.streams == (Stream.admissions,)
    assert testee.two_stream == False
    assert testee.day == t_init - 1
    assert testee.infections[:, :t_init].mean() == pytest.approx(10.0, abs=0.1)
    assert np.all(testee.infections[:, t_init:] == 0)
    assert np.all(np.isnan(testee.ln_r[:, :t_init - 1]))
    assert np.all(np.isfinite(testee.ln_r[:, t_init - 1]))


def test_initialize_limits_history():
    admissions = constant_series(Stream.admissions, 10, 400)

    testee = initialize(None, admissions, make_config(history_days=100), START + timedelta(days=399))

    assert testee.start_date == START + timedelta(days=299)
    assert testee.n_days == 101


def test_filter_reaches_origin(filtered):
    assert filtered.current_date == START + timedelta(days=79)
    assert filtered.day == filtered.n_days - 1
    assert len(filtered.ess) == filtered.n_days - 1 - filtered.first_ln_r_day
    assert all(0 < e <= filtered.n_particles + 1e-6 for e in filtered.ess)
    assert np.all(np.isfinite(filtered.ln_r[:, filtered.first_ln_r_day:]))
    assert np.all(np.abs(filtered.ln_r[:, filtered.first_ln_r_day:]) <= 5.0)
    assert np.isfinite(filtered.log_evidence)


def test_filter_is_deterministic(filtered):
    sim = simulated()

    testee = run_filter(initialize(sim.cases, sim.admissions, make_config(), START + timedelta(days=79)))

    np.testing.assert_array_equal(testee.ln_r, filtered.ln_r)
    np.testing.assert_array_equal(testee.infections, filtered.infections)
    assert testee.ess == filtered.ess


def test_filter_depends_on_seed(filtered):
    sim = simulated()

    testee = run_filter(initialize(sim.cases, sim.admissions, make_config(seed=6), START + timedelta(days=79)))

    assert not np.array_equal(testee.infections, filtered.infections)


def test_resampling_leaves_frozen_columns_alone():
    sim = simulated()
    config = make_config(lag=5, day_of_week=False)
    early = run_filter(initialize(sim.cases, sim.admissions, config, START + timedelta(days=70)))

    later = run_filter(initialize(sim.cases, sim.admissions, config, START + timedelta(days=75)))

    frozen = early.frozen_before
    assert frozen == early.day - 4
    np.testing.assert_array_equal(later.ln_r[:, :frozen], early.ln_r[:, :frozen])
    np.testing.assert_array_equal(later.infections[:, :frozen], early.infections[:, :frozen])
    np.testing.assert_array_equal(later.ln_p[:, :frozen], early.ln_p[:, :frozen])
    assert not np.array_equal(later.infections[:, :early.day + 1], early.infections)


def test_filter_without_observations_keeps_every_particle():
    admissions = constant_series(Stream.admissions, 10, 60)
    ens = initialize(None, admissions, make_config(), START + timedelta(days=59))

    testee = run_filter(ens, Observations.empty(ens.n_days))

    assert testee.ess == [1000.0] * (ens.n_days - ens.config.init_days)
    assert testee.log_evidence == 0.0


def test_filter_without_observations_follows_the_prior():
    admissions = constant_series(Stream.admissions, 10, 45)
    config = make_config(n_particles=50_000)
    ens = initialize(None, admissions, config, START + timedelta(days=44))

    testee = run_filter(ens, Observations.empty(ens.n_days))

    n = config.n_particles
    n_steps = testee.day + 1 - testee.first_ln_r_day
    rng = np.random.default_rng(16)
    conditional = GPConditional(config.kernel, config.gp_window)
    prior = np.empty((n, n_steps))
    prior[:, 0] = gp_step(np.empty((n, 0)), config.kernel, config.gp_window, rng, config.initial_variance)
    for j in range(1, n_steps):
        prior[:, j] = gp_step(prior[:, :j], config.kernel, config.gp_window, rng, config.initial_variance, conditional)

    for j in (n_steps // 2, n_steps - 1):
        assert stats.ks_2samp(testee.ln_r[:, testee.first_ln_r_day + j], prior[:, j]).statistic < 0.02


def test_particle_view(filtered):
    testee = filtered.particle(7)

    assert len(testee.ln_r) == filtered.day + 1
    assert testee.h[-1] == pytest.approx(filtered.observed_h(filtered.day)[7], abs=1e-9)
    assert testee.z[-1] == pytest.approx(filtered.observed_z(filtered.day)[7], abs=1e-9)
    assert testee.ln_p is not None


def test_forecast_shapes_and_quantiles(filtered):
    before = filtered.infections.copy()

    testee = forecast(filtered)

    np.testing.assert_array_equal(filtered.infections, before)
    assert filtered.day == filtered.n_days - 1
    assert testee.horizon == 14
    assert testee.dates[0] == filtered.current_date + timedelta(days=1)
    assert [str(t) for t in testee.targets] == ['SARSCoV2/cases', 'SARSCoV2/admissions']
    for stream in (Stream.cases, Stream.admissions):
        assert testee.samples[stream].shape == (1000, 14)
        assert np.all(testee.samples[stream] >= 0)
        q = testee.quantiles(stream)
        assert q.shape == (len(FORECAST_QUANTILES), 14)
        assert np.all(np.diff(q, axis=0) >= 0)
    assert len(testee.quantile_frame()) == 2 * 14 * len(FORECAST_QUANTILES)
    assert testee.rt_origin.date == filtered.current_date
    assert testee.rt_origin.mean > 0


def test_forecast_is_deterministic(filtered):
    first = forecast(filtered, 5)
    second = forecast(filtered, 5)

    np.testing.assert_array_equal(first.samples[Stream.cases], second.samples[Stream.cases])
    np.testing.assert_array_equal(first.samples[Stream.admissions], second.samples[Stream.admissions])


def test_forecast_zero_horizon(filtered):
    testee = forecast(filtered, 0)

    assert testee.dates == []
    assert testee.samples[Stream.admissions].shape == (1000, 0)
    assert testee.quantiles(Stream.admissions).shape == (len(FORECAST_QUANTILES), 0)
    assert testee.quantile_frame().empty
    assert testee.rt_origin is not None


def test_forecast_samples_csv(filtered, tmp_path):
    result = forecast(filtered, 7)
    path = tmp_path / 'forecast_samples.csv'

    write_forecast_samples_csv(result, path, n_samples=200, seed=3)
    testee = read_forecast_samples_csv(path)

    assert path.read_text().splitlines()[0] == 'target,origin_date,date,horizon,sample,value'
    assert testee.origin_date == result.origin_date
    assert testee.dates == result.dates
    assert testee.pathogen == Pathogen.SARSCoV2
    assert testee.samples[Stream.cases].shape == (200, 7)
    exported = result.sample_frame(200, 3)
    cases = exported[exported['target'] == 'SARSCoV2/cases']
    assert testee.samples[Stream.cases][:, 0].tolist() == cases[cases['horizon'] == 1]['value'].tolist()


def test_read_forecast_samples_rejects_missing_columns(tmp_path):
    path = tmp_path / 'bad.csv'
    path.write_text('target,date,value\nSARSCoV2/cases,2024-01-01,3\n')

    with pytest.raises(DataError):
        read_forecast_samples_csv(path)


def test_fitted_summary(filtered):
    testee = fitted_summary(filtered)

    n = filtered.day + 1 - filtered.first_ln_r_day
    assert list(testee.quantiles) == ['R', 'P', 'Z', 'cases_predicted', 'H', 'admissions_predicted']
    assert len(testee.dates) == n
    assert len(testee.ess) == n
    assert testee.ess[0] == 1000.0
    for values in testee.quantiles.values():
        assert values.shape == (len(FITTED_QUANTILES), n)
        assert np.all(np.diff(values, axis=0) >= 0)
    assert np.all(testee.quantiles['R'] > 0)
    assert list(testee.to_frame().columns) == ['date', 'quantity', 'quantile', 'value']


@pytest.mark.slow
def test_filter_tracks_reproduction_number():
    r = np.concatenate([np.full(40, 1.3), np.full(40, 0.8)])
    sim = simulated(length=80, r=r, seed=11)
    config = make_config(n_particles=10_000)

    ens = run_filter(initialize(sim.cases, sim.admissions, config, START + timedelta(days=79)))
    summary = fitted_summary(ens)

    lower = summary.quantiles['R'][FITTED_QUANTILES.index(0.05)]
    upper = summary.quantiles['R'][FITTED_QUANTILES.index(0.95)]
    days = np.array([(d - START).days for d in summary.dates])
    scored = days >= 14
    covered = (lower <= r[days]) & (r[days] <= upper)
    assert covered[scored].mean() >= 0.8


@pytest.mark.slow
def test_fixed_lag_matches_full_history():
    sim = simulated(length=60, r=1.1, seed=13)
    origin = START + timedelta(days=59)

    def origin_r(lag):
        ens = run_filter(initialize(sim.cases, sim.admissions, make_config(n_particles=10_000, lag=lag), origin))
        r = np.exp(ens.ln_r[:, ens.day])
        return r.mean(), r.var() / ens.ess[-1]

    fixed_mean, fixed_var = origin_r(42)
    full_mean, full_var = origin_r(60)

    assert abs(fixed_mean - full_mean) <= 3 * np.sqrt(fixed_var + full_var)


@pytest.mark.slow
def test_forecast_calibration_over_replicates():
    settings = RespicastConfig.model_construct()
    delays = default_delays(Pathogen.SARSCoV2)
    r = GaussianProcessRt(base_r=1.0).trajectory(108, np.random.default_rng(14), settings)
    spec = ScenarioSpec(Pathogen.SARSCoV2, START, r, 200, delays.generation, delays.admission, delays.report, seed=14)
    config = make_config(n_particles=10_000, horizon=28)
    origin = START + timedelta(days=79)

    covered, crps_7, crps_28 = [], [], []
    for sim in simulate_replicates(spec, 50):
        if sim.extinct:
            continue
        result = forecast(run_filter(initialize(sim.cases, sim.admissions, config, origin)))
        truth = {Stream.cases: sim.cases, Stream.admissions: sim.admissions}
        for stream, series in truth.items():
            q = result.quantiles(stream)[:, 6]
            observed = series.counts[series.index_of(result.dates[6])]
            covered.append(q[FORECAST_QUANTILES.index(0.05)] <= observed <= q[FORECAST_QUANTILES.index(0.95)])
        records = score_forecast(result, truth, n_samples=2000, seed=1)
        crps_7 += [rec.crps for rec in records if rec.horizon == 7]
        crps_28 += [rec.crps for rec in records if rec.horizon == 28]

    assert 0.80 <= np.mean(covered) <= 0.97
    assert np.mean(crps_28) >= np.mean(crps_7)


@pytest.mark.slow
def test_forecast_covers_flat_epidemic():
    sim = simulated(length=110, r=1.0, seed=12)
    config = make_config(n_particles=5000, horizon=28)
    ens = run_filter(initialize(sim.cases, sim.admissions, config, START + timedelta(days=81)))

    testee = forecast(ens)

    q = testee.quantiles(Stream.admissions)
    truth = sim.admissions.counts[82:110]
    covered = (q[0] <= truth) & (truth <= q[-1])
    assert covered.mean() >= 0.8


@pytest.mark.slow
def test_fitted_reports_track_weekly_case_mean():
    delays = default_delays(Pathogen.SARSCoV2)
    report = DiscretePMF.point_mass(0)
    spec = ScenarioSpec(Pathogen.SARSCoV2, START, np.full(90, 1.0), 200, delays.generation, delays.admission, report, k_c=math.inf, seed=15)
    sim = simulate(spec)
    config = make_config(report_pmf=report, p_c=1.0, k_c=math.inf, day_of_week=False, n_particles=5000)

    ens = run_filter(initialize(sim.cases, None, config, START + timedelta(days=89)))

    days = np.arange(ens.first_ln_r_day + 7, ens.day - 2)
    fitted = np.array([ens.observed_z(d).mean() for d in days])
    weekly = moving_average(sim.cases.counts)[days]
    assert np.mean(np.abs(fitted / weekly - 1)) < 0.1
