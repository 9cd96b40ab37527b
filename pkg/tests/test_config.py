import math

import pytest
from pydantic import ValidationError

from respicast.config import CONFIG_ENV_VAR, DelayConfig, RespicastConfig, config_path, load_config
from respicast.series import Pathogen


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
    monkeypatch.delenv('RESPICAST_FILTER__PARTICLES', raising=False)


def test_defaults_match_parameter_table():
    testee = load_config()

    sars = testee.pathogens.get(Pathogen.SARSCoV2)
    assert (sars.generation_interval.mean, sars.generation_interval.sd) == (3.3, 3.5)
    assert (sars.infection_to_report.mean, sars.infection_to_report.sd) == (6.3, 3.1)
    assert (sars.infection_to_admission.mean, sars.infection_to_admission.sd) == (6.3, 3.7)

    flu = testee.pathogens.get(Pathogen.Influenza)
    assert (flu.generation_interval.mean, flu.generation_interval.sd) == (2.6, 1.3)
    assert (flu.infection_to_admission.mean, flu.infection_to_admission.sd) == (3.6, 2.1)
    assert flu.infection_to_report is None

    rsv = testee.pathogens.get(Pathogen.RSV)
    assert (rsv.generation_interval.mean, rsv.generation_interval.sd) == (7.5, 2.1)
    assert (rsv.infection_to_admission.mean, rsv.infection_to_admission.sd) == (6.9, 2.7)
    assert rsv.infection_to_report is None

    assert testee.delays.max_generation_interval == 15
    assert testee.delays.max_report_delay == 25
    assert testee.delays.max_admission_delay == 25
    assert testee.delays.min_generation_interval == 1
    assert testee.delays.min_observation_delay == 0

    assert (testee.gp.s0, testee.gp.l, testee.gp.sn) == (0.1, 30, 0.001)
    assert testee.filter.p_c == 1.0
    assert testee.filter.k_c == 25
    assert testee.filter.k_h == 25
    assert testee.filter.p_cv == 0.025
    assert testee.filter.particles == 100_000
    assert testee.filter.lag == 42
    assert testee.filter.horizon == 28

    assert testee.trend.knot_spacing == 5
    assert testee.trend.extension == 3
    assert testee.trend.window_days == 1095
    assert testee.trend.sampler.chains == 4
    assert testee.scoring.transform == 'log1p'
    assert testee.scoring.n_samples == 2000


def test_yaml_file_overrides_defaults(tmp_path):
    path = tmp_path / 'custom.yaml'
    path.write_text('filter:\n  lag: 21\n  particles: 5000\ngp:\n  initial_variance: signal_plus_noise\n')

    testee = load_config(path)

    assert testee.filter.lag == 21
    assert testee.filter.particles == 5000
    assert testee.filter.horizon == 28
    assert testee.gp.initial_variance == 'signal_plus_noise'


def test_default_file_and_env_var(tmp_path, monkeypatch):
    (tmp_path / 'settings.yaml').write_text('filter:\n  lag: 30\n')
    assert load_config().filter.lag == 30

    other = tmp_path / 'other.yaml'
    other.write_text('filter:\n  lag: 14\n')
    monkeypatch.setenv(CONFIG_ENV_VAR, str(other))
    assert config_path() == other
    assert load_config().filter.lag == 14


def test_env_overrides_yaml(tmp_path, monkeypatch):
    path = tmp_path / 'custom.yaml'
    path.write_text('filter:\n  particles: 5000\n')
    monkeypatch.setenv('RESPICAST_FILTER__PARTICLES', '2000')

    testee = load_config(path)

    assert testee.filter.particles == 2000


def test_missing_explicit_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / 'missing.yaml')


def test_sampler_needs_enough_draws(tmp_path):
    path = tmp_path / 'custom.yaml'
    path.write_text('trend:\n  sampler:\n    chains: 4\n    draws: 100\n')

    with pytest.raises(ValidationError):
        load_config(path)


def test_field_constraints(tmp_path):
    path = tmp_path / 'custom.yaml'
    path.write_text('filter:\n  particles: 10\n')

    with pytest.raises(ValidationError):
        load_config(path)


def test_delay_components_are_composed():
    testee = DelayConfig(components=[{'mean': 1, 'sd': 1}, {'mean': 2, 'sd': 1}])

    assert testee.mean == 3
    assert testee.sd == pytest.approx(math.sqrt(2), abs=1e-12)


def test_delay_needs_moments():
    with pytest.raises(ValidationError):
        DelayConfig(mean=3.0)
    with pytest.raises(ValidationError):
        DelayConfig(mean=3.0, sd=1.0, components=[{'mean': 1, 'sd': 1}])


def test_pathogen_delays_follow_config(tmp_path):
    path = tmp_path / 'custom.yaml'
    path.write_text('delays:\n  max_generation_interval: 10\n')

    testee = load_config(path).pathogen_delays(Pathogen.Influenza)

    assert testee.generation.max_lag == 10
    assert testee.generation.min_lag == 1
    assert testee.admission.max_lag == 25
    assert testee.report is None


def test_config_hash_is_stable():
    assert load_config().config_hash() == load_config().config_hash()
    assert load_config().config_hash() != load_config(filter={'lag': 7}).config_hash()


def test_model_dump_is_json():
    testee = RespicastConfig()

    assert '"particles": 100000' in testee.model_dump_json(indent=2)
