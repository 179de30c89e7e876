import pytest

from settings import Settings


def test_defaults_when_unset(settings):
    assert settings.get('dt') == 1e-3
    assert settings.get('max_jumps') == 1_000_000
    assert settings.get('log_level') == 'INFO'


def test_values_persist(settings):
    settings.set('dt', 0.002)
    settings.set('chattering_run', '7')
    settings.set('log_level', 'debug')
    assert settings.get('dt') == 0.002
    assert settings.get('chattering_run') == 7
    assert settings.get('log_level') == 'DEBUG'


@pytest.mark.parametrize('key,value', [('dt', 0.0), ('dt', 'fast'), ('max_jumps', -1), ('log_level', 'LOUD')])
def test_invalid_values_are_rejected(settings, key, value):
    with pytest.raises(ValueError):
        settings.set(key, value)


def test_corrupt_stored_value_falls_back(settings):
    settings.settings.setValue('event_tolerance', 'garbage')
    settings.settings.setValue('ga_population', 1)
    assert settings.get('event_tolerance') == 1e-6
    assert settings.get('ga_population') == 64


def test_simulation_defaults(settings):
    settings.set('output_period', 0.05)
    defaults = settings.simulation_defaults()
    assert defaults['output_period'] == 0.05
    assert set(defaults) == {'dt', 'event_tolerance', 'output_period', 'max_jumps', 'chattering_run'}
    assert Settings.default('ga_generations') == 100


def test_copy_reads_the_same_store(settings):
    settings.set('dt', 0.004)
    settings.set('log_level', 'warning')
    copy = settings.copy()
    assert copy.settings is not settings.settings
    assert copy.settings.fileName() == settings.settings.fileName()
    assert copy.get('dt') == 0.004
    assert copy.get('log_level') == 'WARNING'
