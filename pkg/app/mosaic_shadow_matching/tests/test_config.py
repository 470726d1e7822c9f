import pytest

from config import Settings, get_settings
from errors import ConfigError
from geometry import PolyRegion
from harness import generate_canyon, scenario_aoi


def test_defaults():
    settings = Settings()
    assert settings.eps_area == 1e-9
    assert settings.oracle_cap == 12
    assert settings.gmm_samples == 100_000


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("MZSM_EPS_AREA", "1e-6")
    monkeypatch.setenv("MZSM_DEBUG", "true")
    get_settings.cache_clear()
    settings = get_settings()
    assert settings.eps_area == 1e-6
    assert settings.debug_validate is True


def test_eps_override_changes_empty_test(monkeypatch):
    sliver = PolyRegion.box(0, 0, 1e-4, 1e-4)
    assert not sliver.is_empty()
    monkeypatch.setenv("MZSM_EPS_AREA", "1e-7")
    get_settings.cache_clear()
    assert sliver.is_empty()


@pytest.mark.parametrize("name,value", [("MZSM_EPS_AREA", "tiny"), ("MZSM_ORACLE_CAP", "-1"), ("MZSM_EPS_AREA", "0")])
def test_bad_overrides(name, value):
    with pytest.raises(ConfigError):
        Settings.from_env({name: value})


def test_default_prior_feeds_scenarios(monkeypatch):
    monkeypatch.setenv("MZSM_DEFAULT_PRIOR", "0.8")
    get_settings.cache_clear()
    scenario = generate_canyon(2, seed=0)
    assert scenario.prior == 0.8
    assert scenario_aoi(scenario).prior == 0.8
    with pytest.raises(ConfigError):
        Settings.from_env({"MZSM_DEFAULT_PRIOR": "1.5"})
