"""
Test settings loading from the environment.
"""

import logging

from app.config import configure_logging, get_settings


def test_defaults(monkeypatch):
    for name in ("MXSIM_LOG_LEVEL", "MXSIM_SEED", "MXSIM_TRAIN_ENGINE", "MXSIM_FREQ_MHZ", "API_PORT", "API_RELOAD", "API_MAX_JOBS"):
        monkeypatch.delenv(name, raising=False)
    settings = get_settings()
    assert settings.log_level == "INFO"
    assert settings.seed == 0
    assert settings.train_engine == "vectorized"
    assert settings.freq_mhz == 500
    assert settings.api_port == 8000
    assert settings.api_reload is False
    assert settings.max_jobs == 200


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("MXSIM_LOG_LEVEL", "debug")
    monkeypatch.setenv("MXSIM_SEED", "42")
    monkeypatch.setenv("MXSIM_TRAIN_ENGINE", "DATAPATH")
    monkeypatch.setenv("API_RELOAD", "true")
    settings = get_settings()
    assert settings.log_level == "DEBUG"
    assert settings.seed == 42
    assert settings.train_engine == "datapath"
    assert settings.api_reload is True


def test_configure_logging_sets_level():
    configure_logging("warning")
    assert logging.getLogger().level == logging.WARNING
    configure_logging("INFO")
    assert logging.getLogger().level == logging.INFO
