import logging

import pytest

from linmarg import config
from linmarg.config import env_flag, get_settings, resolve_threads


@pytest.fixture(autouse=True)
def clean_env(monkeypatch, mocker):
    for name in ("LINMARG_THREADS", "LINMARG_LOG_LEVEL", "LINMARG_SEED", "LINMARG_DEBUG"):
        monkeypatch.delenv(name, raising=False)
    # .env рядом с тестами не должен влиять на результат
    mocker.patch.object(config, "load_dotenv")


def test_defaults(mocker):
    mocker.patch("psutil.cpu_count", return_value=6)
    settings = get_settings()
    assert settings.threads == 6
    assert settings.log_level == "INFO"
    assert settings.seed == 0


def test_explicit_threads_skip_psutil(mocker):
    cpu_count = mocker.patch("psutil.cpu_count", return_value=6)
    assert resolve_threads(3) == 3
    cpu_count.assert_not_called()


def test_psutil_failure_falls_back_to_os(mocker):
    mocker.patch("psutil.cpu_count", side_effect=RuntimeError("no /proc"))
    mocker.patch("os.cpu_count", return_value=2)
    assert resolve_threads(0) == 2


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("LINMARG_THREADS", "4")
    monkeypatch.setenv("LINMARG_LOG_LEVEL", "warning")
    monkeypatch.setenv("LINMARG_SEED", "123")
    settings = get_settings()
    assert (settings.threads, settings.log_level, settings.seed) == (4, "WARNING", 123)


def test_debug_flag_wins(monkeypatch):
    monkeypatch.setenv("LINMARG_LOG_LEVEL", "ERROR")
    monkeypatch.setenv("LINMARG_DEBUG", "yes")
    assert get_settings().log_level == "DEBUG"


@pytest.mark.parametrize("raw", ["many", "-2"])
def test_bad_integers_fall_back(monkeypatch, raw, caplog):
    caplog.set_level(logging.WARNING)
    monkeypatch.setenv("LINMARG_SEED", raw)
    assert get_settings().seed == 0
    assert "LINMARG_SEED" in caplog.text


def test_unknown_log_level(monkeypatch):
    monkeypatch.setenv("LINMARG_LOG_LEVEL", "loud")
    assert get_settings().log_level == "INFO"


@pytest.mark.parametrize("raw,expected", [("1", True), ("On", True), ("0", False), ("", False)])
def test_env_flag(monkeypatch, raw, expected):
    monkeypatch.setenv("LINMARG_DEBUG", raw)
    assert env_flag("LINMARG_DEBUG") is expected
