import logging

from cross_layer_allocator.utils.logging import LogManager, LogSettings, log_execution


def test_settings_from_env(monkeypatch, tmp_path):
    monkeypatch.setenv("UWB_LOG_LEVEL", "debug")
    monkeypatch.setenv("UWB_LOG_FILE", str(tmp_path / "run.log"))
    monkeypatch.setenv("UWB_LOG_COLORS", "no")
    monkeypatch.setenv("UWB_SOLVER_LOG_LEVEL", "warning")
    settings = LogSettings.from_env()
    assert settings.level == logging.DEBUG
    assert settings.solver_level == logging.WARNING
    assert settings.log_file.endswith("run.log")
    assert settings.enable_colors is False


def test_settings_defaults(monkeypatch):
    for name in (
        "UWB_LOG_LEVEL",
        "UWB_SOLVER_LOG_LEVEL",
        "UWB_LOG_FILE",
        "UWB_LOG_COLORS",
    ):
        monkeypatch.delenv(name, raising=False)
    settings = LogSettings.from_env()
    assert settings.level == logging.INFO
    assert settings.solver_level is None
    assert settings.log_file is None
    assert settings.enable_colors is True

    monkeypatch.setenv("UWB_LOG_LEVEL", "chatty")
    assert LogSettings.from_env().level == logging.INFO


def test_log_execution_passes_results_and_errors():
    @log_execution
    def double(x):
        return 2 * x

    @log_execution(level=logging.DEBUG)
    def fail():
        raise RuntimeError("boom")

    assert double(4) == 8
    try:
        fail()
    except RuntimeError as e:
        assert str(e) == "boom"
    else:
        raise AssertionError("error was swallowed")


def test_force_reconfigures_root(tmp_path):
    log_file = tmp_path / "forced.log"
    LogManager.configure(LogSettings(log_file=str(log_file)), force=True)
    LogManager.get_logger("uwb.test").info("written")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert "written" in log_file.read_text()
    LogManager.configure(LogSettings(enable_colors=False), force=True)


def test_solver_level_applies_to_allocator_loggers():
    LogManager.configure(
        LogSettings(enable_colors=False, solver_level=logging.WARNING), force=True
    )
    solver = logging.getLogger("cross_layer_allocator.models.allocator")
    assert not solver.isEnabledFor(logging.INFO)
    assert logging.getLogger("cross_layer_allocator.config").isEnabledFor(
        logging.INFO
    )
    LogManager.configure(LogSettings(enable_colors=False), force=True)
    assert solver.isEnabledFor(logging.INFO)
