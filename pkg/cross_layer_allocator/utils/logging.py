"""Logging setup shared by the CLI, the simulation harness and the solvers."""

import functools
import logging
import os
import sys
import time
from dataclasses import dataclass
from logging.handlers import RotatingFileHandler
from typing import Any, Callable, Dict, Optional

# ANSI color codes per level name
LEVEL_COLORS = {
    "DEBUG": "\033[94m",
    "INFO": "\033[92m",
    "WARNING": "\033[93m",
    "ERROR": "\033[91m",
    "CRITICAL": "\033[1;91m",
}
RESET = "\033[0m"

# Loggers of the outer and inner allocation loops
SOLVER_LOGGERS = ("cross_layer_allocator.models",)
QUIET_LOGGERS = ("joblib", "numexpr", "matplotlib")

_TRUTHY = {"1", "true", "yes", "on"}


def _parse_level(name: Optional[str], default: Optional[int]) -> Optional[int]:
    if not name:
        return default
    level = logging.getLevelName(name.upper())
    return level if isinstance(level, int) else default


@dataclass
class LogSettings:
    """
    Logging options.

    Attributes:
        level (int): Root level.
        solver_level (int | None): Level of the allocator loggers; ``None``
            inherits the root level. Per-iteration solver traces are DEBUG.
        enable_colors (bool): Color level names on an interactive console.
        log_file (str | None): Rotating log file, off when ``None``.
    """

    level: int = logging.INFO
    solver_level: Optional[int] = None
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    date_format: str = "%Y-%m-%d %H:%M:%S"
    enable_colors: bool = True
    log_file: Optional[str] = None
    max_file_size: int = 10 * 1024 * 1024
    backup_count: int = 5

    @classmethod
    def from_env(cls) -> "LogSettings":
        """
        Read ``UWB_LOG_LEVEL``, ``UWB_SOLVER_LOG_LEVEL``, ``UWB_LOG_FILE`` and
        ``UWB_LOG_COLORS``.

        Call ``dotenv.load_dotenv()`` first so a local ``.env`` file is
        honoured.
        """
        return cls(
            level=_parse_level(os.getenv("UWB_LOG_LEVEL"), logging.INFO),
            solver_level=_parse_level(os.getenv("UWB_SOLVER_LOG_LEVEL"), None),
            log_file=os.getenv("UWB_LOG_FILE") or None,
            enable_colors=os.getenv("UWB_LOG_COLORS", "1").lower() in _TRUTHY,
        )


class ColoredFormatter(logging.Formatter):
    """Formatter that wraps the level name in its ANSI color."""

    def __init__(
        self, fmt: str, datefmt: str, colors: Dict[str, str] = LEVEL_COLORS
    ):
        super().__init__(fmt, datefmt)
        self.colors = colors

    def format(self, record: logging.LogRecord) -> str:
        color = self.colors.get(record.levelname)
        if not color:
            return super().format(record)
        # Copy so file handlers sharing the record see the plain name
        record = logging.makeLogRecord(record.__dict__)
        record.levelname = f"{color}{record.levelname}{RESET}"
        return super().format(record)


def _console_handler(settings: LogSettings) -> logging.Handler:
    handler = logging.StreamHandler()
    colored = settings.enable_colors and getattr(sys.stderr, "isatty", bool)()
    if colored:
        handler.setFormatter(ColoredFormatter(settings.format, settings.date_format))
    else:
        handler.setFormatter(logging.Formatter(settings.format, settings.date_format))
    return handler


def _file_handler(settings: LogSettings) -> logging.Handler:
    handler = RotatingFileHandler(
        settings.log_file,
        maxBytes=settings.max_file_size,
        backupCount=settings.backup_count,
        encoding="utf-8",
    )
    handler.setFormatter(logging.Formatter(settings.format, settings.date_format))
    return handler


class LogManager:
    """Process-wide logging configuration."""

    _configured: bool = False

    @classmethod
    def configure(
        cls, settings: Optional[LogSettings] = None, force: bool = False
    ) -> None:
        """
        Install the console and file handlers on the root logger.

        Later calls are ignored unless ``force`` replaces the root handlers.
        """
        if cls._configured and not force:
            return

        settings = settings or LogSettings()
        handlers = [_console_handler(settings)]
        if settings.log_file:
            handlers.append(_file_handler(settings))
        logging.basicConfig(level=settings.level, handlers=handlers, force=force)

        for name in SOLVER_LOGGERS:
            logging.getLogger(name).setLevel(settings.solver_level or logging.NOTSET)
        for name in QUIET_LOGGERS:
            logging.getLogger(name).setLevel(logging.WARNING)
        cls._configured = True

    @classmethod
    def set_level(cls, level: int) -> None:
        """Change the root level after configuration (CLI verbosity)."""
        logging.getLogger().setLevel(level)

    @classmethod
    def get_logger(cls, name: str) -> logging.Logger:
        if not cls._configured:
            cls.configure()
        return logging.getLogger(name)


def log_execution(
    func: Optional[Callable[..., Any]] = None, *, level: int = logging.INFO
) -> Any:
    """
    Log entry, exit and wall time of a call; failures are logged with the
    traceback and re-raised.

    Usable bare (``@log_execution``) or with a level
    (``@log_execution(level=logging.DEBUG)``).
    """

    def decorate(fn: Callable[..., Any]) -> Callable[..., Any]:
        @functools.wraps(fn)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            logger = LogManager.get_logger(fn.__module__)
            start = time.perf_counter()
            logger.log(level, f"Entering {fn.__qualname__}")
            try:
                result = fn(*args, **kwargs)
            except Exception as e:
                logger.error(
                    f"{fn.__qualname__} failed after "
                    f"{time.perf_counter() - start:.3f}s: {e}",
                    exc_info=True,
                )
                raise
            logger.log(
                level, f"{fn.__qualname__} done in {time.perf_counter() - start:.3f}s"
            )
            return result

        return wrapper

    return decorate(func) if func is not None else decorate
