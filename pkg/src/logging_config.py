"""Logging setup shared by the CLI and the scripts.

Console lines go to stderr so result tables on stdout stay clean.  Every
record carries a ``context`` field ("coordinator", "silo:state_a", ...) so
logs collected from several silos can be told apart after the fact.
"""

import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

CONSOLE_FORMAT = "%(asctime)s | %(levelname)-8s | %(context)-16s | %(name)-24s | %(message)s"
FILE_FORMAT = (
    "%(asctime)s | %(levelname)-8s | %(context)s | %(name)s | %(funcName)s:%(lineno)d | %(message)s"
)


class RunContextFilter(logging.Filter):
    """Stamps each record with the current run context."""

    def __init__(self, context: str = "-") -> None:
        super().__init__()
        self.context = context

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "context"):
            record.context = self.context
        return True


_context_filter = RunContextFilter()


def set_log_context(context: str) -> None:
    """Label subsequent log lines, e.g. ``set_log_context("silo:state_a")``."""
    _context_filter.context = context or "-"


def setup_logging(
    level: str = "INFO",
    log_file: str | None = None,
    enable_console: bool = True,
    context: str = "-",
) -> None:
    """Configure the root logger.

    Args:
        level: DEBUG, INFO, WARNING or ERROR.
        log_file: Rotating log file path; ``None`` means no file output.
        enable_console: If ``False``, no stderr handler is attached.
        context: Initial value of the ``context`` field.
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    root_logger.handlers.clear()
    set_log_context(context)

    if enable_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt="%H:%M:%S"))
        console_handler.addFilter(_context_filter)
        root_logger.addHandler(console_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            log_file, encoding="utf-8", maxBytes=50 * 1024 * 1024, backupCount=3
        )
        file_handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt="%Y-%m-%dT%H:%M:%S"))
        file_handler.addFilter(_context_filter)
        root_logger.addHandler(file_handler)

    logging.getLogger(__name__).debug(
        "Logging initialized: level=%s, file=%s, console=%s, context=%s",
        level, log_file or "none", enable_console, _context_filter.context,
    )
