"""
Logger Utility
Provides a centralized, configurable logger for the CovariantTCL package.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

PACKAGE_PREFIX = "CovariantTCL"
_console_level = logging.INFO


def setup_logger(name: str, level: int = logging.DEBUG):
    """
    Set up a logger with console and file handlers.

    Args:
        name (str): The name of the logger, usually __name__.
        level (int): The minimum logging level.

    Returns:
        logging.Logger: A configured logger instance.
    """
    # Create logs directory if it doesn't exist
    log_dir = Path(os.getenv("TCL_LOG_DIR", "logs"))
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / "covariant_tcl.log"

    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    # Prevent duplicate handlers
    if logger.hasHandlers():
        logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - [%(funcName)s:%(lineno)d] - %(message)s'
    )

    # Console Handler
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(_console_level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    # File Handler (Rotating)
    file_handler = RotatingFileHandler(
        log_file, maxBytes=5 * 1024 * 1024, backupCount=3
    )
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    return logger


def set_quiet(quiet: bool):
    """Raise (or restore) the console threshold of every project logger."""
    global _console_level
    _console_level = logging.WARNING if quiet else logging.INFO

    for name, candidate in logging.Logger.manager.loggerDict.items():
        if not isinstance(candidate, logging.Logger):
            continue
        if not (name.startswith(PACKAGE_PREFIX) or name in ("run_summary", "__main__")):
            continue
        for handler in candidate.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, RotatingFileHandler):
                handler.setLevel(_console_level)


def log_run_summary(subcommand: str, summary: dict):
    """Log the outcome of one CLI run."""
    run_logger = setup_logger("run_summary")
    fields = ", ".join(f"{key}={value}" for key, value in summary.items())
    run_logger.info(f"{subcommand} finished: {fields}")
