# ragsched/logging_setup.py
import os
import sys
import logging
import logging.handlers
from pathlib import Path
from typing import Optional

# Default log level from environment (diagnostics only, never results)
DEFAULT_LOG_LEVEL = os.getenv("RAGSCHED_LOG_LEVEL", "WARNING").upper()


class ColoredFormatter(logging.Formatter):
    """Colored log formatter for console output"""

    COLORS = {
        'DEBUG': '\033[36m',    # Cyan
        'INFO': '\033[32m',     # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',    # Red
        'CRITICAL': '\033[35m', # Magenta
        'RESET': '\033[0m'      # Reset
    }

    def format(self, record):
        # Work on a copy so file handlers never see the escape codes
        record = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, '')
        if color:
            record.levelname = f"{color}{record.levelname}{self.COLORS['RESET']}"
        return super().format(record)


def setup_logging(name: str = "ragsched", level: Optional[str] = None,
                  log_dir: Optional[Path] = None) -> logging.Logger:
    """Setup centralized logging configuration for the ragsched logger tree"""

    log_level = (level or DEFAULT_LOG_LEVEL).upper()
    numeric_level = getattr(logging, log_level, logging.WARNING)

    logger = logging.getLogger(name)
    logger.setLevel(numeric_level)

    # Avoid duplicate handlers; a second call only adjusts the level
    if logger.handlers:
        for handler in logger.handlers:
            if isinstance(handler, logging.StreamHandler) and not isinstance(
                    handler, logging.handlers.RotatingFileHandler):
                handler.setLevel(numeric_level)
                handler.setStream(sys.stderr)
        return logger

    # Console handler on stderr: stdout carries reports that must stay byte-stable
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(numeric_level)
    fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    if sys.stderr.isatty():
        console_handler.setFormatter(ColoredFormatter(fmt, datefmt="%Y-%m-%d %H:%M:%S"))
    else:
        console_handler.setFormatter(logging.Formatter(fmt, datefmt="%Y-%m-%d %H:%M:%S"))
    logger.addHandler(console_handler)

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_dir / f"{name}.log",
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)  # Always log all levels to file
        file_handler.setFormatter(logging.Formatter(
            "%(asctime)s [%(levelname)s] %(name)s:%(lineno)d: %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        ))
        logger.addHandler(file_handler)
        # File gets DEBUG, so the logger itself must pass it through
        logger.setLevel(logging.DEBUG)

    logger.propagate = False
    return logger


def log_run_info(logger: logging.Logger, command: str, seed: Optional[int] = None):
    """Log basic information about a CLI invocation"""
    from ragsched import __version__
    logger.info(f"ragsched v{__version__}: {command}")
    logger.info(f"Python version: {sys.version.split()[0]}")
    if seed is not None:
        logger.info(f"Seed: {seed}")
