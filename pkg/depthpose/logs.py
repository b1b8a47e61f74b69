import logging
import sys
import time
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"

logger = logging.getLogger("depthpose.stage")


def setup_logging(level: str | int = "INFO", log_file: str | None = None):
    """Configure the package loggers once: stderr always, a rotating file if asked."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(RotatingFileHandler(log_file, maxBytes=1_000_000, backupCount=3))

    root = logging.getLogger("depthpose")
    for h in list(root.handlers):
        root.removeHandler(h)
    formatter = logging.Formatter(LOG_FORMAT)
    for h in handlers:
        h.setFormatter(formatter)
        root.addHandler(h)
    root.setLevel(level if isinstance(level, int) else level.upper())
    root.propagate = False
    return root


def format_fields(**fields) -> str:
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        parts.append(f"{key}={value}")
    return " ".join(parts)


@contextmanager
def stage(name: str, **fields):
    """
    Time a pipeline stage and emit one `stage=<name> elapsed_ms=... k=v` line.
    The yielded dict can be filled with extra fields while the stage runs.
    """
    extra: dict = {}
    start = time.perf_counter()
    try:
        yield extra
    finally:
        elapsed = (time.perf_counter() - start) * 1000.0
        logger.info(format_fields(stage=name, elapsed_ms=elapsed, **fields, **extra))
