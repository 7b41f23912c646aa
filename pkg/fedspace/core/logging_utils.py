"""Logging setup shared by the CLI and library entry points."""

import logging
import sys
from typing import TextIO

from fedspace.core.errors import ConfigError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVELS = {"debug", "info", "warning", "error"}


def configure_logging(level: str = "info", stream: TextIO | None = None) -> None:
    """Install a single stderr handler on the ``fedspace`` logger.

    Args:
        level: One of debug/info/warning/error
        stream: Output stream (default: stderr; stdout is reserved for CLI output)

    Raises:
        ConfigError: If level is not a known level name
    """
    if level.lower() not in LOG_LEVELS:
        raise ConfigError(f"Invalid log_level: {level}. Must be one of: {', '.join(sorted(LOG_LEVELS))}")

    root = logging.getLogger("fedspace")
    for handler in list(root.handlers):
        root.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level.upper()))
    root.propagate = False
