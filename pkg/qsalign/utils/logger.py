"""
Console logging with the bracketed status tags used across the project
([OK], [WARN], [ERROR], [DEBUG]).
"""
from __future__ import annotations

import logging
import os
import sys

try:
    from dotenv import load_dotenv
    load_dotenv()
except Exception:  # dotenv is optional at import time
    pass

_TAGS = {
    logging.DEBUG: "DEBUG",
    logging.INFO: "OK",
    logging.WARNING: "WARN",
    logging.ERROR: "ERROR",
    logging.CRITICAL: "ERROR",
}


class _TagFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        record.tag = _TAGS.get(record.levelno, record.levelname)
        return super().format(record)


_configured = False


def _configure_root() -> None:
    global _configured
    if _configured:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_TagFormatter("[%(tag)s] %(name)s: %(message)s"))
    root = logging.getLogger("qsalign")
    root.addHandler(handler)
    root.setLevel(os.getenv("QSALIGN_LOG_LEVEL", "INFO").upper())
    root.propagate = False
    _configured = True


def get_logger(name: str) -> logging.Logger:
    """Return a child of the ``qsalign`` logger, configuring it on first use."""
    _configure_root()
    if not name.startswith("qsalign"):
        name = f"qsalign.{name}"
    return logging.getLogger(name)


def set_level(level: str) -> None:
    _configure_root()
    logging.getLogger("qsalign").setLevel(level.upper())
