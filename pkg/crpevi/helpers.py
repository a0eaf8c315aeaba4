"""Helpers for logger setup, seed mixing and number formatting in crpevi"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from collections.abc import Mapping
from logging.handlers import RotatingFileHandler
from typing import Any

import numpy as np

from .const import REAL_FORMAT

_LOGGER = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
SEED_GOLDEN = 0x9E3779B97F4A7C15
SEED_MIX_1 = 0xBF58476D1CE4E5B9
SEED_MIX_2 = 0x94D049BB133111EB

# ─────────────────────────────────────────────
# SECTION LOGGER SETUP
# ─────────────────────────────────────────────


def setup_logger(
    name: str,
    log_path: str,
    level: str = "INFO",
    max_bytes: int = 2 * 1024 * 1024,
    backup_count: int = 2,
    reset_on_start: bool = True,
) -> logging.Logger:
    if reset_on_start and os.path.exists(log_path):
        clear_log_file(log_path)

    logger = logging.getLogger(name)
    numeric_level = getattr(logging, level.upper(), logging.WARNING)
    logger.setLevel(numeric_level)

    handler = RotatingFileHandler(log_path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8")
    handler.setLevel(numeric_level)
    formatter = logging.Formatter(
        "%(asctime)s.%(msecs)03d %(levelname)s [%(name)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
    )
    handler.setFormatter(formatter)

    # Drop old handlers on the same file
    abs_path = os.path.abspath(log_path)
    for h in list(logger.handlers):
        if isinstance(h, RotatingFileHandler) and h.baseFilename == abs_path:
            logger.removeHandler(h)
            h.close()
    logger.addHandler(handler)

    logger.debug("Logger initialized at level %s", level.upper())
    return logger


def clear_log_file(log_path: str) -> None:
    if os.path.exists(log_path):
        try:
            with open(log_path, "w", encoding="utf-8") as f:
                f.write("")
        except OSError as e:
            _LOGGER.warning("Failed to clear log file %s: %s", log_path, e)


# ─────────────────────────────────────────────
# SECTION SEEDS
# ─────────────────────────────────────────────


def derive_seed(master_seed: int, cell_id: int) -> int:
    """Mix (master_seed, cell_id) into a 64-bit seed with the splitmix64 finalizer.

    z = master_seed * 0x9E3779B97F4A7C15 + cell_id + 1 (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    seed = z ^ (z >> 31)

    The finalizer is a bijection on 64-bit words, so distinct cell ids give
    distinct seeds for a fixed master seed.
    """
    z = (master_seed * SEED_GOLDEN + cell_id + 1) & _MASK64
    z = ((z ^ (z >> 30)) * SEED_MIX_1) & _MASK64
    z = ((z ^ (z >> 27)) * SEED_MIX_2) & _MASK64
    return z ^ (z >> 31)


# ─────────────────────────────────────────────
# SECTION SERIALIZATION
# ─────────────────────────────────────────────


def format_real(value: float) -> str:
    """17 significant digits, enough to round-trip any double."""
    value = float(value)
    if math.isnan(value):
        return "NaN"
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    return format(value, REAL_FORMAT)


def dumps(obj: Any) -> str:
    """Compact JSON with insertion-ordered keys and 17-digit reals."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_real(obj)
    if isinstance(obj, str):
        return _dump_str(obj)
    if isinstance(obj, Mapping):
        return "{" + ",".join(f"{_dump_str(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return dumps(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    raise TypeError(f"Cannot serialize {type(obj).__name__}")


def _dump_str(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
