import os
import logging
from dataclasses import fields, replace
from typing import Any, Dict, Mapping, Optional, Set

from dotenv import load_dotenv, dotenv_values

from errors import ConfigError

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

# Storage
DATA_DIR = os.environ.get("MMHAR_DATA_DIR", os.path.join(os.getcwd(), "data"))

# Logging
LOG_LEVEL = os.environ.get("MMHAR_LOG_LEVEL", "INFO")

# Reproducibility
DEFAULT_SEED = int(os.environ.get("MMHAR_SEED", 42))

# Feature flags
DEBUG_NUMERICS = os.environ.get("MMHAR_DEBUG_NUMERICS", "0").lower() in ("1", "true", "yes")

# Alignment size defaults per data profile
ALIGNMENT_SIZE_MMACT = 25  # 30 Hz, at most 25 points per frame
ALIGNMENT_SIZE_DISC = 64   # 10 Hz, at most 64 points per frame

# Sliding window defaults (seconds)
WINDOW_SECONDS = 2.0
STRIDE_SECONDS = 0.33

# Blank gate threshold
TAU_BLANK = 0.5

# Activity classes, in class-id order. The blank label is written as "eps"
# and takes class id len(ACTIVITY_NAMES) wherever an integer is needed.
ACTIVITY_NAMES = ("walking", "falling", "standing", "rising", "lying")
BLANK_NAME = "eps"


def load_config_file(path: Optional[str]) -> Dict[str, str]:
    """
    Read a key=value configuration file.

    The format is the same one python-dotenv understands: one ``key=value``
    per line, ``#`` comments, optional quotes. Keys are lower-cased.

    Args:
        path: Path to the file, or None for an empty configuration

    Returns:
        Mapping of key to raw string value
    """
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")

    values = dotenv_values(path)
    result = {}
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"config key without value in {path}: {key}")
        result[key.strip().lower()] = value.strip()

    logger.info(f"Loaded {len(result)} config keys from {path}")
    return result


def coerce(raw: str, kind: type, key: str):
    """Convert a raw config string to ``kind`` or raise ConfigError naming the key."""
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is tuple:
            return tuple(int(part) for part in raw.replace(" ", "").split(",") if part)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}")


def apply_mapping(base, values: Mapping[str, Any]):
    """
    Copy of the dataclass instance ``base`` with fields taken from ``values``.

    Values may be raw config-file strings or already-typed JSON values; keys
    that are not fields of ``base`` are ignored.
    """
    updates = {}
    for item in fields(base):
        if item.name not in values:
            continue
        raw = values[item.name]
        default = getattr(base, item.name)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()] if isinstance(raw, str) else list(raw)
            kind = type(default[0]) if default else str
            try:
                updates[item.name] = tuple(kind(part) for part in parts)
            except ValueError:
                raise ConfigError(f"invalid value for {item.name}: {raw!r}")
        elif isinstance(raw, str) and not isinstance(default, str):
            updates[item.name] = coerce(raw, type(default), item.name)
        elif default is None or isinstance(raw, type(default)):
            updates[item.name] = raw
        else:
            try:
                updates[item.name] = type(default)(raw)
            except (TypeError, ValueError):
                raise ConfigError(f"invalid value for {item.name}: {raw!r}")
    return replace(base, **updates)


def field_names(*classes) -> Set[str]:
    """All dataclass field names across ``classes``; used to reject unknown config keys."""
    return {item.name for cls in classes for item in fields(cls)}
