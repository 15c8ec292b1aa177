"""Reads the TOML settings file into plain nested mappings."""
from __future__ import annotations

import logging
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport with the same API
    import tomli as tomllib
from pathlib import Path
from typing import Any, Mapping

_LOGGER = logging.getLogger(__name__)


def load_settings(path: Path) -> dict[str, dict[str, Any]]:
    """Return the sections of *path*; a missing or malformed file yields ``{}``."""
    if not path.exists():
        _LOGGER.debug("Settings file %s missing; using defaults", path)
        return {}
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        _LOGGER.warning("Could not read %s: %s", path, exc)
        return {}

    result: dict[str, dict[str, Any]] = {}
    for name, section in data.items():
        if isinstance(section, dict):
            result[name] = section
        else:
            _LOGGER.warning("Ignoring top-level key '%s' in %s; settings live in sections", name, path)
    return result


def get_section(settings: Mapping[str, Mapping[str, Any]], name: str) -> Mapping[str, Any]:
    """Return a section mapping, defaulting to an empty dict when missing."""
    return settings.get(name, {})
