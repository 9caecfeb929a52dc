# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Experiment configuration files, flag overrides and the config hash."""
# -------------------------------------------
import configparser
import hashlib
import logging
from pathlib import Path
from typing import Any, Mapping, Optional

import orjson
from pydantic import ValidationError as PydanticValidationError

from app.schemas.experiment import ExperimentConfig
from app.utils.validation import ValidationError

logger = logging.getLogger(__name__)

SECTIONS = ("problem", "numerics", "solver", "dual", "output")

# Keys of the [dual] section are read without their field prefix.
_PREFIXED = {"dual": "dual_"}


def read_config_file(path: str | Path) -> dict[str, str]:
    """Flatten the ``key = value`` pairs of an INI file with the known sections."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as e:
        raise ValidationError(f"cannot read config file {path}: {e}") from e
    except configparser.Error as e:
        raise ValidationError(f"malformed config file {path}: {e}") from e

    values: dict[str, str] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValidationError(f"unknown config section [{section}] in {path}")
        prefix = _PREFIXED.get(section, "")
        for key, value in parser.items(section):
            name = key.replace("-", "_")
            if prefix and not name.startswith(prefix):
                name = prefix + name
            if name in values:
                raise ValidationError(f"config key {name!r} given twice in {path}")
            values[name] = value
    return values


def build_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Validate file values with command-line overrides applied key by key."""
    merged: dict[str, Any] = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    if "total_mass" in merged:
        merged["lambda"] = merged.pop("total_mass")
    try:
        return ExperimentConfig.model_validate(merged)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid configuration: {e}") from e


def load_config(path: Optional[str | Path] = None, **overrides: Any) -> ExperimentConfig:
    file_values = read_config_file(path) if path else {}
    config = build_config(file_values, overrides)
    logger.debug(f"Loaded configuration {config_hash(config)[:12]} from {path or 'flags'}")
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the sorted-key JSON of the validated config."""
    payload = orjson.dumps(config.hashed_dump(), option=orjson.OPT_SORT_KEYS)
    return hashlib.sha256(payload).hexdigest()
