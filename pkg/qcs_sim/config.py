"""
Configuration: environment defaults, JSON config files and logging setup.

Precedence is command-line flag, then config file, then environment, then the
built-in default.
"""

import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from qcs_sim.errors import ConfigError

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

DEFAULT_OUTPUT_DIR = os.path.join("data", "runs")


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults read from the environment."""

    log_level: str = "INFO"
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    workers: int = 1


def load_settings(environ: Optional[Mapping[str, str]] = None) -> Settings:
    """
    Read QCS_LOG_LEVEL, QCS_SEED, QCS_OUTPUT_DIR and QCS_WORKERS.

    Raises:
        ConfigError: If a variable is set to an unusable value
    """
    env = os.environ if environ is None else environ
    log_level = env.get("QCS_LOG_LEVEL", "INFO").upper()
    if log_level not in LOG_LEVELS:
        raise ConfigError(f"QCS_LOG_LEVEL must be one of {LOG_LEVELS}, got {log_level!r}")
    try:
        seed = int(env.get("QCS_SEED", "0"))
        workers = int(env.get("QCS_WORKERS", "1"))
    except ValueError as e:
        raise ConfigError(f"Invalid integer in environment: {str(e)}")
    if seed < 0:
        raise ConfigError(f"QCS_SEED must be non-negative, got {seed}")
    if workers < 1:
        raise ConfigError(f"QCS_WORKERS must be >= 1, got {workers}")
    return Settings(
        log_level=log_level,
        seed=seed,
        output_dir=env.get("QCS_OUTPUT_DIR", DEFAULT_OUTPUT_DIR),
        workers=workers,
    )


def configure_logging(level: str = "INFO") -> None:
    level = level.upper()
    if level not in LOG_LEVELS:
        raise ConfigError(f"Log level must be one of {LOG_LEVELS}, got {level!r}")
    logging.basicConfig(
        level=getattr(logging, level),
        format=LOG_FORMAT,
        handlers=[logging.StreamHandler(sys.stdout)],
        force=True,
    )


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Load a flat JSON object of kebab-case keys.

    Raises:
        ConfigError: If the file is missing, unparsable or not an object
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {str(e)}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a JSON object")
    return data


@dataclass(frozen=True)
class Param:
    """
    One configurable value.

    Attributes:
        key: Kebab-case name shared by the flag and the config file
        parse: Converts a flag string or file value
        default: Used when neither flag nor file sets the value
        help: Flag help text
    """

    key: str
    parse: Callable[[Any], Any]
    default: Any = None
    help: str = ""

    @property
    def dest(self) -> str:
        return self.key.replace("-", "_")


def parse_float_list(value: Any) -> List[float]:
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    if isinstance(value, (int, float)):
        return [float(value)]
    items = [v.strip() for v in str(value).split(",") if v.strip()]
    if not items:
        raise ValueError("empty list")
    return [float(v) for v in items]


def parse_count(value: Any) -> int:
    """Integer count that also accepts 1e5-style notation."""
    number = float(value)
    if number != int(number):
        raise ValueError(f"{value!r} is not a whole number")
    return int(number)


def parse_count_list(value: Any) -> List[int]:
    return [parse_count(v) for v in parse_float_list(value)]


def parse_frame(value: Any) -> List[float]:
    angles = parse_float_list(value)
    if len(angles) != 2:
        raise ValueError(f"a frame needs two angles, got {len(angles)}")
    return angles


def parse_rounds(value: Any):
    if str(value).strip().lower() == "auto":
        return "auto"
    return parse_count(value)


def choice(*options: str) -> Callable[[Any], str]:
    def parse(value: Any) -> str:
        text = str(value)
        if text not in options:
            raise ValueError(f"must be one of {options}")
        return text

    return parse


def resolve_params(params: Sequence[Param], flags: Mapping[str, Any],
                   file_values: Optional[Mapping[str, Any]] = None,
                   env_defaults: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
    """
    Merge flag, file, environment and default values, keyed by kebab-case name.

    Raises:
        ConfigError: On unknown file keys or values that fail to parse
    """
    file_values = dict(file_values or {})
    env_defaults = dict(env_defaults or {})
    known = {p.key for p in params}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")

    resolved = {}
    for p in params:
        raw = flags.get(p.dest)
        if raw is None:
            raw = file_values.get(p.key)
        if raw is None:
            raw = env_defaults.get(p.key, p.default)
        if raw is None:
            resolved[p.key] = None
            continue
        try:
            resolved[p.key] = p.parse(raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value for {p.key}: {raw!r} ({str(e)})")
    return resolved
