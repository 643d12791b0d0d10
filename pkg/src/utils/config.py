"""
Loading of configuration files and the defaults shipped in src/data
"""
import logging
import os
from typing import Dict

import json5

logger = logging.getLogger(__name__)

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'data')
METHOD_GRIDS_FILE = 'method_grids.json'
TOY_DEFAULTS_FILE = 'toy_defaults.json'
EXAMPLE_TOY_CONFIG_FILE = 'example_toy_config.json'


class ConfigError(ValueError):
    """Configuration file missing, unparsable, or holding unknown keys"""


def data_path(name: str) -> str:
    return os.path.join(DATA_DIR, name)


def load_config_file(path: str) -> Dict:
    """Parse a JSON/JSON5 file into a dict"""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, 'r') as f:
            data = json5.load(f)
    except ValueError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object, got {type(data).__name__}")
    logger.debug(f"Loaded config {path}")
    return data


def load_method_grids(path: str = None) -> Dict:
    return load_config_file(path or data_path(METHOD_GRIDS_FILE))


def load_toy_defaults(path: str = None) -> Dict:
    return load_config_file(path or data_path(TOY_DEFAULTS_FILE))


def reject_unknown(data: Dict, allowed, where: str):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}; allowed: {sorted(allowed)}")
