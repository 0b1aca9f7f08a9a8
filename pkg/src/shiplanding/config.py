"""Scenario configuration (TOML) with embedded defaults and cache keys."""

import copy
import hashlib
import json
import math
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1
DEFAULT_PATH = Path(__file__).with_name("data") / "default.toml"
CACHE_ENV = "SHMPC_CACHE_DIR"


class ConfigError(ValueError):
    pass


def _merge(base, over, path=""):
    for key, val in over.items():
        where = f"{path}.{key}" if path else key
        if key not in base and not where.startswith("maneuvers"):
            raise ConfigError(f"unknown configuration key '{where}'")
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _merge(base[key], val, where)
        else:
            base[key] = val
    return base


def defaults():
    with open(DEFAULT_PATH, "rb") as fh:
        return tomllib.load(fh)


def load(path=None, overrides=None):
    """Defaults merged with the file at ``path`` and an optional override dict."""
    cfg = defaults()
    if path is not None:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
        version = user.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
        _merge(cfg, user)
    if overrides:
        _merge(cfg, copy.deepcopy(overrides))
    validate(cfg)
    return cfg


def validate(cfg):
    m = cfg["mpc"]
    if not 1 <= m["Nbar"] <= m["N0"]:
        raise ConfigError("need 1 <= Nbar <= N0")
    if cfg["touchdown"]["N_TD"] < 0:
        raise ConfigError("N_TD must be non-negative")
    if cfg["model"]["sample_time"] <= 0:
        raise ConfigError("sample_time must be positive")
    if any(v < 0 for v in cfg["disturbance"]["dv_box"]):
        raise ConfigError("dv_box half-widths must be non-negative")
    for tag, man in cfg["maneuvers"].items():
        if len(man.get("start", [])) != 3:
            raise ConfigError(f"maneuver {tag}: start must have three entries")


def wind_dbar(cfg):
    """Constant disturbance in the ship-relative frame.

    Wind drag ``D * w`` minus the drag of moving along with the ship. The wind
    blowing from ``wind_from_deg`` points towards ``wind_from_deg + 180``.
    """
    d = cfg["disturbance"]
    drag = cfg["model"]["drag"]
    ang = math.radians(d["wind_from_deg"] + 180.0)
    w = (d["wind_speed"] * math.cos(ang), d["wind_speed"] * math.sin(ang))
    ship = cfg["ship"]["speed"]
    return (drag[0] * w[0] - drag[0] * ship, drag[1] * w[1], d["dbar_vertical"])


def absolute_dbar(cfg):
    """Constant disturbance acting on the plant in the ground frame."""
    rel = wind_dbar(cfg)
    drag = cfg["model"]["drag"]
    return (rel[0] + drag[0] * cfg["ship"]["speed"], rel[1], rel[2])


def section_hash(cfg, *sections):
    blob = json.dumps({s: cfg[s] for s in sections}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cache_dir(default=None):
    root = os.environ.get(CACHE_ENV)
    if root:
        path = Path(root)
    elif default is not None:
        path = Path(default)
    else:
        path = Path.home() / ".cache" / "shiplanding"
    path.mkdir(parents=True, exist_ok=True)
    return path
